//! Estimation of the physical coefficients from paired data.
//!
//! The loss is the mean absolute error between the synthesized image and the
//! real underwater target. Gradients are propagated by hand:
//!
//! ```text
//! dL/dI_con(x', y', m) = sum over (x, y, l, dy, dx) hitting (x', y') of dL/dI_sw(x, y, l) * theta(l, dy, dx, m)
//! dL/dbeta[l]  = sum dL/dI_con(., l) * (-I_a[l] * exp(-d beta[l]) * d)
//! dL/dalpha[l] = sum dL/dI_con(., l) * ( B[l] * exp(-d alpha[l]) * d)
//! dL/dB[l]     = sum dL/dI_con(., l) * (1 - exp(-d alpha[l]))
//! dL/dtheta(l, dy, dx, m) = sum dL/dI_sw(x, y, l) * I_con(x + dx, y + dy, m)
//! ```
//!
//! [`finite_diff_check`] compares these against central differences.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ensure_same_dims, load_depth, load_rgb, DepthMap, Field, RgbImage};
use crate::physics::{synthesize, ForwardState, PhysicalParams};

/// One training pair: in-air RGB-D input and the underwater target.
#[derive(Debug, Clone)]
pub struct Sample {
    pub rgb: RgbImage,
    pub depth: DepthMap,
    pub target: RgbImage,
    pub aux: Option<RgbImage>,
}

impl Sample {
    pub fn new(rgb: RgbImage, depth: DepthMap, target: RgbImage) -> Sample {
        Sample {
            rgb,
            depth,
            target,
            aux: None,
        }
    }

    fn check(&self) -> Result<()> {
        ensure_same_dims(self.rgb.dims(), self.depth.dims())?;
        ensure_same_dims(self.rgb.dims(), self.target.dims())?;
        if let Some(aux) = &self.aux {
            ensure_same_dims(self.rgb.dims(), aux.dims())?;
        }
        Ok(())
    }

    pub fn forward(&self, params: &PhysicalParams) -> Result<ForwardState> {
        ForwardState::new(&self.rgb, &self.depth, params, self.aux.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// First epoch of the linear decay towards zero.
    pub decay_start: usize,
    /// Weight of the adversarial term; kept for completeness, its gradient is zero.
    pub w1: f64,
    /// Weight of the reconstruction term.
    pub w2: f64,
    /// Drop the gradient of pixels clipped by the output clamp.
    pub saturation_mask: bool,
    /// Also update the fusion filter.
    pub learn_fusion: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            learning_rate: 2e-4,
            epochs: 200,
            decay_start: 100,
            w1: 0.0,
            w2: 1.0,
            saturation_mask: true,
            learn_fusion: false,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidParameter("epochs must be at least 1".into()));
        }
        if self.decay_start > self.epochs {
            return Err(Error::InvalidParameter(format!(
                "decay start {} is after the last epoch {}",
                self.decay_start, self.epochs
            )));
        }
        if !(self.w2.is_finite() && self.w1.is_finite()) {
            return Err(Error::InvalidParameter(
                "loss weights must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate at `epoch`: constant until `decay_start`, then linear
    /// towards zero at `epochs`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_start || self.decay_start >= self.epochs {
            self.learning_rate
        } else {
            let span = (self.epochs - self.decay_start) as f64;
            self.learning_rate * (self.epochs - epoch) as f64 / span
        }
    }
}

/// Mean absolute error and its gradient with respect to `i_sw`.
pub fn recon_loss(i_sw: &RgbImage, i_w: &RgbImage) -> Result<(f64, Field)> {
    ensure_same_dims(i_sw.dims(), i_w.dims())?;
    let n = i_sw.data().len() as f64;
    let sum: f64 = i_sw
        .data()
        .iter()
        .zip(i_w.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let grad = i_sw
        .as_field()
        .zip_with(i_w.as_field(), |a, b| sign(a - b) / n)?;
    Ok((sum / n, grad))
}

/// [`recon_loss`] on a forward pass, optionally zeroing the gradient where the
/// output clamp was active.
pub fn recon_loss_masked(
    state: &ForwardState,
    i_w: &RgbImage,
    saturation_mask: bool,
) -> Result<(f64, Field)> {
    let (loss, mut grad) = recon_loss(&state.output, i_w)?;
    if saturation_mask {
        for (i, g) in grad.data_mut().iter_mut().enumerate() {
            if state.saturated(i) {
                *g = 0.0;
            }
        }
    }
    Ok((loss, grad))
}

#[inline]
fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_grad_field(state: &ForwardState, dl_disw: &Field) -> Result<()> {
    ensure_same_dims(state.output.dims(), dl_disw.dims())?;
    if dl_disw.channels() != 3 {
        return Err(Error::DimensionMismatch {
            left: "3 channels".into(),
            right: format!("{} channels", dl_disw.channels()),
        });
    }
    Ok(())
}

/// Adjoint of the fusion filter: `dL/dI_con` from `dL/dI_sw`.
pub fn backprop_to_con(state: &ForwardState, dl_disw: &Field) -> Result<Field> {
    check_grad_field(state, dl_disw)?;
    let theta = &state.params.theta_f;
    let (w, h) = state.i_con.dims();
    let mut g_con = Field::zeros(w, h, theta.m());
    for y in 0..h {
        for x in 0..w {
            for l in 0..3 {
                let g = dl_disw.get(x, y, l);
                if g == 0.0 {
                    continue;
                }
                for dy in 0..theta.h() {
                    let yy = (y + dy).min(h - 1);
                    for dx in 0..theta.w() {
                        let xx = (x + dx).min(w - 1);
                        for m in 0..theta.m() {
                            let v = g_con.get(xx, yy, m) + g * theta.weight(l, dy, dx, m);
                            g_con.set(xx, yy, m, v);
                        }
                    }
                }
            }
        }
    }
    Ok(g_con)
}

/// Sums `g_con(., l) * local(x, y, l)` over pixels for each physical channel.
fn reduce_physical(
    state: &ForwardState,
    g_con: &Field,
    local: impl Fn(usize, usize, usize) -> f64,
) -> [f64; 3] {
    let (w, h) = state.i_a.dims();
    let mut out = [0.0; 3];
    for y in 0..h {
        for x in 0..w {
            for (l, acc) in out.iter_mut().enumerate() {
                *acc += g_con.get(x, y, l) * local(x, y, l);
            }
        }
    }
    out
}

fn beta_from_con(state: &ForwardState, g_con: &Field) -> [f64; 3] {
    reduce_physical(state, g_con, |x, y, l| {
        -state.i_a.get(x, y, l) * state.transmission.get(x, y, l) * state.i_d.get(x, y)
    })
}

fn alpha_from_con(state: &ForwardState, g_con: &Field) -> [f64; 3] {
    reduce_physical(state, g_con, |x, y, l| {
        state.params.big_b[l] * state.backscatter_decay.get(x, y, l) * state.i_d.get(x, y)
    })
}

fn bigb_from_con(state: &ForwardState, g_con: &Field) -> [f64; 3] {
    reduce_physical(state, g_con, |x, y, l| {
        1.0 - state.backscatter_decay.get(x, y, l)
    })
}

/// `dL/dbeta` per channel.
pub fn grad_beta(state: &ForwardState, dl_disw: &Field) -> Result<[f64; 3]> {
    Ok(beta_from_con(state, &backprop_to_con(state, dl_disw)?))
}

/// `dL/dalpha` per channel.
pub fn grad_alpha(state: &ForwardState, dl_disw: &Field) -> Result<[f64; 3]> {
    Ok(alpha_from_con(state, &backprop_to_con(state, dl_disw)?))
}

/// `dL/dB` per channel.
pub fn grad_bigb(state: &ForwardState, dl_disw: &Field) -> Result<[f64; 3]> {
    Ok(bigb_from_con(state, &backprop_to_con(state, dl_disw)?))
}

/// `dL/dtheta_f`, laid out like [`crate::physics::FusionFilter::weights`].
pub fn grad_theta_f(state: &ForwardState, dl_disw: &Field) -> Result<Vec<f64>> {
    check_grad_field(state, dl_disw)?;
    let theta = &state.params.theta_f;
    let (w, h) = state.i_con.dims();
    let mut out = vec![0.0; theta.weights().len()];
    for l in 0..3 {
        for dy in 0..theta.h() {
            for dx in 0..theta.w() {
                for m in 0..theta.m() {
                    let mut acc = 0.0;
                    for y in 0..h {
                        let yy = (y + dy).min(h - 1);
                        for x in 0..w {
                            let xx = (x + dx).min(w - 1);
                            acc += dl_disw.get(x, y, l) * state.i_con.get(xx, yy, m);
                        }
                    }
                    out[theta.index(l, dy, dx, m)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of the loss with respect to every fitted scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub beta: [f64; 3],
    pub alpha: [f64; 3],
    pub big_b: [f64; 3],
    pub theta_f: Vec<f64>,
}

impl Gradients {
    pub fn compute(state: &ForwardState, dl_disw: &Field) -> Result<Gradients> {
        let g_con = backprop_to_con(state, dl_disw)?;
        Ok(Gradients {
            beta: beta_from_con(state, &g_con),
            alpha: alpha_from_con(state, &g_con),
            big_b: bigb_from_con(state, &g_con),
            theta_f: grad_theta_f(state, dl_disw)?,
        })
    }

    fn zeros_like(params: &PhysicalParams) -> Gradients {
        Gradients {
            beta: [0.0; 3],
            alpha: [0.0; 3],
            big_b: [0.0; 3],
            theta_f: vec![0.0; params.theta_f.weights().len()],
        }
    }

    fn add_scaled(&mut self, other: &Gradients, s: f64) {
        for l in 0..3 {
            self.beta[l] += s * other.beta[l];
            self.alpha[l] += s * other.alpha[l];
            self.big_b[l] += s * other.big_b[l];
        }
        for (a, b) in self.theta_f.iter_mut().zip(&other.theta_f) {
            *a += s * b;
        }
    }

    /// `(name, value)` for every scalar, in a fixed order.
    pub fn named(&self) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(9 + self.theta_f.len());
        for (name, v) in [
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("B", self.big_b),
        ] {
            for (l, x) in v.iter().enumerate() {
                out.push((format!("{name}[{l}]"), *x));
            }
        }
        for (i, x) in self.theta_f.iter().enumerate() {
            out.push((format!("theta_f[{i}]"), *x));
        }
        out
    }
}

/// Loss and gradients of one sample at `params`.
pub fn loss_and_gradients(
    sample: &Sample,
    params: &PhysicalParams,
    cfg: &FitConfig,
) -> Result<(f64, Gradients)> {
    let state = sample.forward(params)?;
    let (loss, mut dl) = recon_loss_masked(&state, &sample.target, cfg.saturation_mask)?;
    // Only the reconstruction term feeds dL/dI_sw.
    for g in dl.data_mut() {
        *g *= cfg.w2;
    }
    Ok((cfg.w2 * loss, Gradients::compute(&state, &dl)?))
}

/// Loss of `sample` at `params`, as used by the finite-difference oracle.
pub fn loss_at(sample: &Sample, params: &PhysicalParams) -> Result<f64> {
    let out = synthesize(&sample.rgb, &sample.depth, params, sample.aux.as_ref())?;
    Ok(recon_loss(&out, &sample.target)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Analytic versus finite-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub entries: Vec<GradEntry>,
}

/// Default agreement threshold for [`GradReport::passed`].
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// `|a - f| / max(|a|, |f|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

impl GradReport {
    pub fn compare(analytic: &[(String, f64)], numeric: &[f64]) -> GradReport {
        assert_eq!(analytic.len(), numeric.len());
        GradReport {
            entries: analytic
                .iter()
                .zip(numeric)
                .map(|((name, a), &f)| GradEntry {
                    name: name.clone(),
                    analytic: *a,
                    numeric: f,
                    rel_error: relative_error(*a, f),
                })
                .collect(),
        }
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self, tol: f64) -> impl Iterator<Item = &GradEntry> {
        self.entries
            .iter()
            .filter(move |e| e.rel_error.partial_cmp(&tol) != Some(std::cmp::Ordering::Less))
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.failures(tol).next().is_none()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["parameter", "analytic", "numeric", "rel_error"])?;
        for e in &self.entries {
            w.write_record([
                e.name.clone(),
                e.analytic.to_string(),
                e.numeric.to_string(),
                e.rel_error.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

fn perturbed(params: &PhysicalParams, index: usize, delta: f64) -> PhysicalParams {
    let mut p = params.clone();
    match index {
        0..=2 => p.beta[index] += delta,
        3..=5 => p.alpha[index - 3] += delta,
        6..=8 => p.big_b[index - 6] += delta,
        i => p.theta_f.weights_mut()[i - 9] += delta,
    }
    p
}

/// Central differences `(L(p + h) - L(p - h)) / 2h` for every scalar of
/// `{beta, alpha, B, theta_f}`, compared with the analytic gradient.
///
/// Both perturbations go through the validated forward model, so every
/// parameter must sit at least `h` inside its feasible range.
pub fn finite_diff_check(sample: &Sample, params: &PhysicalParams, h: f64) -> Result<GradReport> {
    if !(1e-6..=1e-2).contains(&h) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step {h} outside [1e-6, 1e-2]"
        )));
    }
    sample.check()?;
    let cfg = FitConfig {
        saturation_mask: true,
        w2: 1.0,
        ..FitConfig::default()
    };
    let (_, grads) = loss_and_gradients(sample, params, &cfg)?;
    let analytic = grads.named();
    let numeric = (0..analytic.len())
        .map(|i| {
            let plus = loss_at(sample, &perturbed(params, i, h))?;
            let minus = loss_at(sample, &perturbed(params, i, -h))?;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GradReport::compare(&analytic, &numeric))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Per-epoch losses and the fitted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    pub epochs: Vec<EpochRecord>,
    /// Loss at the returned parameters.
    pub final_loss: f64,
    pub params: PhysicalParams,
}

impl LossTrace {
    /// `epoch,lr,loss` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.epochs {
            w.serialize(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

fn mean_loss_and_gradients(
    samples: &[Sample],
    params: &PhysicalParams,
    cfg: &FitConfig,
) -> Result<(f64, Gradients)> {
    // Per-sample passes run in parallel; the reduction is sequential in sample
    // order so results do not depend on the thread count.
    let per_sample: Vec<(f64, Gradients)> = samples
        .par_iter()
        .map(|s| loss_and_gradients(s, params, cfg))
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(params);
    for (l, g) in &per_sample {
        loss += l / n;
        grads.add_scaled(g, 1.0 / n);
    }
    Ok((loss, grads))
}

fn first_non_finite(named: &[(String, f64)]) -> Option<String> {
    named
        .iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n.clone())
}

fn param_values(p: &PhysicalParams) -> Vec<(String, f64)> {
    Gradients {
        beta: p.beta,
        alpha: p.alpha,
        big_b: p.big_b,
        theta_f: p.theta_f.weights().to_vec(),
    }
    .named()
}

/// Plain full-batch gradient descent with projection onto the feasible set.
///
/// Each epoch averages the per-sample gradients, takes one step with the
/// scheduled learning rate, then projects `beta, alpha >= 0` and `B` into
/// `[0, 1]`.
pub fn fit(samples: &[Sample], init: &PhysicalParams, cfg: &FitConfig) -> Result<LossTrace> {
    if samples.is_empty() {
        return Err(Error::Empty("fit needs at least one sample".into()));
    }
    cfg.validate()?;
    init.validate()?;
    for s in samples {
        s.check()?;
    }

    let mut params = init.clone();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let (loss, grads) = mean_loss_and_gradients(samples, &params, cfg)?;
        if !loss.is_finite() {
            let parameter = first_non_finite(&grads.named())
                .or_else(|| first_non_finite(&param_values(&params)))
                .unwrap_or_else(|| "loss".into());
            return Err(Error::NumericAbort { epoch, parameter });
        }
        if let Some(parameter) = first_non_finite(&grads.named()) {
            return Err(Error::NumericAbort { epoch, parameter });
        }
        epochs.push(EpochRecord { epoch, lr, loss });

        for l in 0..3 {
            params.beta[l] = (params.beta[l] - lr * grads.beta[l]).max(0.0);
            params.alpha[l] = (params.alpha[l] - lr * grads.alpha[l]).max(0.0);
            params.big_b[l] = (params.big_b[l] - lr * grads.big_b[l]).clamp(0.0, 1.0);
        }
        if cfg.learn_fusion {
            for (w, g) in params.theta_f.weights_mut().iter_mut().zip(&grads.theta_f) {
                *w -= lr * g;
            }
        }
        if let Some(parameter) = first_non_finite(&param_values(&params)) {
            return Err(Error::NumericAbort { epoch, parameter });
        }
    }

    let (final_loss, _) = mean_loss_and_gradients(samples, &params, cfg)?;
    if !final_loss.is_finite() {
        return Err(Error::NumericAbort {
            epoch: cfg.epochs,
            parameter: "loss".into(),
        });
    }
    Ok(LossTrace {
        epochs,
        final_loss,
        params,
    })
}

/// File-based training set: `{"pairs": [{"rgb", "depth", "target", "aux"?}]}`.
///
/// Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub pairs: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub target: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<PathBuf>,
}

impl Manifest {
    pub fn from_json_str(s: &str) -> Result<Manifest> {
        let m: Manifest = serde_json::from_str(s)?;
        if m.pairs.is_empty() {
            return Err(Error::Empty("manifest lists no pairs".into()));
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Manifest, PathBuf)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Ok((Manifest::from_json_str(&text)?, base))
    }

    pub fn load_samples(&self, base: &Path) -> Result<Vec<Sample>> {
        self.pairs
            .iter()
            .map(|e| {
                let sample = Sample {
                    rgb: load_rgb(base.join(&e.rgb))?,
                    depth: load_depth(base.join(&e.depth))?,
                    target: load_rgb(base.join(&e.target))?,
                    aux: e.aux.as_ref().map(|a| load_rgb(base.join(a))).transpose()?,
                };
                sample.check()?;
                Ok(sample)
            })
            .collect()
    }
}
