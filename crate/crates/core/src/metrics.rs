//! Full-reference and no-reference image quality measures.
//!
//! Full-reference scores (MSE, PSNR, SSIM, PCQI) compare a test image against
//! a reference. No-reference scores (UICM, UISM, UIConM and their UIQM
//! combination, UCIQE) rate a single underwater image.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{ensure_same_dims, rgb_to_lab, RgbImage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Side of the square Gaussian window shared by SSIM and PCQI.
    pub window: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub uiqm_coeffs: [f64; 3],
    pub uciqe_coeffs: [f64; 3],
    /// Fraction trimmed from each tail before the UICM means.
    pub uicm_trim: f64,
    /// Side of the square blocks used by UISM and UIConM.
    pub block: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            window: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            uiqm_coeffs: [0.0282, 0.2953, 3.5753],
            uciqe_coeffs: [0.4680, 0.2745, 0.2576],
            uicm_trim: 0.1,
            block: 8,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "metric window must be odd and positive, got {}",
                self.window
            )));
        }
        if self.block == 0 {
            return Err(Error::InvalidParameter(
                "block size must be positive".into(),
            ));
        }
        let positive = [self.window_sigma, self.dynamic_range];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidParameter(
                "window sigma and dynamic range must be positive".into(),
            ));
        }
        let finite = [self.k1, self.k2]
            .iter()
            .chain(&self.uiqm_coeffs)
            .chain(&self.uciqe_coeffs)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter(
                "metric constants must be finite".into(),
            ));
        }
        if !(0.0..0.5).contains(&self.uicm_trim) {
            return Err(Error::InvalidParameter(format!(
                "UICM trim fraction must lie in [0, 0.5), got {}",
                self.uicm_trim
            )));
        }
        Ok(())
    }

    fn window_taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as isize;
        let s2 = 2.0 * self.window_sigma * self.window_sigma;
        let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / s2).exp()).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for unit dynamic range; `+inf` when the
/// images are identical.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / m).log10())
}

/// Correlates `plane` with the outer product of `taps`, keeping only positions
/// where the window fits entirely.
fn filter_valid(plane: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * plane[y * w + x + k])
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(y + k) * ow + x])
                .sum();
        }
    }
    (out, ow, oh)
}

struct LocalStats {
    mu1: Vec<f64>,
    mu2: Vec<f64>,
    var1: Vec<f64>,
    var2: Vec<f64>,
    cov: Vec<f64>,
}

fn local_stats(x: &[f64], y: &[f64], w: usize, h: usize, cfg: &MetricConfig) -> Result<LocalStats> {
    if w < cfg.window || h < cfg.window {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: cfg.window,
        });
    }
    let taps = cfg.window_taps();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(a, b)| a * b).collect() };
    let (mu1, _, _) = filter_valid(x, w, h, &taps);
    let (mu2, _, _) = filter_valid(y, w, h, &taps);
    let (xx, _, _) = filter_valid(&prod(x, x), w, h, &taps);
    let (yy, _, _) = filter_valid(&prod(y, y), w, h, &taps);
    let (xy, _, _) = filter_valid(&prod(x, y), w, h, &taps);
    let var1 = xx.iter().zip(&mu1).map(|(e, m)| e - m * m).collect();
    let var2 = yy.iter().zip(&mu2).map(|(e, m)| e - m * m).collect();
    let cov = xy
        .iter()
        .zip(mu1.iter().zip(&mu2))
        .map(|(e, (m1, m2))| e - m1 * m2)
        .collect();
    Ok(LocalStats {
        mu1,
        mu2,
        var1,
        var2,
        cov,
    })
}

/// Mean structural similarity of the BT.601 luma planes over the region where
/// the Gaussian window fits.
pub fn ssim(a: &RgbImage, b: &RgbImage, cfg: &MetricConfig) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    let (w, h) = a.dims();
    let s = local_stats(&a.luma(), &b.luma(), w, h, cfg)?;
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let n = s.mu1.len();
    let sum: f64 = (0..n)
        .map(|i| {
            let (m1, m2) = (s.mu1[i], s.mu2[i]);
            ((2.0 * m1 * m2 + c1) * (2.0 * s.cov[i] + c2))
                / ((m1 * m1 + m2 * m2 + c1) * (s.var1[i] + s.var2[i] + c2))
        })
        .sum();
    Ok(sum / n as f64)
}

/// Patch-based contrast quality index on luma scaled to `[0, 255]`.
pub fn pcqi(a: &RgbImage, b: &RgbImage, cfg: &MetricConfig) -> Result<f64> {
    const C: f64 = 3.0;
    const L: f64 = 256.0;
    ensure_same_dims(a.dims(), b.dims())?;
    let (w, h) = a.dims();
    let x: Vec<f64> = a.luma().iter().map(|v| v * 255.0).collect();
    let y: Vec<f64> = b.luma().iter().map(|v| v * 255.0).collect();
    let s = local_stats(&x, &y, w, h, cfg)?;
    let n = s.mu1.len();
    let sum: f64 = (0..n)
        .map(|i| {
            let v1 = s.var1[i].max(0.0);
            let v2 = s.var2[i].max(0.0);
            let c12 = s.cov[i];
            let contrast = 4.0 / std::f64::consts::PI * ((c12 + C) / (v1 + C)).atan();
            let structure = (c12 + C) / (v1.sqrt() * v2.sqrt() + C);
            let mean = (-(s.mu1[i] - s.mu2[i]).abs() / L).exp();
            contrast * structure * mean
        })
        .sum();
    Ok(sum / n as f64)
}

fn trimmed_mean(mut v: Vec<f64>, alpha: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let lo = (alpha * k as f64).ceil() as usize;
    let hi = (alpha * k as f64).floor() as usize;
    let kept = &v[lo..k - hi];
    kept.iter().sum::<f64>() / kept.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

/// Colorfulness from asymmetric alpha-trimmed statistics of the RG and YB
/// opponent channels, on the `[0, 255]` scale.
pub fn uicm(img: &RgbImage, cfg: &MetricConfig) -> f64 {
    let (rg, yb): (Vec<f64>, Vec<f64>) = img
        .pixels()
        .map(|[r, g, b]| {
            let (r, g, b) = (r * 255.0, g * 255.0, b * 255.0);
            (r - g, (r + g) / 2.0 - b)
        })
        .unzip();
    let var = variance(&rg) + variance(&yb);
    let mrg = trimmed_mean(rg, cfg.uicm_trim);
    let myb = trimmed_mean(yb, cfg.uicm_trim);
    -0.0268 * mrg.hypot(myb) + 0.1586 * var.sqrt()
}

fn check_blocks(img: &RgbImage, cfg: &MetricConfig) -> Result<(usize, usize)> {
    let (w, h) = img.dims();
    if w < cfg.block || h < cfg.block {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: cfg.block,
        });
    }
    Ok((w / cfg.block, h / cfg.block))
}

/// Visits each full `block x block` tile, dropping partial tiles at the
/// right and bottom borders.
fn for_each_block(kx: usize, ky: usize, block: usize, mut f: impl FnMut(usize, usize)) {
    for by in 0..ky {
        for bx in 0..kx {
            f(bx * block, by * block);
        }
    }
}

fn eme(plane: &[f64], w: usize, kx: usize, ky: usize, block: usize) -> f64 {
    let mut total = 0.0;
    for_each_block(kx, ky, block, |x0, y0| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in y0..y0 + block {
            for &v in &plane[y * w + x0..y * w + x0 + block] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if lo > 0.0 && hi > 0.0 {
            total += (hi / lo).ln();
        }
    });
    2.0 / (kx * ky) as f64 * total
}

fn sobel_magnitude(img: &RgbImage, c: usize) -> Vec<f64> {
    let (w, h) = img.dims();
    let px = |x: isize, y: isize| img.get_clamped(x, y, c) * 255.0;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            out.push(gx.hypot(gy));
        }
    }
    out
}

/// Sharpness: luma-weighted EME of each channel masked by its Sobel edges.
pub fn uism(img: &RgbImage, cfg: &MetricConfig) -> Result<f64> {
    let (kx, ky) = check_blocks(img, cfg)?;
    let w = img.width();
    let mut score = 0.0;
    for (c, weight) in [0.299, 0.587, 0.114].into_iter().enumerate() {
        let edges: Vec<f64> = sobel_magnitude(img, c)
            .iter()
            .zip(img.plane(c))
            .map(|(e, v)| e * v * 255.0)
            .collect();
        score += weight * eme(&edges, w, kx, ky, cfg.block);
    }
    Ok(score)
}

/// Contrast: negated mean of `r ln r` with `r` the Michelson ratio of each
/// block, taken across all three channels.
pub fn uiconm(img: &RgbImage, cfg: &MetricConfig) -> Result<f64> {
    let (kx, ky) = check_blocks(img, cfg)?;
    let w = img.width();
    let data = img.data();
    let mut total = 0.0;
    for_each_block(kx, ky, cfg.block, |x0, y0| {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for y in y0..y0 + cfg.block {
            for &v in &data[(y * w + x0) * 3..(y * w + x0 + cfg.block) * 3] {
                lo = lo.min(v * 255.0);
                hi = hi.max(v * 255.0);
            }
        }
        let (top, bot) = (hi - lo, hi + lo);
        if top > 0.0 && bot > 0.0 {
            let r = top / bot;
            total += r * r.ln();
        }
    });
    Ok(-total / (kx * ky) as f64)
}

/// UIQM components in `(uicm, uism, uiconm)` order.
pub fn uiqm_components(img: &RgbImage, cfg: &MetricConfig) -> Result<[f64; 3]> {
    Ok([uicm(img, cfg), uism(img, cfg)?, uiconm(img, cfg)?])
}

pub fn uiqm_combine(components: [f64; 3], coeffs: [f64; 3]) -> f64 {
    coeffs[0] * components[0] + coeffs[1] * components[1] + coeffs[2] * components[2]
}

pub fn uiqm(img: &RgbImage, cfg: &MetricConfig) -> Result<f64> {
    Ok(uiqm_combine(uiqm_components(img, cfg)?, cfg.uiqm_coeffs))
}

/// Linear-interpolated percentile of sorted data, `p` in `[0, 100]`.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

/// Chroma spread, luminance contrast and mean saturation in CIELAB.
pub fn uciqe(img: &RgbImage, cfg: &MetricConfig) -> f64 {
    let lab = rgb_to_lab(img);
    let chroma: Vec<f64> = lab.pixels().iter().map(|p| p[1].hypot(p[2])).collect();
    let mut lum: Vec<f64> = lab.pixels().iter().map(|p| p[0]).collect();
    let sat: f64 = lum
        .iter()
        .zip(&chroma)
        .map(|(l, c)| if *l > 0.0 { c / l } else { 0.0 })
        .sum::<f64>()
        / lum.len() as f64;
    lum.sort_by(f64::total_cmp);
    let contrast = percentile(&lum, 99.0) - percentile(&lum, 1.0);
    let [c1, c2, c3] = cfg.uciqe_coeffs;
    c1 * variance(&chroma).sqrt() + c2 * contrast + c3 * sat
}

/// Column names in CSV order.
pub const METRIC_NAMES: [&str; 9] = [
    "MSE", "PSNR", "SSIM", "PCQI", "UICM", "UISM", "UICONM", "UIQM", "UCIQE",
];

/// Scores of one image; full-reference entries are `None` without a reference.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub mse: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub pcqi: Option<f64>,
    pub uicm: Option<f64>,
    pub uism: Option<f64>,
    pub uiconm: Option<f64>,
    pub uiqm: Option<f64>,
    pub uciqe: Option<f64>,
}

impl MetricReport {
    pub fn compute(
        img: &RgbImage,
        reference: Option<&RgbImage>,
        cfg: &MetricConfig,
    ) -> Result<Self> {
        let mut report = MetricReport::default();
        if let Some(r) = reference {
            report.mse = Some(mse(img, r)?);
            report.psnr = Some(psnr(img, r)?);
            report.ssim = Some(ssim(img, r, cfg)?);
            report.pcqi = Some(pcqi(img, r, cfg)?);
        }
        let comps = uiqm_components(img, cfg)?;
        report.uicm = Some(comps[0]);
        report.uism = Some(comps[1]);
        report.uiconm = Some(comps[2]);
        report.uiqm = Some(uiqm_combine(comps, cfg.uiqm_coeffs));
        report.uciqe = Some(uciqe(img, cfg));
        Ok(report)
    }

    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 9] {
        [
            self.mse,
            self.psnr,
            self.ssim,
            self.pcqi,
            self.uicm,
            self.uism,
            self.uiconm,
            self.uiqm,
            self.uciqe,
        ]
    }

    fn from_values(v: [Option<f64>; 9]) -> Self {
        MetricReport {
            mse: v[0],
            psnr: v[1],
            ssim: v[2],
            pcqi: v[3],
            uicm: v[4],
            uism: v[5],
            uiconm: v[6],
            uiqm: v[7],
            uciqe: v[8],
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let i = METRIC_NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))?;
        self.values()[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub reports: Vec<MetricReport>,
    pub mean: MetricReport,
}

impl Evaluation {
    /// CSV with a header, one row per image and a closing `MEAN` row. Missing
    /// values are written as `-`, infinite PSNR as `Inf`.
    pub fn to_csv(&self, names: &[String]) -> Result<String> {
        if names.len() != self.reports.len() {
            return Err(Error::LengthMismatch(format!(
                "{} names for {} reports",
                names.len(),
                self.reports.len()
            )));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("filename").chain(METRIC_NAMES))?;
        let rows = names
            .iter()
            .map(String::as_str)
            .zip(&self.reports)
            .chain(std::iter::once(("MEAN", &self.mean)));
        for (name, report) in rows {
            let mut record = vec![name.to_string()];
            record.extend(report.values().iter().map(|v| format_value(*v)));
            w.write_record(&record)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidData(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn format_value(v: Option<f64>) -> String {
    match v {
        None => "-".into(),
        Some(x) if x == f64::INFINITY => "Inf".into(),
        Some(x) if x == f64::NEG_INFINITY => "-Inf".into(),
        Some(x) => {
            let mut s = String::new();
            write!(s, "{x}").unwrap();
            s
        }
    }
}

/// Scores every image (against `refs` when given) and the per-metric means.
pub fn evaluate(
    imgs: &[RgbImage],
    refs: Option<&[RgbImage]>,
    cfg: &MetricConfig,
) -> Result<Evaluation> {
    cfg.validate()?;
    if imgs.is_empty() {
        return Err(Error::Empty("no images to evaluate".into()));
    }
    if let Some(r) = refs {
        if r.len() != imgs.len() {
            return Err(Error::LengthMismatch(format!(
                "{} images but {} references",
                imgs.len(),
                r.len()
            )));
        }
    }
    let reports = imgs
        .par_iter()
        .enumerate()
        .map(|(i, img)| MetricReport::compute(img, refs.map(|r| &r[i]), cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    let mean = std::array::from_fn(|k| {
        let vals: Option<Vec<f64>> = reports.iter().map(|r| r.values()[k]).collect();
        vals.map(|v| v.iter().sum::<f64>() / n)
    });
    Ok(Evaluation {
        mean: MetricReport::from_values(mean),
        reports,
    })
}
