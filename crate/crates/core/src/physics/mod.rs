//! Forward synthesis of underwater images from in-air RGB-D input.
//!
//! The physical branch is
//!
//! ```text
//! I_ab  = I_a * exp(-d * beta)            absorption
//! I_bsc = B * (1 - exp(-d * alpha))       back scatter
//! I_fsc = I_a (*) Phi_q                   forward scatter (Gaussian blur)
//! I_add = I_ab + I_bsc + I_fsc
//! ```
//!
//! A kernel size of 1 switches the forward-scatter branch off (`I_fsc = 0`), so
//! `beta = alpha = 0` with a size-1 kernel reproduces the input exactly.
//!
//! The output is a linear filter over `I_con = concat(I_add, I_aux)`,
//! clamped to `[0, 1]` once at the end. Intermediate stages stay unclamped so
//! the analytic gradients in [`crate::fitting`] are exact.

mod kernel;
mod params;

use rayon::prelude::*;

pub use kernel::{forward_scatter, Kernel};
pub use params::{FusionFilter, PhysicalParams};

use crate::error::{Error, Result};
use crate::imaging::{ensure_same_dims, DepthMap, Field, RgbImage};

/// Absorption `I_a * exp(-d * beta)`, per channel.
pub fn absorption(i_a: &RgbImage, i_d: &DepthMap, beta: [f64; 3]) -> Result<Field> {
    ensure_same_dims(i_a.dims(), i_d.dims())?;
    check_non_negative("beta", beta)?;
    let (w, h) = i_a.dims();
    Ok(Field::from_fn(w, h, 3, |x, y, c| {
        i_a.get(x, y, c) * (-i_d.get(x, y) * beta[c]).exp()
    }))
}

/// Back scatter `B * (1 - exp(-d * alpha))`, per channel.
pub fn backscatter(i_d: &DepthMap, alpha: [f64; 3], big_b: [f64; 3]) -> Result<Field> {
    check_non_negative("alpha", alpha)?;
    check_unit("B", big_b)?;
    let (w, h) = i_d.dims();
    Ok(Field::from_fn(w, h, 3, |x, y, c| {
        big_b[c] * (1.0 - (-i_d.get(x, y) * alpha[c]).exp())
    }))
}

/// `I_sc = I_bsc + I_fsc`, unclamped.
pub fn scatter(i_bsc: &Field, i_fsc: &Field) -> Result<Field> {
    i_bsc.zip_with(i_fsc, |a, b| a + b)
}

/// Builds `I_con`: the physical sum followed by the auxiliary channels, if any.
pub fn concat_branches(i_add: &Field, aux: Option<&RgbImage>) -> Result<Field> {
    match aux {
        Some(aux) => i_add.concat(aux.as_field()),
        None => Ok(i_add.clone()),
    }
}

/// Applies the fusion filter to `I_con` without clamping.
///
/// `out(x, y, l) = sum over (dy, dx, m) of I_con(x + dx, y + dy, m) * theta(l, dy, dx, m)`
/// with coordinates clamped to the image (replicate padding).
pub fn fuse_unclamped(i_con: &Field, theta_f: &FusionFilter) -> Result<Field> {
    if theta_f.m() != i_con.channels() {
        return Err(Error::FilterDepth {
            filter: theta_f.m(),
            input: i_con.channels(),
        });
    }
    let (w, h) = i_con.dims();
    let mut out = vec![0.0; w * h * 3];
    out.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            for l in 0..3 {
                let mut acc = 0.0;
                for dy in 0..theta_f.h() {
                    for dx in 0..theta_f.w() {
                        let xx = x as isize + dx as isize;
                        let yy = y as isize + dy as isize;
                        for m in 0..theta_f.m() {
                            acc += i_con.get_clamped(xx, yy, m) * theta_f.weight(l, dy, dx, m);
                        }
                    }
                }
                row[x * 3 + l] = acc;
            }
        }
    });
    Ok(Field::from_raw(w, h, 3, out))
}

/// Fusion of the physical branch with the optional auxiliary branch, clamped
/// to `[0, 1]`.
pub fn fuse(i_add: &Field, aux: Option<&RgbImage>, theta_f: &FusionFilter) -> Result<RgbImage> {
    let i_con = concat_branches(i_add, aux)?;
    RgbImage::from_field_clamped(&fuse_unclamped(&i_con, theta_f)?)
}

/// Renders the underwater image for `(i_a, i_d)`.
pub fn synthesize(
    i_a: &RgbImage,
    i_d: &DepthMap,
    params: &PhysicalParams,
    aux: Option<&RgbImage>,
) -> Result<RgbImage> {
    Ok(ForwardState::new(i_a, i_d, params, aux)?.output)
}

/// A forward pass with every intermediate retained for back-propagation.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub i_a: RgbImage,
    pub i_d: DepthMap,
    pub params: PhysicalParams,
    /// `exp(-d * beta)` per pixel and channel (the transmission map).
    pub transmission: Field,
    /// `exp(-d * alpha)` per pixel and channel.
    pub backscatter_decay: Field,
    pub i_ab: Field,
    pub i_bsc: Field,
    pub i_fsc: Field,
    pub i_add: Field,
    pub i_con: Field,
    /// Fusion output before the final clamp.
    pub pre_clamp: Field,
    pub output: RgbImage,
}

impl ForwardState {
    pub fn new(
        i_a: &RgbImage,
        i_d: &DepthMap,
        params: &PhysicalParams,
        aux: Option<&RgbImage>,
    ) -> Result<ForwardState> {
        params.validate()?;
        ensure_same_dims(i_a.dims(), i_d.dims())?;
        if let Some(aux) = aux {
            ensure_same_dims(i_a.dims(), aux.dims())?;
        }
        let expected_m = if aux.is_some() { 6 } else { 3 };
        if params.theta_f.m() != expected_m {
            return Err(Error::FilterDepth {
                filter: params.theta_f.m(),
                input: expected_m,
            });
        }

        let (w, h) = i_a.dims();
        let transmission =
            Field::from_fn(w, h, 3, |x, y, c| (-i_d.get(x, y) * params.beta[c]).exp());
        let backscatter_decay =
            Field::from_fn(w, h, 3, |x, y, c| (-i_d.get(x, y) * params.alpha[c]).exp());
        let i_ab = i_a.as_field().zip_with(&transmission, |a, t| a * t)?;
        let i_bsc = Field::from_fn(w, h, 3, |x, y, c| {
            params.big_b[c] * (1.0 - backscatter_decay.get(x, y, c))
        });
        let i_fsc = if params.kernel_size == 1 {
            Field::zeros(w, h, 3)
        } else {
            forward_scatter(i_a, &params.kernel()?)
        };
        let i_sc = scatter(&i_bsc, &i_fsc)?;
        let i_add = i_ab.zip_with(&i_sc, |a, b| a + b)?;
        let i_con = concat_branches(&i_add, aux)?;
        let pre_clamp = fuse_unclamped(&i_con, &params.theta_f)?;
        let output = RgbImage::from_field_clamped(&pre_clamp)?;

        Ok(ForwardState {
            i_a: i_a.clone(),
            i_d: i_d.clone(),
            params: params.clone(),
            transmission,
            backscatter_decay,
            i_ab,
            i_bsc,
            i_fsc,
            i_add,
            i_con,
            pre_clamp,
            output,
        })
    }

    /// True where the final clamp changed the value.
    pub fn saturated(&self, idx: usize) -> bool {
        let v = self.pre_clamp.data()[idx];
        !(0.0..=1.0).contains(&v)
    }
}

fn check_non_negative(name: &str, v: [f64; 3]) -> Result<()> {
    if v.iter().all(|x| x.is_finite() && *x >= 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be finite and non-negative, got {v:?}"
        )))
    }
}

fn check_unit(name: &str, v: [f64; 3]) -> Result<()> {
    if v.iter().all(|x| (0.0..=1.0).contains(x)) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must lie in [0, 1], got {v:?}"
        )))
    }
}
