use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{Field, RgbImage};

/// Normalized separable Gaussian `k(x, y) = A exp(-(x^2 + y^2) / q^2)`.
///
/// The kernel factors into a 1-D profile `g`, normalized to unit sum, so the
/// 2-D entries `g[x] * g[y]` sum to one and `A = 1 / (sum of raw profile)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    taps: Vec<f64>,
}

impl Kernel {
    pub fn gaussian(q: f64, size: usize) -> Result<Kernel> {
        if size.is_multiple_of(2) {
            return Err(Error::EvenKernel(size));
        }
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Gaussian scale q must be positive, got {q}"
            )));
        }
        let r = (size / 2) as isize;
        let raw: Vec<f64> = (-r..=r)
            .map(|i| (-((i * i) as f64) / (q * q)).exp())
            .collect();
        let sum: f64 = raw.iter().sum();
        Ok(Kernel {
            taps: raw.iter().map(|v| v / sum).collect(),
        })
    }

    pub fn identity() -> Kernel {
        Kernel { taps: vec![1.0] }
    }

    pub fn size(&self) -> usize {
        self.taps.len()
    }

    pub fn radius(&self) -> isize {
        (self.taps.len() / 2) as isize
    }

    /// 1-D profile; the 2-D kernel is its outer product.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Entry at offset `(dx, dy)` from the center.
    pub fn entry(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius();
        assert!(dx.abs() <= r && dy.abs() <= r, "offset outside kernel");
        self.taps[(dx + r) as usize] * self.taps[(dy + r) as usize]
    }

    /// Row-major `size * size` matrix of entries.
    pub fn to_dense(&self) -> Vec<f64> {
        let r = self.radius();
        (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .map(|(dx, dy)| self.entry(dx, dy))
            .collect()
    }
}

/// Forward scatter: per-channel convolution of `i_a` with `kernel`, borders
/// replicated.
pub fn forward_scatter(i_a: &RgbImage, kernel: &Kernel) -> Field {
    convolve_separable(i_a.as_field(), kernel.taps())
}

pub(crate) fn convolve_separable(src: &Field, taps: &[f64]) -> Field {
    let (w, h, ch) = (src.width(), src.height(), src.channels());
    if taps.len() == 1 && taps[0] == 1.0 {
        return src.clone();
    }
    let r = (taps.len() / 2) as isize;
    let row_len = w * ch;

    let mut tmp = vec![0.0; w * h * ch];
    tmp.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for (k, &t) in taps.iter().enumerate() {
                        acc += t * src.get_clamped(x as isize + k as isize - r, y as isize, c);
                    }
                    row[x * ch + c] = acc;
                }
            }
        });

    let mut out = vec![0.0; w * h * ch];
    out.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for (k, &t) in taps.iter().enumerate() {
                        let yy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                        acc += t * tmp[yy * row_len + x * ch + c];
                    }
                    row[x * ch + c] = acc;
                }
            }
        });
    Field::from_raw(w, h, ch, out)
}
