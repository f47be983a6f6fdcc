use serde::{Deserialize, Serialize};

use super::Kernel;
use crate::error::{Error, Result};

/// Linear fusion filter mapping `m` input channels to RGB.
///
/// `weights` is row-major over `(out_channel, dy, dx, m)`, so its length is
/// `3 * h * w * m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FusionFilterRepr")]
pub struct FusionFilter {
    w: usize,
    h: usize,
    m: usize,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
struct FusionFilterRepr {
    w: usize,
    h: usize,
    m: usize,
    weights: Vec<f64>,
}

impl TryFrom<FusionFilterRepr> for FusionFilter {
    type Error = Error;

    fn try_from(r: FusionFilterRepr) -> Result<Self> {
        FusionFilter::new(r.w, r.h, r.m, r.weights)
    }
}

impl FusionFilter {
    pub fn new(w: usize, h: usize, m: usize, weights: Vec<f64>) -> Result<FusionFilter> {
        if w == 0 || h == 0 || m == 0 {
            return Err(Error::InvalidParameter(format!(
                "fusion filter shape {w}x{h}x{m} must be positive"
            )));
        }
        let expected = [3, h, w, m]
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::InvalidParameter("fusion filter shape overflows".into()))?;
        if weights.len() != expected {
            return Err(Error::LengthMismatch(format!(
                "fusion filter {w}x{h}x{m} needs {expected} weights, got {}",
                weights.len()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "fusion weights must be finite".into(),
            ));
        }
        Ok(FusionFilter { w, h, m, weights })
    }

    /// 1x1 filter passing input channel `l` to output `l` and ignoring the
    /// auxiliary channels.
    pub fn identity(m: usize) -> FusionFilter {
        assert!(m >= 3, "fusion needs at least the three physical channels");
        let mut weights = vec![0.0; 3 * m];
        for l in 0..3 {
            weights[l * m + l] = 1.0;
        }
        FusionFilter {
            w: 1,
            h: 1,
            m,
            weights,
        }
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    #[inline]
    pub fn index(&self, l: usize, dy: usize, dx: usize, m: usize) -> usize {
        ((l * self.h + dy) * self.w + dx) * self.m + m
    }

    #[inline]
    pub fn weight(&self, l: usize, dy: usize, dx: usize, m: usize) -> f64 {
        self.weights[self.index(l, dy, dx, m)]
    }
}

fn default_q() -> f64 {
    5.0
}

fn default_kernel_size() -> usize {
    5
}

fn default_theta_f() -> FusionFilter {
    FusionFilter::identity(3)
}

/// Coefficients of the formation model.
///
/// JSON keys: `beta`, `alpha`, `B`, `q`, `kernel_size`, `theta_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    /// Per-channel absorption coefficient.
    pub beta: [f64; 3],
    /// Per-channel back-scatter coefficient.
    pub alpha: [f64; 3],
    /// Background light per channel, in `[0, 1]`.
    #[serde(rename = "B")]
    pub big_b: [f64; 3],
    /// Gaussian scale of the forward-scatter kernel, in pixels.
    #[serde(default = "default_q")]
    pub q: f64,
    /// Odd kernel width; 1 disables forward scatter.
    #[serde(default = "default_kernel_size")]
    pub kernel_size: usize,
    #[serde(default = "default_theta_f")]
    pub theta_f: FusionFilter,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            beta: [0.4, 0.2, 0.1],
            alpha: [0.3, 0.3, 0.3],
            big_b: [0.1, 0.4, 0.5],
            q: default_q(),
            kernel_size: default_kernel_size(),
            theta_f: default_theta_f(),
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("alpha", self.alpha)] {
            if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {v:?}"
                )));
            }
        }
        if self.big_b.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::InvalidParameter(format!(
                "B must lie in [0, 1], got {:?}",
                self.big_b
            )));
        }
        if !(self.q.is_finite() && self.q > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "q must be positive, got {}",
                self.q
            )));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::EvenKernel(self.kernel_size));
        }
        if !matches!(self.theta_f.m(), 3 | 6) {
            return Err(Error::InvalidParameter(format!(
                "fusion filter depth must be 3 or 6, got {}",
                self.theta_f.m()
            )));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::gaussian(self.q, self.kernel_size)
    }

    pub fn from_json_str(s: &str) -> Result<PhysicalParams> {
        let params: PhysicalParams = serde_json::from_str(s)?;
        params.validate()?;
        Ok(params)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_field_names() {
        let p = PhysicalParams::default();
        let v: serde_json::Value = serde_json::from_str(&p.to_json_string()).unwrap();
        for key in ["beta", "alpha", "B", "q", "kernel_size", "theta_f"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        for key in ["w", "h", "m", "weights"] {
            assert!(v["theta_f"].get(key).is_some(), "missing theta_f.{key}");
        }
        assert_eq!(
            PhysicalParams::from_json_str(&p.to_json_string()).unwrap(),
            p
        );
    }

    #[test]
    fn defaults_fill_optional_keys() {
        let p = PhysicalParams::from_json_str(
            r#"{"beta":[0.1,0.2,0.3],"alpha":[0,0,0],"B":[0.5,0.5,0.5]}"#,
        )
        .unwrap();
        assert_eq!(p.kernel_size, 5);
        assert_eq!(p.theta_f, FusionFilter::identity(3));
    }

    #[test]
    fn invalid_documents_rejected() {
        let bad = [
            r#"{"beta":[-0.1,0.2,0.3],"alpha":[0,0,0],"B":[0.5,0.5,0.5]}"#,
            r#"{"beta":[0.1,0.2,0.3],"alpha":[0,0,0],"B":[1.5,0.5,0.5]}"#,
            r#"{"beta":[0.1,0.2,0.3],"alpha":[0,0,0],"B":[0.5,0.5,0.5],"kernel_size":4}"#,
            r#"{"beta":[0.1,0.2,0.3],"alpha":[0,0,0],"B":[0.5,0.5,0.5],"q":0}"#,
            r#"{"beta":[0.1,0.2,0.3],"alpha":[0,0,0],"B":[0.5,0.5,0.5],"theta_f":{"w":1,"h":1,"m":3,"weights":[1]}}"#,
            r#"{"beta":[0.1,0.2,0.3],"alpha":[0,0,0],"B":[0.5,0.5,0.5],"theta_f":{"w":1,"h":1,"m":4,"weights":[0,0,0,0,0,0,0,0,0,0,0,0]}}"#,
            r#"{"beta":[0.1,0.2],"alpha":[0,0,0],"B":[0.5,0.5,0.5]}"#,
            "not json",
        ];
        for doc in bad {
            assert!(PhysicalParams::from_json_str(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn identity_layout() {
        let f = FusionFilter::identity(6);
        for l in 0..3 {
            for m in 0..6 {
                assert_eq!(f.weight(l, 0, 0, m), if l == m { 1.0 } else { 0.0 });
            }
        }
    }
}
