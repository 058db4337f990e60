//! Stochastic view generation for vector data and the Gaussian
//! neighbourhood perturbation applied before the predictor.

use crate::error::{Error, Result};
use crate::numerics::{FeatureMatrix, RngState};

/// Per-sample transformation: scale, add jitter, then mask coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformSpec {
    pub jitter_std: f64,
    pub scale_range: (f64, f64),
    pub mask_prob: f64,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self {
            jitter_std: 0.1,
            scale_range: (0.8, 1.2),
            mask_prob: 0.1,
        }
    }
}

impl TransformSpec {
    pub const IDENTITY: TransformSpec = TransformSpec {
        jitter_std: 0.0,
        scale_range: (1.0, 1.0),
        mask_prob: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(Error::ConfigInvalid(format!("jitter_std {} must be >= 0", self.jitter_std)));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::ConfigInvalid(format!("scale range [{lo}, {hi}] must satisfy 0 < lo <= hi")));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::ConfigInvalid(format!("mask_prob {} must lie in [0, 1)", self.mask_prob)));
        }
        Ok(())
    }
}

/// One random view of every row of `x`.
pub fn augment(x: &FeatureMatrix, spec: &TransformSpec, rng: &mut RngState) -> Result<FeatureMatrix> {
    spec.validate()?;
    let mut out = x.clone();
    let (lo, hi) = spec.scale_range;
    for i in 0..out.rows() {
        let s = rng.uniform_range(lo, hi);
        for v in out.row_mut(i) {
            let mut y = s * *v;
            if spec.jitter_std > 0.0 {
                y += spec.jitter_std * rng.standard_normal();
            }
            if spec.mask_prob > 0.0 && rng.uniform() < spec.mask_prob {
                y = 0.0;
            }
            *v = y;
        }
    }
    Ok(out)
}

/// `z + sigma * eps` with `eps` standard normal.
pub fn neighborhood_sample(z: &FeatureMatrix, sigma: f64, rng: &mut RngState) -> Result<FeatureMatrix> {
    if !(sigma >= 0.0) {
        return Err(Error::ConfigInvalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut out = z.clone();
    if sigma > 0.0 {
        for v in out.as_mut_slice() {
            *v += sigma * rng.standard_normal();
        }
    }
    Ok(out)
}
