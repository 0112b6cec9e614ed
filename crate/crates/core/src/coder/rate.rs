//! Parametric Laplacian rate model for the deadzone quantization indices.
//!
//! With scale `b` and step `delta`, writing `r = delta / b`, the index
//! probabilities are `P(0) = 1 - exp(-r)` and `P(q) = (1 - exp(-r)) *
//! exp(-|q| r) / 2` otherwise; they sum to one over all of `Z` exactly, and
//! code lengths are evaluated in the log domain so no index ever costs
//! infinite bits.  A softened code-length curve provides the gradients that
//! flow back into the transform coefficients during training.

use super::{sigmoid, sigmoid_deriv, STAIR_TAU};
use crate::error::{Error, Result};

const LOG2_E: f64 = std::f64::consts::LOG2_E;

#[derive(Debug, Clone, Copy)]
pub struct RateModel {
    pub delta: f64,
    /// Laplacian scale `b` (trainable during rate-distortion optimisation).
    pub scale: f64,
}

impl RateModel {
    pub fn new(delta: f64, scale: f64) -> Result<Self> {
        if !(delta > 0.0 && scale > 0.0) {
            return Err(Error::config("rate model needs positive step and scale"));
        }
        Ok(RateModel { delta, scale })
    }

    #[inline]
    fn r(&self) -> f64 {
        self.delta / self.scale
    }

    /// `-log2 P(0) = -log2(1 - e^{-r})`.
    fn zero_bits(&self) -> f64 {
        -(-(-self.r()).exp()).ln_1p() * LOG2_E
    }

    /// Exact code length of one index, in bits.
    pub fn bits_for_index(&self, q: i64) -> f64 {
        let l0 = self.zero_bits();
        if q == 0 {
            l0
        } else {
            1.0 + l0 + q.unsigned_abs() as f64 * self.r() * LOG2_E
        }
    }

    /// d bits / d scale for one index.
    pub fn bits_grad_scale(&self, q: i64) -> f64 {
        let r = self.r();
        let dl0_dr = -LOG2_E * (-r).exp() / (1.0 - (-r).exp());
        let dl_dr = if q == 0 {
            dl0_dr
        } else {
            dl0_dr + q.unsigned_abs() as f64 * LOG2_E
        };
        dl_dr * (-r / self.scale)
    }

    /// Smooth code-length as a function of the un-quantized value: the
    /// deadzone cost blends into the significant-index cost through
    /// sigmoids at the bin edges.  Coincides with `bits_for_index` away
    /// from the edges as the sigmoid width shrinks.
    pub fn smooth_bits(&self, y: f64) -> f64 {
        let (l, _, _) = self.smooth_parts(y);
        l
    }

    pub fn smooth_bits_grad_value(&self, y: f64) -> f64 {
        let (_, dl_du, _) = self.smooth_parts(y);
        dl_du * y.signum() / self.delta
    }

    pub fn smooth_bits_grad_scale(&self, y: f64) -> f64 {
        let (_, _, dl_dr) = self.smooth_parts(y);
        dl_dr * (-self.r() / self.scale)
    }

    /// Returns (bits, d bits / d u, d bits / d r) with `u = |y| / delta`.
    fn smooth_parts(&self, y: f64) -> (f64, f64, f64) {
        let r = self.r();
        let u = y.abs() / self.delta;
        let l0 = self.zero_bits();
        let w = sigmoid((u - 1.0) / STAIR_TAU);
        let dw = sigmoid_deriv((u - 1.0) / STAIR_TAU) / STAIR_TAU;
        let mut stair = 0.0;
        let mut dstair = 0.0;
        let k_lo = 2.max(u.floor() as i64 - 6);
        let k_hi = (u.floor() as i64 + 7).max(2);
        for k in k_lo..=k_hi {
            stair += sigmoid((u - k as f64) / STAIR_TAU);
            dstair += sigmoid_deriv((u - k as f64) / STAIR_TAU) / STAIR_TAU;
        }
        let extra = r * LOG2_E * (1.0 + stair);
        let l = l0 + w * (1.0 + extra);
        let dl_du = dw * (1.0 + extra) + w * r * LOG2_E * dstair;
        let dl0_dr = -LOG2_E * (-r).exp() / (1.0 - (-r).exp());
        let dl_dr = dl0_dr + w * LOG2_E * (1.0 + stair);
        (l, dl_du, dl_dr)
    }

    /// Entropy of the discrete index distribution in bits per symbol,
    /// summed until the tail mass is negligible.
    pub fn discrete_entropy(&self) -> f64 {
        let r = self.r();
        let p0 = 1.0 - (-r).exp();
        let mut h = -p0 * p0.log2();
        let mut k = 1u64;
        loop {
            let pk = 0.5 * p0 * (-(k as f64) * r).exp();
            if pk < 1e-16 {
                break;
            }
            h += -2.0 * pk * pk.log2();
            k += 1;
            if k > 100_000 {
                break;
            }
        }
        h
    }
}

/// Total coded length and per-index lengths under the model.
pub fn rate_estimate(indices: &[i64], model: &RateModel) -> (f64, Vec<f64>) {
    let per: Vec<f64> = indices.iter().map(|&q| model.bits_for_index(q)).collect();
    (per.iter().sum(), per)
}
