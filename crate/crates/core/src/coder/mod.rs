//! Quantization, rate modelling and entropy coding.
//!
//! Training needs smooth stand-ins for the hard quantizer and the coded
//! length, so alongside the exact deadzone quantizer this module provides a
//! softened reconstruction staircase (a sum of scaled sigmoids at the bin
//! edges) whose influence on the backward pass anneals away with a
//! temperature schedule.  The real codec keeps hard indices and a bit-exact
//! adaptive range coder ([`range`], [`subband`]).

pub mod range;
pub mod rate;
pub mod subband;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Subband identity within one decomposition level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Band {
    Ll,
    Hl,
    Lh,
    Hh,
}

impl Band {
    pub fn tag(self) -> &'static str {
        match self {
            Band::Ll => "LL",
            Band::Hl => "HL",
            Band::Lh => "LH",
            Band::Hh => "HH",
        }
    }

    pub fn from_u8(v: u8) -> Result<Band> {
        Ok(match v {
            0 => Band::Ll,
            1 => Band::Hl,
            2 => Band::Lh,
            3 => Band::Hh,
            _ => return Err(Error::config(format!("invalid band code {v}"))),
        })
    }

    pub fn to_u8(self) -> u8 {
        match self {
            Band::Ll => 0,
            Band::Hl => 1,
            Band::Lh => 2,
            Band::Hh => 3,
        }
    }
}

/// Subband class: one (level, band) pair; quantizer steps and rate-model
/// scales are maintained per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ClassKey {
    pub level: u8,
    pub band: Band,
}

impl ClassKey {
    pub fn name(&self) -> String {
        format!("L{}.{}", self.level, self.band.tag())
    }
}

/// Coding order: LL first, then details from the coarsest level down.
pub fn pyramid_classes(levels: usize) -> Vec<ClassKey> {
    let mut v = vec![ClassKey {
        level: levels as u8,
        band: Band::Ll,
    }];
    for d in (1..=levels).rev() {
        for band in [Band::Hl, Band::Lh, Band::Hh] {
            v.push(ClassKey {
                level: d as u8,
                band,
            });
        }
    }
    v
}

/// Per-class quantizer step.  Detail steps shrink by a factor of two per
/// level and the LL step sits one octave below the deepest details,
/// roughly equalising the image-domain error of the non-normalized 5/3
/// basis across levels.
pub fn class_delta(base: f64, key: ClassKey, levels: usize) -> f64 {
    match key.band {
        Band::Ll => base / (1u64 << levels) as f64,
        _ => base / (1u64 << (key.level - 1)) as f64,
    }
}

/// Deadzone uniform quantizer with deadzone factor 2: the zero bin spans
/// `[-step, step]`, twice the width of every other bin.
#[derive(Debug, Clone, Copy)]
pub struct Quantizer {
    pub step: f64,
}

impl Quantizer {
    pub fn new(step: f64) -> Result<Self> {
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::config(format!("quantizer step must be positive, got {step}")));
        }
        Ok(Quantizer { step })
    }

    #[inline]
    pub fn quantize(&self, x: f64) -> i64 {
        let q = (x.abs() / self.step).floor() as i64;
        if x < 0.0 {
            -q
        } else {
            q
        }
    }

    /// Midpoint reconstruction; index 0 maps to 0.
    #[inline]
    pub fn dequantize(&self, q: i64) -> f64 {
        if q == 0 {
            0.0
        } else {
            let m = (q.unsigned_abs() as f64 + 0.5) * self.step;
            if q < 0 {
                -m
            } else {
                m
            }
        }
    }

    pub fn quantize_plane(&self, t: &Tensor) -> Vec<i64> {
        t.data().iter().map(|&v| self.quantize(v)).collect()
    }

    pub fn dequantize_plane(&self, indices: &[i64], shape: &[usize]) -> Tensor {
        let data = indices.iter().map(|&q| self.dequantize(q)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }
}

/// Geometric temperature decay with a floor.
#[derive(Debug, Clone, Copy)]
pub struct AnnealSchedule {
    pub t0: f64,
    pub decay: f64,
    pub t_min: f64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            t0: 1.0,
            decay: 0.9,
            t_min: 0.05,
        }
    }
}

impl AnnealSchedule {
    pub fn temperature(&self, epoch: usize) -> f64 {
        (self.t0 * self.decay.powi(epoch as i32)).max(self.t_min)
    }
}

/// Sigmoid width of the softened staircases, in units of the quantizer
/// step.
pub const STAIR_TAU: f64 = 0.2;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn sigmoid_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

/// Smooth version of `dequantize(quantize(y))`: sigmoids of width
/// `STAIR_TAU * step` replace the jumps (1.5 steps at the deadzone edge,
/// one step at every further bin edge).
pub fn soft_reconstruction(q: &Quantizer, y: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    let u = y.abs() / q.step;
    let mut s = 1.5 * sigmoid((u - 1.0) / STAIR_TAU);
    let k_lo = 2.max(u.floor() as i64 - 6) as usize;
    let k_hi = (u.floor() as i64 + 7).max(2) as usize;
    for k in k_lo..=k_hi {
        s += sigmoid((u - k as f64) / STAIR_TAU);
    }
    s * q.step * y.signum()
}

pub fn soft_reconstruction_deriv(q: &Quantizer, y: f64) -> f64 {
    let u = y.abs() / q.step;
    let mut d = 1.5 * sigmoid_deriv((u - 1.0) / STAIR_TAU);
    let k_lo = 2.max(u.floor() as i64 - 6) as usize;
    let k_hi = (u.floor() as i64 + 7).max(2) as usize;
    for k in k_lo..=k_hi {
        d += sigmoid_deriv((u - k as f64) / STAIR_TAU);
    }
    d / STAIR_TAU
}

/// Backward-pass derivative of the annealed quantizer: the straight-through
/// convention (slope one inside bins) blended with the soft staircase's
/// slope.  At `t = 0` this is exactly straight-through.
pub fn surrogate_factor(q: &Quantizer, t: f64, y: f64) -> f64 {
    (1.0 - t) + t * soft_reconstruction_deriv(q, y)
}

/// Fully smooth forward surrogate used by gradient checks: identity blended
/// with the soft staircase.
pub fn surrogate_value(q: &Quantizer, t: f64, y: f64) -> f64 {
    (1.0 - t) * y + t * soft_reconstruction(q, y)
}
