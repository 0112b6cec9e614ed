//! Fixed base wavelet transforms in lifting form.

use crate::lifting::{
    Direction, FixedFilter, LiftingStep, LiftingStructure, PhaseHalf, StepOperator,
};
use std::collections::BTreeMap;

/// LeGall 5/3 predict taps: `-1/2 (1 + z)` on the even phase.
pub const PREDICT_TAPS: [(i32, f64); 2] = [(0, -0.5), (1, -0.5)];
/// LeGall 5/3 update taps: `1/4 (1 + z^-1)` on the odd phase.
pub const UPDATE_TAPS: [(i32, f64); 2] = [(-1, 0.25), (0, 0.25)];

/// Daubechies-Sweldens factorization of the CDF 9/7 filters.
pub mod cdf97_params {
    pub const ALPHA: f64 = -1.586_134_342_059_924;
    pub const BETA: f64 = -0.052_980_118_572_961;
    pub const GAMMA: f64 = 0.882_911_075_530_934;
    pub const DELTA: f64 = 0.443_506_852_043_971;
    pub const K: f64 = 1.230_174_104_914_001;
}

pub fn fixed_step(taps: &[(i32, f64)]) -> StepOperator {
    StepOperator::Fixed(FixedFilter::new(taps.to_vec()).unwrap())
}

/// The four 5/3 steps: vertical predict/update, then horizontal
/// predict/update.
pub fn legall53_steps() -> Vec<LiftingStep> {
    vec![
        LiftingStep::vertical(fixed_step(&PREDICT_TAPS), PhaseHalf::Even, 1.0),
        LiftingStep::vertical(fixed_step(&UPDATE_TAPS), PhaseHalf::Odd, 1.0),
        LiftingStep::horizontal(fixed_step(&PREDICT_TAPS), PhaseHalf::Even, 1.0),
        LiftingStep::horizontal(fixed_step(&UPDATE_TAPS), PhaseHalf::Odd, 1.0),
    ]
}

/// Four lifting steps (two predict, two update) per direction.
pub fn cdf97_steps() -> Vec<LiftingStep> {
    use cdf97_params::*;
    let mut steps = Vec::new();
    for dir in [Direction::Vertical, Direction::Horizontal] {
        let mk = |taps: [(i32, f64); 2], src: PhaseHalf| match dir {
            Direction::Vertical => LiftingStep::vertical(fixed_step(&taps), src, 1.0),
            Direction::Horizontal => LiftingStep::horizontal(fixed_step(&taps), src, 1.0),
        };
        steps.push(mk([(0, ALPHA), (1, ALPHA)], PhaseHalf::Even));
        steps.push(mk([(-1, BETA), (0, BETA)], PhaseHalf::Odd));
        steps.push(mk([(0, GAMMA), (1, GAMMA)], PhaseHalf::Even));
        steps.push(mk([(-1, DELTA), (0, DELTA)], PhaseHalf::Odd));
    }
    steps
}

fn bare(name: &str, steps: Vec<LiftingStep>, gains: Option<(f64, f64)>) -> LiftingStructure {
    LiftingStructure {
        name: name.to_string(),
        steps,
        nets: BTreeMap::new(),
        vertical_gains: gains,
        horizontal_gains: gains,
        low_row_phase: PhaseHalf::Even,
        low_col_phase: PhaseHalf::Even,
    }
}

pub fn legall53_structure() -> LiftingStructure {
    bare("legall53", legall53_steps(), None)
}

/// Gains put `K` on the low phase and `1/K` on the high phase per
/// direction; synthesis applies the exact reciprocals.
pub fn cdf97_structure() -> LiftingStructure {
    bare(
        "cdf97",
        cdf97_steps(),
        Some((cdf97_params::K, 1.0 / cdf97_params::K)),
    )
}
