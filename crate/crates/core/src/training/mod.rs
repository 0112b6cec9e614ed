//! Pre-training schedules and the end-to-end optimisation loop.
//!
//! Stages follow the usual three-phase recipe: first freeze the opacity
//! branches (supplying oracle opacity maps derived from the input images)
//! and one pinned proposal per operator while the remaining proposals
//! learn; then freeze the proposals and let the true opacity branches learn
//! from scratch; finally free everything.  Each stage can optimise either
//! the rate-distortion objective or the progressive-selection objective.

pub mod corpus;
pub mod objective;
pub mod patches;

use crate::coder::AnnealSchedule;
use crate::error::{Error, Result};
use crate::lifting::{LiftingStructure, OracleSource, StepGrid};
use crate::nn::{adam_step, AdamHyper, AdamState};
use crate::oracle::{oracle_opacities_shaped, OracleBank};
use crate::ops::{init_weights, InitMode};
use crate::store::{GradStore, WeightStore};
use crate::tensor::Tensor;
use objective::{
    ensure_rate_params, is_rate_param, progressive_selection_objective, rd_objective, QuantMode,
    RdSettings,
};
use rayon::prelude::*;
use serde::Deserialize;
use std::cell::RefCell;
use std::collections::BTreeMap;

/// Which parameters a stage leaves untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FreezeRule {
    #[default]
    None,
    /// Opacity branches and proposal 0 of every operator stay fixed.
    Stage1,
    /// All proposals stay fixed.
    Stage2,
}

impl FreezeRule {
    pub fn is_frozen(self, name: &str) -> bool {
        if is_rate_param(name) {
            return false;
        }
        match self {
            FreezeRule::None => false,
            FreezeRule::Stage1 => name.contains(".opac.") || name.ends_with(".prop.0"),
            FreezeRule::Stage2 => name.contains(".prop."),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    RateDistortion,
    ProgressiveSelection,
}

/// One stage of a training plan.
#[derive(Debug, Clone)]
pub struct StageSpec {
    pub name: String,
    pub objective: ObjectiveKind,
    pub epochs: usize,
    pub freeze: FreezeRule,
    /// Blend proposals with image-derived oracle opacities instead of the
    /// opacity branches.
    pub oracle_opacities: bool,
    /// Re-randomise the opacity branches at stage entry ("from scratch").
    pub reinit_opacities: bool,
}

#[derive(Debug, Clone)]
pub struct TrainParams {
    pub levels: usize,
    pub lambda1: Vec<f64>,
    pub base_delta: f64,
    pub batch: usize,
    pub lr: f64,
    pub anneal: AnnealSchedule,
    pub seed: u64,
}

impl TrainParams {
    /// One model covers the whole bit-rate range: each batch draws a
    /// Lagrangian from the grid together with a matching quantizer step,
    /// `delta_i = base_delta * sqrt(lambda_i / geomean(lambda))`, which
    /// keeps `lambda proportional to delta^2` across operating points.
    pub fn rate_point(&self, index: usize) -> (f64, f64) {
        let lambda = self.lambda1[index % self.lambda1.len()];
        let geo = self.lambda1.iter().map(|l| l.ln()).sum::<f64>() / self.lambda1.len() as f64;
        let delta = self.base_delta * (0.5 * (lambda.ln() - geo)).exp();
        (lambda, delta)
    }
}

/// One row of the loss trace (`J`, distortion and rate are per-epoch sums).
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub stage: String,
    pub epoch: usize,
    pub j: f64,
    pub d: f64,
    pub l: f64,
}

pub fn write_trace_csv(path: &std::path::Path, records: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("epoch,stage,J,D,L\n");
    for r in records {
        s.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.stage, r.j, r.d, r.l));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Oracle-opacity provider for one input image: Gaussian/DoG responses at
/// the level's scale, pooled to the step's grid.
pub struct ImageOracle<'a> {
    image: &'a Tensor,
    banks: RefCell<BTreeMap<(usize, usize), OracleBank>>,
}

impl<'a> ImageOracle<'a> {
    pub fn new(image: &'a Tensor) -> Self {
        ImageOracle {
            image,
            banks: RefCell::new(BTreeMap::new()),
        }
    }
}

impl OracleSource for ImageOracle<'_> {
    fn opacities(
        &self,
        level: usize,
        grid: StepGrid,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Tensor> {
        let mut banks = self.banks.borrow_mut();
        if !banks.contains_key(&(channels, level)) {
            banks.insert((channels, level), OracleBank::new(channels, level)?);
        }
        let bank = &banks[&(channels, level)];
        let pool = 1usize << level;
        let (py, px) = match grid {
            StepGrid::VerticalPhase => (pool, pool / 2),
            StepGrid::Subband => (pool, pool),
        };
        oracle_opacities_shaped(self.image, bank, py.max(1), px.max(1), height, width)
    }
}

struct BatchEval {
    j: f64,
    d: f64,
    l: f64,
    grads: GradStore,
}

fn eval_one(
    x: &Tensor,
    structure: &LiftingStructure,
    weights: &WeightStore,
    stage: &StageSpec,
    params: &TrainParams,
    lambda1: f64,
    base_delta: f64,
    temperature: f64,
) -> Result<BatchEval> {
    let oracle_holder;
    let oracle: Option<&dyn OracleSource> = if stage.oracle_opacities {
        oracle_holder = ImageOracle::new(x);
        Some(&oracle_holder)
    } else {
        None
    };
    let mut grads = GradStore::new();
    let (j, d, l) = match stage.objective {
        ObjectiveKind::RateDistortion => {
            let settings = RdSettings {
                levels: params.levels,
                base_delta,
                lambda1,
                temperature,
                mode: QuantMode::Hard,
            };
            let eval = rd_objective(x, structure, weights, &settings, oracle, Some(&mut grads))?;
            (eval.j, eval.distortion, eval.rate_bits)
        }
        ObjectiveKind::ProgressiveSelection => {
            let j = progressive_selection_objective(
                x,
                structure,
                weights,
                params.levels,
                oracle,
                Some(&mut grads),
            )?;
            (j, j, 0.0)
        }
    };
    Ok(BatchEval { j, d, l, grads })
}

/// Run one training stage over a dataset of level-shifted patches
/// (values centred around zero).  Deterministic for a fixed seed: batches
/// fan out across threads but gradients reduce in index order.
pub fn run_stage(
    stage: &StageSpec,
    dataset: &[Tensor],
    structure: &LiftingStructure,
    weights: &mut WeightStore,
    params: &TrainParams,
    records: &mut Vec<EpochRecord>,
) -> Result<()> {
    use rand::{Rng, SeedableRng};
    if dataset.is_empty() {
        return Err(Error::input("training dataset is empty"));
    }
    ensure_rate_params(weights, params.levels);
    if stage.objective == ObjectiveKind::RateDistortion && params.lr > 0.0 {
        objective::calibrate_rate_scales(dataset, structure, weights, params.levels)?;
    }
    if stage.reinit_opacities {
        let fresh = init_weights(structure, InitMode::Random, params.seed ^ 0x09AC);
        for (name, t) in fresh.iter() {
            if name.contains(".opac.") {
                weights.insert(name.clone(), t.clone());
            }
        }
    }
    let frozen_before: BTreeMap<String, Tensor> = weights
        .iter()
        .filter(|(n, _)| stage.freeze.is_frozen(n))
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(params.seed.wrapping_add(0x57A6E));
    let mut adam = AdamState::new();
    let mut initial_j = None;
    let mut high_epochs = 0usize;
    for epoch in 0..stage.epochs {
        let temperature = params.anneal.temperature(epoch);
        // Step-decayed learning rate: halves after each third of the budget.
        let third = (3 * epoch) / stage.epochs.max(1);
        let lr = params.lr * 0.5f64.powi(third as i32);
        let hyper = AdamHyper {
            lr,
            ..AdamHyper::default()
        };
        let (mut ej, mut ed, mut el) = (0.0, 0.0, 0.0);
        for chunk in dataset.chunks(params.batch.max(1)) {
            let (lambda1, base_delta) = params.rate_point(rng.gen_range(0..params.lambda1.len()));
            let evals: Vec<Result<BatchEval>> = chunk
                .par_iter()
                .map(|x| {
                    eval_one(x, structure, weights, stage, params, lambda1, base_delta, temperature)
                })
                .collect();
            let mut batch_grads = GradStore::new();
            for e in evals {
                let e = e?;
                ej += e.j;
                ed += e.d;
                el += e.l;
                batch_grads.merge(&e.grads);
            }
            batch_grads.scale(1.0 / chunk.len() as f64);
            batch_grads.retain(|name| !stage.freeze.is_frozen(name));
            if lr > 0.0 && !batch_grads.is_empty() {
                batch_grads.check_shapes(weights)?;
                adam_step(weights, &batch_grads, &mut adam, &hyper)?;
            }
        }
        records.push(EpochRecord {
            stage: stage.name.clone(),
            epoch,
            j: ej,
            d: ed,
            l: el,
        });
        let j0 = *initial_j.get_or_insert(ej);
        if ej > 10.0 * j0 {
            high_epochs += 1;
            if high_epochs >= 3 {
                return Err(Error::Numeric(format!(
                    "stage '{}' diverged: epoch {epoch} objective {ej:.3e} exceeds 10x the initial {j0:.3e} for 3 epochs",
                    stage.name
                )));
            }
        } else {
            high_epochs = 0;
        }
    }
    // Freeze masks are respected exactly.
    for (name, before) in &frozen_before {
        let after = weights.require(name)?;
        if after.data() != before.data() {
            return Err(Error::Numeric(format!(
                "frozen parameter '{name}' changed during stage '{}'",
                stage.name
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training manifests
// ---------------------------------------------------------------------------

/// Structured-text training manifest.
#[derive(Debug, Clone, Deserialize)]
pub struct Manifest {
    pub structure: String,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_blocks")]
    pub residual_blocks: usize,
    #[serde(default)]
    pub compact: bool,
    pub levels: usize,
    pub lambda1: Vec<f64>,
    pub seed: u64,
    pub corpus: String,
    #[serde(default = "default_patch")]
    pub patch: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_delta")]
    pub base_delta: f64,
    /// "base-equivalent" or "random".
    #[serde(default = "default_init")]
    pub init: String,
    #[serde(default)]
    pub stages: Vec<ManifestStage>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ManifestStage {
    pub name: String,
    /// "rd" or "ps".
    pub objective: String,
    pub epochs: usize,
    /// "none", "stage1" or "stage2".
    #[serde(default)]
    pub freeze: Option<String>,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub reinit_opacities: bool,
}

fn default_channels() -> usize {
    5
}
fn default_kernel() -> usize {
    5
}
fn default_blocks() -> usize {
    2
}
fn default_patch() -> usize {
    256
}
fn default_batch() -> usize {
    16
}
fn default_lr() -> f64 {
    1e-4
}
fn default_delta() -> f64 {
    4.0
}
fn default_init() -> String {
    "base-equivalent".into()
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("manifest: {e}")))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn net_config(&self) -> Result<crate::ops::NetConfig> {
        crate::ops::NetConfig::new(self.channels, self.kernel, self.residual_blocks, self.compact)
    }

    pub fn init_mode(&self) -> Result<InitMode> {
        match self.init.as_str() {
            "base-equivalent" => Ok(InitMode::BaseEquivalent),
            "random" => Ok(InitMode::Random),
            other => Err(Error::config(format!(
                "manifest: unknown init '{other}' (use base-equivalent|random)"
            ))),
        }
    }

    pub fn stage_specs(&self) -> Result<Vec<StageSpec>> {
        self.stages
            .iter()
            .map(|s| {
                let objective = match s.objective.as_str() {
                    "rd" => ObjectiveKind::RateDistortion,
                    "ps" => ObjectiveKind::ProgressiveSelection,
                    other => {
                        return Err(Error::config(format!(
                            "manifest stage '{}': unknown objective '{other}' (use rd|ps)",
                            s.name
                        )))
                    }
                };
                let freeze = match s.freeze.as_deref() {
                    None | Some("none") => FreezeRule::None,
                    Some("stage1") => FreezeRule::Stage1,
                    Some("stage2") => FreezeRule::Stage2,
                    Some(other) => {
                        return Err(Error::config(format!(
                            "manifest stage '{}': unknown freeze '{other}'",
                            s.name
                        )))
                    }
                };
                Ok(StageSpec {
                    name: s.name.clone(),
                    objective,
                    epochs: s.epochs,
                    freeze,
                    oracle_opacities: s.oracle,
                    reinit_opacities: s.reinit_opacities,
                })
            })
            .collect()
    }

    pub fn train_params(&self) -> TrainParams {
        TrainParams {
            levels: self.levels,
            lambda1: self.lambda1.clone(),
            base_delta: self.base_delta,
            batch: self.batch,
            lr: self.lr,
            anneal: AnnealSchedule::default(),
            seed: self.seed,
        }
    }
}

/// The classic oracle-opacity schedule as a ready-made stage list.
pub fn oracle_schedule(epochs: [usize; 3]) -> Vec<StageSpec> {
    vec![
        StageSpec {
            name: "stage1".into(),
            objective: ObjectiveKind::RateDistortion,
            epochs: epochs[0],
            freeze: FreezeRule::Stage1,
            oracle_opacities: true,
            reinit_opacities: false,
        },
        StageSpec {
            name: "stage2".into(),
            objective: ObjectiveKind::RateDistortion,
            epochs: epochs[1],
            freeze: FreezeRule::Stage2,
            oracle_opacities: false,
            reinit_opacities: true,
        },
        StageSpec {
            name: "stage3".into(),
            objective: ObjectiveKind::RateDistortion,
            epochs: epochs[2],
            freeze: FreezeRule::None,
            oracle_opacities: false,
            reinit_opacities: false,
        },
    ]
}
