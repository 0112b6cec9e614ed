//! Stage-runner contracts: freeze masks, determinism, no-op optimisation,
//! divergence handling and manifest parsing.

use liftwave_core::coder::AnnealSchedule;
use liftwave_core::ops::{init_weights, make_structure, InitMode, NetConfig};
use liftwave_core::training::corpus::synthetic_texture_corpus;
use liftwave_core::training::objective::ensure_rate_params;
use liftwave_core::training::{
    run_stage, FreezeRule, Manifest, ObjectiveKind, StageSpec, TrainParams,
};
use liftwave_core::WeightStore;

fn shifted_corpus(count: usize, size: usize, seed: u64) -> Vec<liftwave_core::Tensor> {
    synthetic_texture_corpus(count, size, seed)
        .into_iter()
        .map(|t| t.map(|v| v - 128.0))
        .collect()
}

fn params(lr: f64, seed: u64) -> TrainParams {
    TrainParams {
        levels: 2,
        lambda1: vec![1.0, 4.0],
        base_delta: 4.0,
        batch: 4,
        lr,
        anneal: AnnealSchedule::default(),
        seed,
    }
}

fn rd_stage(epochs: usize, freeze: FreezeRule) -> StageSpec {
    StageSpec {
        name: "test".into(),
        objective: ObjectiveKind::RateDistortion,
        epochs,
        freeze,
        oracle_opacities: false,
        reinit_opacities: false,
    }
}

#[test]
fn zero_learning_rate_is_a_no_op_with_flat_trace() {
    let images = shifted_corpus(4, 32, 1);
    let (s, _) = make_structure("hybrid53", NetConfig::standard(5)).unwrap();
    let mut weights = init_weights(&s, InitMode::BaseEquivalent, 2);
    ensure_rate_params(&mut weights, 2);
    let before: Vec<(String, Vec<f64>)> = weights
        .iter()
        .map(|(n, t)| (n.clone(), t.data().to_vec()))
        .collect();
    let mut records = Vec::new();
    run_stage(
        &rd_stage(3, FreezeRule::None),
        &images,
        &s,
        &mut weights,
        &params(0.0, 3),
        &mut records,
    )
    .unwrap();
    for (n, data) in before {
        assert_eq!(weights.get(&n).unwrap().data(), data.as_slice(), "{n}");
    }
    assert_eq!(records.len(), 3);
    assert_eq!(records[0].j, records[1].j);
    assert_eq!(records[1].j, records[2].j);
}

#[test]
fn stage1_freeze_masks_are_respected_exactly() {
    let images = shifted_corpus(4, 32, 4);
    let (s, _) = make_structure("custom4s", NetConfig::new(3, 3, 1, false).unwrap()).unwrap();
    let mut weights = init_weights(&s, InitMode::Random, 5);
    ensure_rate_params(&mut weights, 2);
    let frozen: Vec<(String, Vec<f64>)> = weights
        .iter()
        .filter(|(n, _)| FreezeRule::Stage1.is_frozen(n))
        .map(|(n, t)| (n.clone(), t.data().to_vec()))
        .collect();
    assert!(!frozen.is_empty());
    let mut records = Vec::new();
    run_stage(
        &StageSpec {
            oracle_opacities: true,
            ..rd_stage(2, FreezeRule::Stage1)
        },
        &images,
        &s,
        &mut weights,
        &params(1e-3, 6),
        &mut records,
    )
    .unwrap();
    for (n, data) in frozen {
        assert_eq!(weights.get(&n).unwrap().data(), data.as_slice(), "{n}");
    }
    // Unfrozen proposals did move.
    let moved = weights
        .iter()
        .filter(|(n, _)| n.contains(".prop.") && !n.ends_with(".prop.0"))
        .any(|(n, t)| {
            let fresh = init_weights(&s, InitMode::Random, 5);
            fresh.get(n).unwrap().data() != t.data()
        });
    assert!(moved);
}

#[test]
fn single_proposal_stage1_moves_only_rate_scales() {
    // With N = 1 the lone proposal is the pinned one, so stage 1 freezes
    // every operator parameter and only rate-model scales can move.
    let images = shifted_corpus(3, 32, 7);
    let (s, _) = make_structure("custom4s", NetConfig::new(1, 3, 1, false).unwrap()).unwrap();
    let mut weights = init_weights(&s, InitMode::Random, 8);
    ensure_rate_params(&mut weights, 2);
    let before: Vec<(String, Vec<f64>)> = weights
        .iter()
        .map(|(n, t)| (n.clone(), t.data().to_vec()))
        .collect();
    let mut records = Vec::new();
    run_stage(
        &StageSpec {
            oracle_opacities: true,
            ..rd_stage(2, FreezeRule::Stage1)
        },
        &images,
        &s,
        &mut weights,
        &params(1e-2, 9),
        &mut records,
    )
    .unwrap();
    let mut rate_moved = false;
    for (n, data) in before {
        let now = weights.get(&n).unwrap().data();
        if n.starts_with("rate.") {
            rate_moved |= now != data.as_slice();
        } else {
            assert_eq!(now, data.as_slice(), "{n} should be frozen");
        }
    }
    assert!(rate_moved);
}

#[test]
fn training_is_deterministic_for_a_fixed_seed() {
    let run = || {
        let images = shifted_corpus(4, 32, 10);
        let (s, _) = make_structure("hybrid53", NetConfig::new(3, 3, 1, false).unwrap()).unwrap();
        let mut weights = init_weights(&s, InitMode::BaseEquivalent, 11);
        ensure_rate_params(&mut weights, 2);
        let mut records = Vec::new();
        run_stage(
            &rd_stage(3, FreezeRule::None),
            &images,
            &s,
            &mut weights,
            &params(1e-3, 12),
            &mut records,
        )
        .unwrap();
        let js: Vec<f64> = records.iter().map(|r| r.j).collect();
        (js, weights)
    };
    let (ja, wa) = run();
    let (jb, wb) = run();
    assert_eq!(ja, jb);
    for (n, t) in wa.iter() {
        assert_eq!(t.data(), wb.get(n).unwrap().data(), "{n}");
    }
}

#[test]
fn runaway_learning_rates_halt_with_a_report() {
    let images = shifted_corpus(3, 32, 13);
    let (s, _) = make_structure("custom4s", NetConfig::new(3, 3, 1, false).unwrap()).unwrap();
    let mut weights = init_weights(&s, InitMode::Random, 14);
    ensure_rate_params(&mut weights, 2);
    let mut records = Vec::new();
    let err = run_stage(
        &rd_stage(30, FreezeRule::None),
        &images,
        &s,
        &mut weights,
        &params(1e6, 15),
        &mut records,
    )
    .unwrap_err();
    assert!(matches!(err, liftwave_core::Error::Numeric(_)), "{err}");
}

#[test]
fn empty_datasets_are_rejected() {
    let (s, _) = make_structure("legall53", NetConfig::standard(5)).unwrap();
    let mut weights = WeightStore::new();
    let mut records = Vec::new();
    assert!(run_stage(
        &rd_stage(1, FreezeRule::None),
        &[],
        &s,
        &mut weights,
        &params(1e-3, 16),
        &mut records,
    )
    .is_err());
}

#[test]
fn manifest_round_trip_and_validation() {
    let text = r#"
structure = "hybrid97"
channels = 5
levels = 2
lambda1 = [0.25, 1.0, 4.0, 16.0]
seed = 7
corpus = "assets/corpus"
patch = 64
batch = 8
lr = 3e-4
base_delta = 4.0
init = "base-equivalent"

[[stages]]
name = "ps"
objective = "ps"
epochs = 30

[[stages]]
name = "stage1"
objective = "rd"
epochs = 10
freeze = "stage1"
oracle = true

[[stages]]
name = "stage2"
objective = "rd"
epochs = 10
freeze = "stage2"
reinit_opacities = true

[[stages]]
name = "stage3"
objective = "rd"
epochs = 5
"#;
    let m = Manifest::parse(text).unwrap();
    assert_eq!(m.structure, "hybrid97");
    assert_eq!(m.lambda1.len(), 4);
    let stages = m.stage_specs().unwrap();
    assert_eq!(stages.len(), 4);
    assert_eq!(stages[0].objective, ObjectiveKind::ProgressiveSelection);
    assert_eq!(stages[1].freeze, FreezeRule::Stage1);
    assert!(stages[1].oracle_opacities);
    assert!(stages[2].reinit_opacities);
    assert_eq!(stages[3].freeze, FreezeRule::None);
    assert!(Manifest::parse("structure = 3").is_err());
    let bad = text.replace("objective = \"ps\"", "objective = \"nope\"");
    assert!(Manifest::parse(&bad).unwrap().stage_specs().is_err());
}
