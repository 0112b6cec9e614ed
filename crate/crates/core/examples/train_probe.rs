use liftwave_core::codestream::{payload_bits, quantized_pyramid};
use liftwave_core::coder::AnnealSchedule;
use liftwave_core::lifting::{analyze, synthesize, LiftingStructure};
use liftwave_core::metrics::{bd_rate, psnr, RDCurve, RDPoint};
use liftwave_core::ops::{init_weights, make_structure, InitMode, NetConfig};
use liftwave_core::training::corpus::synthetic_texture_corpus;
use liftwave_core::training::objective::ensure_rate_params;
use liftwave_core::training::{run_stage, FreezeRule, ObjectiveKind, StageSpec, TrainParams};
use liftwave_core::{Tensor, WeightStore};

fn rd_curve(images: &[Tensor], s: &LiftingStructure, w: &WeightStore, levels: usize) -> RDCurve {
    let deltas = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    let mut points = Vec::new();
    for &d in &deltas {
        let (mut bits, mut q, mut n) = (0usize, 0.0, 0);
        for img in images {
            let shifted = img.map(|v| v - 128.0);
            let pyr = analyze(&shifted, s, w, levels).unwrap();
            bits += payload_bits(&pyr, levels, d).unwrap();
            let rec = synthesize(&quantized_pyramid(&pyr, levels, d).unwrap(), s, w).unwrap();
            let rec = rec.map(|v| (v + 128.0).round().clamp(0.0, 255.0));
            q += psnr(img, &rec, 255.0).unwrap();
            n += img.len();
        }
        points.push(RDPoint { rate_bpp: bits as f64 / n as f64, quality: q / images.len() as f64 });
    }
    points.reverse();
    RDCurve::new("psnr", points)
}

fn main() {
    let lr: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let images = synthetic_texture_corpus(8, 64, 2024);
    let shifted: Vec<_> = images.iter().map(|t| t.map(|v| v - 128.0)).collect();
    let cfg = NetConfig::standard(5);
    let (structure, _) = make_structure("hybrid97", cfg).unwrap();
    let mut weights = init_weights(&structure, InitMode::BaseEquivalent, 1);
    ensure_rate_params(&mut weights, 2);
    let base_curve = rd_curve(&images, &structure, &weights, 2);
    println!("base curve: {:?}", base_curve.points.iter().map(|p| (p.rate_bpp, p.quality)).collect::<Vec<_>>());

    let params = TrainParams {
        levels: 2, lambda1: vec![0.05, 0.8, 12.8, 204.8], base_delta: 4.0,
        batch: 8, lr, anneal: AnnealSchedule::default(), seed: 9,
    };
    let skip_ps = std::env::var("SKIP_PS").is_ok();
    if !skip_ps {
        let mut records = Vec::new();
        run_stage(&StageSpec { name: "ps".into(), objective: ObjectiveKind::ProgressiveSelection, epochs: 30, freeze: FreezeRule::None, oracle_opacities: false, reinit_opacities: false },
            &shifted, &structure, &mut weights, &params, &mut records).unwrap();
        println!("PS: J {:.1} -> {:.1} ({:.2}%)", records[0].j, records.last().unwrap().j,
            100.0*(records[0].j-records.last().unwrap().j)/records[0].j);
    }
    let rd_lr: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let rd_batch: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(2);
    let rd_params = TrainParams { batch: rd_batch, lr: rd_lr, ..params.clone() };
    let mut rec2 = Vec::new();
    run_stage(&StageSpec { name: "rd".into(), objective: ObjectiveKind::RateDistortion, epochs: 20, freeze: FreezeRule::None, oracle_opacities: false, reinit_opacities: false },
        &shifted, &structure, &mut weights, &rd_params, &mut rec2).unwrap();
    println!("RD: J {:.1} -> {:.1} ({:.2}%)", rec2[0].j, rec2.last().unwrap().j,
        100.0*(rec2[0].j-rec2.last().unwrap().j)/rec2[0].j);

    let trained_curve = rd_curve(&images, &structure, &weights, 2);
    println!("trained curve: {:?}", trained_curve.points.iter().map(|p| (p.rate_bpp, p.quality)).collect::<Vec<_>>());
    let bd = bd_rate(&base_curve, &trained_curve).unwrap();
    println!("BD-rate trained vs base-equivalent: {bd:.3}% (negative = savings)");
}
