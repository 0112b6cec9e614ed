//! `liftwave`: encode/decode images with lifting-based wavelet-like
//! transforms (fixed or learned), train the learned operators, and evaluate
//! rate-distortion performance.

use clap::{Parser, Subcommand};
use liftwave_core::codestream::{decode_image, encode_image, parse_header, payload_bits};
use liftwave_core::image::{load_luminance, save_pgm};
use liftwave_core::lifting::{analyze, probe_support};
use liftwave_core::metrics::{
    bd_rate, ms_ssim, psnr, read_rd_csv, ssim, write_rd_csv, RDCurve, RDPoint, MSSSIM_MIN_EXTENT,
};
use liftwave_core::ops::{
    count_params, init_weights, make_structure, parse_structure_id, structure_id, InitMode,
};
use liftwave_core::store::{digest_bytes, WeightStore};
use liftwave_core::training::objective::ensure_rate_params;
use liftwave_core::training::patches::PatchLoader;
use liftwave_core::training::{
    run_stage, write_trace_csv, FreezeRule, Manifest, ObjectiveKind, StageSpec,
};
use liftwave_core::{Error, Tensor};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "liftwave", version, about = "Scalable wavelet-like image codec with learned lifting operators")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a PGM/PPM image into a .lwav codestream.
    Encode {
        #[arg(long)]
        input: PathBuf,
        /// Weight container; required for structures with learned operators.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Structure id, e.g. legall53, cdf97, hybrid97-9c-compact.
        #[arg(long)]
        structure: String,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        /// Base quantizer step (finer steps per level are derived from it).
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Decode a codestream back to PGM, optionally from a byte-budget prefix.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Decode only the first B bytes (quality-scalable truncation).
        #[arg(long)]
        max_bytes: Option<usize>,
    },
    /// Progressive-selection pre-training from a manifest.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        /// Override the epoch count of the single pre-training stage.
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long)]
        weights_out: PathBuf,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Run the manifest's staged training plan.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Resume from an existing weight container instead of initialising.
        #[arg(long)]
        weights_in: Option<PathBuf>,
        #[arg(long)]
        weights_out: PathBuf,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Sweep the quantizer step to produce an RD curve CSV.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        structure: String,
        #[arg(long, default_value_t = 5)]
        levels: usize,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 0.1)]
        min_bpp: f64,
        #[arg(long, default_value_t = 1.0)]
        max_bpp: f64,
    },
    /// Bjontegaard rate difference between two RD CSVs (negative = savings).
    Bdrate {
        #[arg(long)]
        anchor: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value = "psnr")]
        metric: String,
    },
    /// Region of support and parameter count of a structure.
    ProbeSupport {
        structure: String,
        #[arg(long, default_value_t = 1)]
        levels: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Input(_) | Error::Evaluation(_) => 2,
        Error::Io(_) => 3,
        Error::Format { .. } | Error::Decode { .. } | Error::DigestMismatch => 4,
        Error::Numeric(_) => 5,
    }
}

fn main() {
    if let Ok(threads) = std::env::var("LIFTWAVE_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

/// Weight container plus the digest of its exact bytes.
fn load_weights(path: &Path) -> Result<(WeightStore, [u8; 32]), Error> {
    let bytes = std::fs::read(path)?;
    let store = WeightStore::deserialize(&bytes)?;
    Ok((store, digest_bytes(&bytes)))
}

fn resolve_weights(
    structure: &str,
    weights: &Option<PathBuf>,
) -> Result<(WeightStore, [u8; 32]), Error> {
    let (name, cfg) = parse_structure_id(structure)?;
    let (s, template) = make_structure(&name, cfg)?;
    match weights {
        Some(p) => {
            let (store, digest) = load_weights(p)?;
            liftwave_core::ops::validate_weights(&s, &store)?;
            Ok((store, digest))
        }
        None if template.is_empty() => Ok((WeightStore::new(), [0u8; 32])),
        None => Err(Error::config(format!(
            "structure '{structure}' has learned operators; pass --weights"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Command::Encode {
            input,
            weights,
            structure,
            levels,
            delta,
            output,
        } => {
            let image = load_luminance(&input)?;
            let (name, cfg) = parse_structure_id(&structure)?;
            let (store, digest) = resolve_weights(&structure, &weights)?;
            let bytes = encode_image(&image, &name, cfg, &store, digest, levels, delta)?;
            std::fs::write(&output, &bytes)?;
            let bpp = bytes.len() as f64 * 8.0 / (image.height() * image.width()) as f64;
            println!("{bpp:.4}");
        }
        Command::Decode {
            input,
            weights,
            output,
            max_bytes,
        } => {
            let bytes = std::fs::read(&input)?;
            let header = parse_header(&bytes)?;
            let id = structure_id(&header.structure, &header.config);
            let needs_weights = {
                let (_, template) = make_structure(&header.structure, header.config)?;
                !template.is_empty()
            };
            let loaded;
            let w = if needs_weights {
                let path = weights.ok_or_else(|| {
                    Error::config(format!("codestream uses '{id}'; pass --weights"))
                })?;
                loaded = load_weights(&path)?;
                Some((&loaded.0, loaded.1))
            } else {
                None
            };
            let (rec, _) = decode_image(&bytes, w, max_bytes)?;
            save_pgm(&output, &rec)?;
        }
        Command::Pretrain {
            manifest,
            epochs,
            weights_out,
            trace_out,
        } => {
            let m = Manifest::load(&manifest)?;
            let stages = vec![StageSpec {
                name: "ps".into(),
                objective: ObjectiveKind::ProgressiveSelection,
                epochs,
                freeze: FreezeRule::None,
                oracle_opacities: false,
                reinit_opacities: false,
            }];
            train_with(&m, &manifest, None, &stages, &weights_out, trace_out.as_deref())?;
        }
        Command::Train {
            manifest,
            weights_in,
            weights_out,
            trace_out,
        } => {
            let m = Manifest::load(&manifest)?;
            let stages = m.stage_specs()?;
            if stages.is_empty() {
                return Err(Error::config("manifest has no [[stages]]"));
            }
            train_with(
                &m,
                &manifest,
                weights_in.as_deref(),
                &stages,
                &weights_out,
                trace_out.as_deref(),
            )?;
        }
        Command::Eval {
            input,
            weights,
            structure,
            levels,
            output,
            points,
            min_bpp,
            max_bpp,
        } => {
            let image = load_luminance(&input)?;
            let curves = eval_sweep(&image, &structure, &weights, levels, points, min_bpp, max_bpp)?;
            write_rd_csv(&output, &curves)?;
            for c in &curves {
                for p in &c.points {
                    println!("{},{:.4},{:.4}", c.metric, p.rate_bpp, p.quality);
                }
            }
        }
        Command::Bdrate {
            anchor,
            test,
            metric,
        } => {
            let pick = |path: &Path| -> Result<RDCurve, Error> {
                read_rd_csv(path)?
                    .into_iter()
                    .find(|c| c.metric == metric)
                    .ok_or_else(|| {
                        Error::Evaluation(format!(
                            "no '{metric}' curve in {}",
                            path.display()
                        ))
                    })
            };
            let a = pick(&anchor)?;
            let t = pick(&test)?;
            let bd = bd_rate(&a, &t)?;
            println!("{bd:+.4}%");
        }
        Command::ProbeSupport {
            structure,
            levels,
            seed,
        } => {
            let (name, cfg) = parse_structure_id(&structure)?;
            let (s, _) = make_structure(&name, cfg)?;
            let w = init_weights(&s, InitMode::Random, seed);
            let (h, wd) = probe_support(&s, &w, levels)?;
            println!("support: {h} x {wd}");
            println!("parameters: {}", count_params(&s));
        }
    }
    Ok(())
}

fn train_with(
    m: &Manifest,
    manifest_path: &Path,
    weights_in: Option<&Path>,
    stages: &[StageSpec],
    weights_out: &Path,
    trace_out: Option<&Path>,
) -> Result<(), Error> {
    let cfg = m.net_config()?;
    let (structure, _) = make_structure(&m.structure, cfg)?;
    let corpus_dir = {
        let p = PathBuf::from(&m.corpus);
        if p.is_absolute() {
            p
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(p)
        }
    };
    let mut loader = PatchLoader::open(&corpus_dir, m.patch, m.batch, m.seed)?;
    for warn in &loader.skipped {
        eprintln!("warning: skipped {warn}");
    }
    // Materialise a deterministic patch set; training epochs iterate it.
    let patch_count = (m.batch * 8).max(loader.image_count());
    let mut dataset = Vec::with_capacity(patch_count);
    while dataset.len() < patch_count {
        dataset.extend(loader.next_batch());
    }
    dataset.truncate(patch_count);
    for p in &mut dataset {
        *p = p.map(|v| v - liftwave_core::codestream::LEVEL_SHIFT);
    }
    let mut weights = match weights_in {
        Some(p) => load_weights(p)?.0,
        None => init_weights(&structure, m.init_mode()?, m.seed),
    };
    ensure_rate_params(&mut weights, m.levels);
    let params = m.train_params();
    let mut records = Vec::new();
    for stage in stages {
        eprintln!("stage '{}' ({} epochs)...", stage.name, stage.epochs);
        run_stage(stage, &dataset, &structure, &mut weights, &params, &mut records)?;
        if let Some(last) = records.last() {
            eprintln!("  J = {:.3}", last.j);
        }
    }
    weights.save(weights_out)?;
    if let Some(path) = trace_out {
        write_trace_csv(path, &records)?;
    }
    Ok(())
}

/// Bisect the base step towards each bpp target (payload bits only), then
/// measure the real container and full decode at the chosen step.
fn eval_sweep(
    image: &Tensor,
    structure: &str,
    weights: &Option<PathBuf>,
    levels: usize,
    points: usize,
    min_bpp: f64,
    max_bpp: f64,
) -> Result<Vec<RDCurve>, Error> {
    let (name, cfg) = parse_structure_id(structure)?;
    let (s, _) = make_structure(&name, cfg)?;
    let (store, digest) = resolve_weights(structure, weights)?;
    let pixels = (image.height() * image.width()) as f64;
    let shifted = image.map(|v| v - liftwave_core::codestream::LEVEL_SHIFT);
    let pyramid = analyze(&shifted, &s, &store, levels)?;
    let bpp_of = |delta: f64| -> Result<f64, Error> {
        Ok(payload_bits(&pyramid, levels, delta)? as f64 / pixels)
    };
    let mut psnr_points = Vec::new();
    let mut ssim_points = Vec::new();
    let mut msssim_points = Vec::new();
    for i in 0..points.max(2) {
        let target = min_bpp + (max_bpp - min_bpp) * i as f64 / (points.max(2) - 1) as f64;
        let (mut lo, mut hi) = (1e-3f64, 2048.0f64); // delta bounds
        for _ in 0..40 {
            let mid = (lo * hi).sqrt();
            if bpp_of(mid)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let delta = (lo * hi).sqrt();
        let bytes = encode_image(image, &name, cfg, &store, digest, levels, delta)?;
        let bpp = bytes.len() as f64 * 8.0 / pixels;
        let w = if store.is_empty() {
            None
        } else {
            Some((&store, digest))
        };
        let (rec, _) = decode_image(&bytes, w, None)?;
        let rec = liftwave_core::image::to_u8_plane(&rec);
        psnr_points.push(RDPoint {
            rate_bpp: bpp,
            quality: psnr(image, &rec, 255.0)?,
        });
        ssim_points.push(RDPoint {
            rate_bpp: bpp,
            quality: ssim(image, &rec, 255.0)?,
        });
        if image.height() >= MSSSIM_MIN_EXTENT && image.width() >= MSSSIM_MIN_EXTENT {
            msssim_points.push(RDPoint {
                rate_bpp: bpp,
                quality: ms_ssim(image, &rec, 255.0)?,
            });
        }
    }
    let mut curves = vec![
        RDCurve::new("psnr", psnr_points),
        RDCurve::new("ssim", ssim_points),
    ];
    if !msssim_points.is_empty() {
        curves.push(RDCurve::new("msssim", msssim_points));
    }
    Ok(curves)
}
