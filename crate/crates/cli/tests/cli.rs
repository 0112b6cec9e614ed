//! End-to-end checks of the `liftwave` binary: encode/decode round trips,
//! digest enforcement, truncated decodes, training drivers and the
//! evaluation tools.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_liftwave"))
}

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("liftwave_cli_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn load_pgm(path: &Path) -> (usize, usize, Vec<u8>) {
    let bytes = std::fs::read(path).unwrap();
    let text = String::from_utf8_lossy(&bytes[..20.min(bytes.len())]).to_string();
    let mut parts = text.split_ascii_whitespace();
    assert_eq!(parts.next(), Some("P5"));
    let w: usize = parts.next().unwrap().parse().unwrap();
    let h: usize = parts.next().unwrap().parse().unwrap();
    let data = bytes[bytes.len() - w * h..].to_vec();
    (h, w, data)
}

fn psnr_u8(a: &[u8], b: &[u8]) -> f64 {
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }
}

#[test]
fn encode_decode_round_trip_on_the_bundled_image() {
    let dir = tmp_dir("roundtrip");
    let input = assets().join("test_image.pgm");
    let stream = dir.join("out.lwav");
    let rec = dir.join("rec.pgm");
    let out = run_ok(
        bin()
            .args(["encode", "--structure", "legall53", "--levels", "5", "--delta", "0.9"])
            .arg("--input")
            .arg(&input)
            .arg("--output")
            .arg(&stream),
    );
    let bpp: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(bpp > 0.01 && bpp < 8.0, "bpp {bpp}");
    run_ok(
        bin()
            .args(["decode"])
            .arg("--input")
            .arg(&stream)
            .arg("--output")
            .arg(&rec),
    );
    let (h, w, rec_data) = load_pgm(&rec);
    let (sh, sw, src_data) = load_pgm(&input);
    assert_eq!((h, w), (sh, sw));
    let p = psnr_u8(&src_data, &rec_data);
    assert!(p.is_finite() && p >= 30.0, "psnr {p}");
}

#[test]
fn truncated_decodes_improve_monotonically() {
    let dir = tmp_dir("truncate");
    let input = assets().join("test_image.pgm");
    let stream = dir.join("out.lwav");
    run_ok(
        bin()
            .args(["encode", "--structure", "cdf97", "--levels", "5", "--delta", "0.2"])
            .arg("--input")
            .arg(&input)
            .arg("--output")
            .arg(&stream),
    );
    let total = std::fs::metadata(&stream).unwrap().len() as usize;
    let (_, _, src) = load_pgm(&input);
    let mut quality = Vec::new();
    for (tag, frac) in [("q25", 0.25), ("q50", 0.5), ("q100", 1.0)] {
        let rec = dir.join(format!("{tag}.pgm"));
        run_ok(
            bin()
                .args(["decode", "--max-bytes", &((total as f64 * frac) as usize).to_string()])
                .arg("--input")
                .arg(&stream)
                .arg("--output")
                .arg(&rec),
        );
        let (_, _, data) = load_pgm(&rec);
        quality.push(psnr_u8(&src, &data));
    }
    assert!(
        quality[0] < quality[1] && quality[1] < quality[2],
        "psnr not strictly increasing: {quality:?}"
    );
    // Full budget is identical to an untruncated decode.
    let full = dir.join("full.pgm");
    run_ok(
        bin()
            .args(["decode"])
            .arg("--input")
            .arg(&stream)
            .arg("--output")
            .arg(&full),
    );
    assert_eq!(
        std::fs::read(&full).unwrap(),
        std::fs::read(dir.join("q100.pgm")).unwrap()
    );
}

#[test]
fn budget_below_the_header_is_a_format_error() {
    let dir = tmp_dir("header_budget");
    let input = assets().join("test_image.pgm");
    let stream = dir.join("out.lwav");
    run_ok(
        bin()
            .args(["encode", "--structure", "legall53", "--levels", "3", "--delta", "1.0"])
            .arg("--input")
            .arg(&input)
            .arg("--output")
            .arg(&stream),
    );
    let out = bin()
        .args(["decode", "--max-bytes", "16"])
        .arg("--input")
        .arg(&stream)
        .arg("--output")
        .arg(dir.join("never.pgm"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn wrong_digest_weights_are_refused_with_a_distinct_exit_code() {
    use liftwave_core::ops::{init_weights, make_structure, InitMode, NetConfig};
    let dir = tmp_dir("digest");
    let input = assets().join("test_image.pgm");
    // "hybrid53-3c" parses to the standard config with N = 3.
    let cfg = NetConfig::standard(3);
    let (s, _) = make_structure("hybrid53", cfg).unwrap();
    let enc_path = dir.join("enc.lwnn");
    let other_path = dir.join("other.lwnn");
    init_weights(&s, InitMode::BaseEquivalent, 1).save(&enc_path).unwrap();
    init_weights(&s, InitMode::Random, 2).save(&other_path).unwrap();
    let stream = dir.join("out.lwav");
    run_ok(
        bin()
            .args(["encode", "--structure", "hybrid53-3c", "--levels", "2", "--delta", "1.0"])
            .arg("--input")
            .arg(&input)
            .arg("--weights")
            .arg(&enc_path)
            .arg("--output")
            .arg(&stream),
    );
    // Matching weights decode fine.
    run_ok(
        bin()
            .args(["decode"])
            .arg("--input")
            .arg(&stream)
            .arg("--weights")
            .arg(&enc_path)
            .arg("--output")
            .arg(dir.join("ok.pgm")),
    );
    // Mismatched weights exit with the format/digest code, distinct from IO.
    let out = bin()
        .args(["decode"])
        .arg("--input")
        .arg(&stream)
        .arg("--weights")
        .arg(&other_path)
        .arg("--output")
        .arg(dir.join("bad.pgm"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4));
    // Missing input file is an IO error.
    let out = bin()
        .args(["decode"])
        .arg("--input")
        .arg(dir.join("missing.lwav"))
        .arg("--output")
        .arg(dir.join("x.pgm"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn all_black_input_compresses_to_a_near_degenerate_payload() {
    let dir = tmp_dir("black");
    let black = dir.join("black.pgm");
    let mut bytes = b"P5\n512 512\n255\n".to_vec();
    bytes.extend(std::iter::repeat(0u8).take(512 * 512));
    std::fs::write(&black, bytes).unwrap();
    let out = run_ok(
        bin()
            .args(["encode", "--structure", "legall53", "--levels", "5", "--delta", "1.0"])
            .arg("--input")
            .arg(&black)
            .arg("--output")
            .arg(dir.join("black.lwav")),
    );
    let bpp: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    assert!(bpp < 0.05, "bpp {bpp}");
}

#[test]
fn unknown_structures_and_bad_usage_exit_with_code_2() {
    let dir = tmp_dir("usage");
    let out = bin()
        .args(["encode", "--structure", "wavelet9000", "--levels", "2", "--delta", "1.0"])
        .arg("--input")
        .arg(assets().join("test_image.pgm"))
        .arg("--output")
        .arg(dir.join("x.lwav"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin().args(["no-such-command"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_emits_rd_points_spanning_the_requested_range() {
    let dir = tmp_dir("eval");
    let csv = dir.join("rd.csv");
    run_ok(
        bin()
            .args(["eval", "--structure", "legall53", "--levels", "5", "--points", "10"])
            .arg("--input")
            .arg(assets().join("test_image.pgm"))
            .arg("--output")
            .arg(&csv),
    );
    let curves = liftwave_core::metrics::read_rd_csv(&csv).unwrap();
    let psnr_curve = curves.iter().find(|c| c.metric == "psnr").unwrap();
    assert!(psnr_curve.points.len() >= 8, "{}", psnr_curve.points.len());
    let lo = psnr_curve.points.first().unwrap().rate_bpp;
    let hi = psnr_curve.points.last().unwrap().rate_bpp;
    assert!(lo <= 0.15, "lowest point {lo}");
    assert!(hi >= 0.9, "highest point {hi}");
    assert!(curves.iter().any(|c| c.metric == "msssim"));
}

#[test]
fn bdrate_of_a_curve_against_itself_is_zero() {
    let dir = tmp_dir("bdrate");
    let csv = dir.join("c.csv");
    let curve = liftwave_core::metrics::RDCurve::new(
        "psnr",
        (1..=5)
            .map(|i| liftwave_core::metrics::RDPoint {
                rate_bpp: 0.2 * i as f64,
                quality: 30.0 + 3.0 * i as f64,
            })
            .collect(),
    );
    liftwave_core::metrics::write_rd_csv(&csv, &[curve]).unwrap();
    let out = run_ok(bin().args(["bdrate"]).arg("--anchor").arg(&csv).arg("--test").arg(&csv));
    let text = String::from_utf8_lossy(&out.stdout);
    let val: f64 = text.trim().trim_end_matches('%').parse().unwrap();
    assert!(val.abs() < 1e-6, "{text}");
}

#[test]
fn probe_support_prints_the_fixed_footprints() {
    let out = run_ok(bin().args(["probe-support", "legall53"]));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(text.contains("support: 5 x 5"), "{text}");
    assert!(text.contains("parameters: 0"), "{text}");
}

#[test]
fn pretrain_and_train_produce_weights_and_traces() {
    let dir = tmp_dir("train");
    let manifest = dir.join("train.toml");
    std::fs::write(
        &manifest,
        format!(
            r#"
structure = "hybrid53"
channels = 3
kernel = 3
residual_blocks = 1
levels = 2
lambda1 = [1.0, 4.0]
seed = 5
corpus = "{}"
patch = 32
batch = 4
lr = 1e-4
base_delta = 4.0

[[stages]]
name = "stage1"
objective = "rd"
epochs = 1
freeze = "stage1"
oracle = true

[[stages]]
name = "stage3"
objective = "rd"
epochs = 1
"#,
            assets().join("corpus").display()
        ),
    )
    .unwrap();
    let weights = dir.join("model.lwnn");
    let trace = dir.join("trace.csv");
    run_ok(
        bin()
            .args(["pretrain", "--epochs", "2"])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--weights-out")
            .arg(&weights)
            .arg("--trace-out")
            .arg(&trace),
    );
    assert!(weights.exists());
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().count() >= 3, "{text}");
    // Staged training resumes from the pretrained container.
    let weights2 = dir.join("model2.lwnn");
    run_ok(
        bin()
            .args(["train"])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--weights-in")
            .arg(&weights)
            .arg("--weights-out")
            .arg(&weights2)
            .arg("--trace-out")
            .arg(dir.join("trace2.csv")),
    );
    let store = liftwave_core::WeightStore::load(&weights2).unwrap();
    assert!(store.names().any(|n| n.starts_with("H2L.prop.")));
    assert!(store.names().any(|n| n.starts_with("rate.")));
}
