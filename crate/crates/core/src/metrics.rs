//! Quantitative evaluation: PSNR, SSIM, MS-SSIM and Bjontegaard rate
//! savings between rate-distortion curves.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `10 log10(peak^2 / MSE)`; identical images report infinity.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::input("psnr: extent mismatch"));
    }
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Mean SSIM map and mean contrast-structure term over the valid region
/// (no padding), 11x11 Gaussian window, C1=(0.01 peak)^2, C2=(0.03 peak)^2.
fn ssim_cs(a: &Tensor, b: &Tensor, peak: f64) -> Result<(f64, f64)> {
    if a.shape() != b.shape() {
        return Err(Error::input("ssim: extent mismatch"));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::input("ssim: image smaller than the 11x11 window"));
    }
    let win = gaussian_window();
    let c1 = (0.01 * peak) * (0.01 * peak);
    let c2 = (0.03 * peak) * (0.03 * peak);
    // Separable windowed moments.
    let ww = w - SSIM_WINDOW + 1;
    let hh = h - SSIM_WINDOW + 1;
    let horiz = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        let mut out = vec![0.0; h * ww];
        for y in 0..h {
            for x in 0..ww {
                let mut acc = 0.0;
                for (k, wv) in win.iter().enumerate() {
                    acc += wv * f(y, x + k);
                }
                out[y * ww + x] = acc;
            }
        }
        out
    };
    let ax = horiz(&|y, x| a.at(0, y, x));
    let bx = horiz(&|y, x| b.at(0, y, x));
    let axx = horiz(&|y, x| a.at(0, y, x) * a.at(0, y, x));
    let bxx = horiz(&|y, x| b.at(0, y, x) * b.at(0, y, x));
    let abx = horiz(&|y, x| a.at(0, y, x) * b.at(0, y, x));
    let vert = |m: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; hh * ww];
        for y in 0..hh {
            for x in 0..ww {
                let mut acc = 0.0;
                for (k, wv) in win.iter().enumerate() {
                    acc += wv * m[(y + k) * ww + x];
                }
                out[y * ww + x] = acc;
            }
        }
        out
    };
    let mu_a = vert(&ax);
    let mu_b = vert(&bx);
    let m_aa = vert(&axx);
    let m_bb = vert(&bxx);
    let m_ab = vert(&abx);
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..hh * ww {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_aa[i] - ma * ma;
        let vb = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (va + vb + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    let n = (hh * ww) as f64;
    Ok((ssim_sum / n, cs_sum / n))
}

pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    Ok(ssim_cs(a, b, peak)?.0)
}

/// Standard five-scale exponent weights.
const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const MSSSIM_MIN_EXTENT: usize = 176;

fn downsample2(t: &Tensor) -> Tensor {
    let (h, w) = (t.height() / 2, t.width() / 2);
    let mut out = Tensor::zeros(&[1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let s = t.at(0, 2 * y, 2 * x)
                + t.at(0, 2 * y, 2 * x + 1)
                + t.at(0, 2 * y + 1, 2 * x)
                + t.at(0, 2 * y + 1, 2 * x + 1);
            *out.at_mut(0, y, x) = s / 4.0;
        }
    }
    out
}

/// Multi-scale SSIM over five dyadic scales (contrast-structure terms for
/// the first four, full SSIM at the coarsest).
pub fn ms_ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::input("ms-ssim: extent mismatch"));
    }
    if a.height() < MSSSIM_MIN_EXTENT || a.width() < MSSSIM_MIN_EXTENT {
        return Err(Error::input(format!(
            "ms-ssim needs at least {MSSSIM_MIN_EXTENT} samples per axis (got {}x{})",
            a.height(),
            a.width()
        )));
    }
    let mut ca = a.clone();
    let mut cb = b.clone();
    let mut acc = 1.0f64;
    for (scale, weight) in MSSSIM_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_cs(&ca, &cb, peak)?;
        if scale + 1 == MSSSIM_WEIGHTS.len() {
            acc *= s.max(0.0).powf(*weight);
        } else {
            acc *= cs.max(0.0).powf(*weight);
            ca = downsample2(&ca);
            cb = downsample2(&cb);
        }
    }
    Ok(acc)
}

/// One sample on a rate-distortion curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RDPoint {
    pub rate_bpp: f64,
    pub quality: f64,
}

#[derive(Debug, Clone)]
pub struct RDCurve {
    pub metric: String,
    pub points: Vec<RDPoint>,
}

impl RDCurve {
    pub fn new(metric: impl Into<String>, mut points: Vec<RDPoint>) -> Self {
        points.sort_by(|a, b| a.rate_bpp.partial_cmp(&b.rate_bpp).unwrap());
        RDCurve {
            metric: metric.into(),
            points,
        }
    }

    /// Rates must be positive and strictly increasing; quality should be
    /// non-decreasing within a small tolerance.  Violations are reported,
    /// not fatal.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        for (i, p) in self.points.iter().enumerate() {
            if p.rate_bpp <= 0.0 {
                issues.push(format!("point {i}: non-positive rate {}", p.rate_bpp));
            }
            if i > 0 {
                let prev = &self.points[i - 1];
                if p.rate_bpp <= prev.rate_bpp {
                    issues.push(format!("point {i}: rate not strictly increasing"));
                }
                if p.quality < prev.quality - 1e-6 {
                    issues.push(format!(
                        "point {i}: quality decreases ({} -> {})",
                        prev.quality, p.quality
                    ));
                }
            }
        }
        issues
    }
}

/// Least-squares cubic fit of `log10(rate)` as a function of quality.
fn fit_log_rate(curve: &RDCurve) -> Result<([f64; 4], f64)> {
    if curve.points.len() < 4 {
        return Err(Error::Evaluation(format!(
            "bd-rate needs at least 4 points, curve '{}' has {}",
            curve.metric,
            curve.points.len()
        )));
    }
    let qbar = curve.points.iter().map(|p| p.quality).sum::<f64>() / curve.points.len() as f64;
    // Normal equations for the centered cubic.
    let mut ata = [[0.0f64; 4]; 4];
    let mut atb = [0.0f64; 4];
    for p in &curve.points {
        if p.rate_bpp <= 0.0 {
            return Err(Error::Evaluation("bd-rate: non-positive rate".into()));
        }
        let q = p.quality - qbar;
        let powers = [1.0, q, q * q, q * q * q];
        let y = p.rate_bpp.log10();
        for i in 0..4 {
            for j in 0..4 {
                ata[i][j] += powers[i] * powers[j];
            }
            atb[i] += powers[i] * y;
        }
    }
    let coef = solve4(ata, atb)
        .ok_or_else(|| Error::Evaluation("bd-rate: singular fit (degenerate qualities)".into()))?;
    Ok((coef, qbar))
}

fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let mut piv = col;
        for r in col + 1..4 {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for r in 0..4 {
            if r == col {
                continue;
            }
            let f = a[r][col] / d;
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    Some([
        b[0] / a[0][0],
        b[1] / a[1][1],
        b[2] / a[2][2],
        b[3] / a[3][3],
    ])
}

fn poly_integral(coef: &[f64; 4], shift: f64, lo: f64, hi: f64) -> f64 {
    // Integrate coef over [lo, hi] in centered coordinates q - shift.
    let eval_antideriv = |q: f64| {
        let x = q - shift;
        coef[0] * x + coef[1] * x * x / 2.0 + coef[2] * x * x * x / 3.0 + coef[3] * x * x * x * x / 4.0
    };
    eval_antideriv(hi) - eval_antideriv(lo)
}

/// Classic Bjontegaard rate difference in percent: cubic fits of log-rate
/// against quality, the gap integrated over the overlapping quality range.
/// Negative results mean the test curve saves rate over the anchor.
pub fn bd_rate(anchor: &RDCurve, test: &RDCurve) -> Result<f64> {
    let (ca, sa) = fit_log_rate(anchor)?;
    let (ct, st) = fit_log_rate(test)?;
    let min_q = |c: &RDCurve| c.points.iter().map(|p| p.quality).fold(f64::INFINITY, f64::min);
    let max_q = |c: &RDCurve| c.points.iter().map(|p| p.quality).fold(f64::NEG_INFINITY, f64::max);
    let lo = min_q(anchor).max(min_q(test));
    let hi = max_q(anchor).min(max_q(test));
    if !(hi > lo) {
        return Err(Error::Evaluation(
            "bd-rate: curves have no overlapping quality range".into(),
        ));
    }
    let avg_diff =
        (poly_integral(&ct, st, lo, hi) - poly_integral(&ca, sa, lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg_diff) - 1.0) * 100.0)
}

/// RD curves as CSV rows `metric,rate_bpp,quality`, grouped by metric.
pub fn write_rd_csv(path: &std::path::Path, curves: &[RDCurve]) -> Result<()> {
    let mut s = String::from("metric,rate_bpp,quality\n");
    for c in curves {
        for p in &c.points {
            s.push_str(&format!("{},{},{}\n", c.metric, p.rate_bpp, p.quality));
        }
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_rd_csv(path: &std::path::Path) -> Result<Vec<RDCurve>> {
    let text = std::fs::read_to_string(path)?;
    let mut by_metric: std::collections::BTreeMap<String, Vec<RDPoint>> = Default::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("metric")) {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Format {
                offset: lineno,
                msg: format!("rd csv line {} needs 3 fields", lineno + 1),
            });
        }
        let rate: f64 = parts[1].trim().parse().map_err(|_| Error::Format {
            offset: lineno,
            msg: "bad rate value".into(),
        })?;
        let quality: f64 = parts[2].trim().parse().map_err(|_| Error::Format {
            offset: lineno,
            msg: "bad quality value".into(),
        })?;
        by_metric
            .entry(parts[0].trim().to_string())
            .or_default()
            .push(RDPoint {
                rate_bpp: rate,
                quality,
            });
    }
    Ok(by_metric
        .into_iter()
        .map(|(metric, points)| RDCurve::new(metric, points))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w).map(|_| rng.gen_range(0.0..255.0)).collect();
        Tensor::from_vec(&[1, h, w], data).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = rand_image(16, 16, 1);
        assert!(psnr(&a, &a, 255.0).unwrap().is_infinite());
    }

    #[test]
    fn psnr_uniform_unit_error() {
        let a = rand_image(16, 16, 2);
        let b = a.map(|v| v + 1.0);
        let got = psnr(&a, &b, 255.0).unwrap();
        let want = 10.0 * (255.0f64 * 255.0).log10();
        assert!((got - want).abs() < 1e-9);
        assert!((got - 48.13).abs() < 0.01);
    }

    #[test]
    fn psnr_matches_two_pass_oracle() {
        let a = rand_image(20, 30, 3);
        let b = rand_image(20, 30, 4);
        let got = psnr(&a, &b, 255.0).unwrap();
        // Independent two-pass computation.
        let mut acc = 0.0;
        for i in 0..a.len() {
            let d = a.data()[i] - b.data()[i];
            acc += d * d;
        }
        let mse = acc / a.len() as f64;
        let want = 10.0 * (255.0 * 255.0 / mse).log10();
        assert!((got - want).abs() < 1e-9);
        assert!(matches!(
            psnr(&a, &rand_image(10, 10, 5), 255.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn ssim_self_is_one_and_symmetric() {
        let a = rand_image(32, 32, 6);
        let b = rand_image(32, 32, 7);
        assert!((ssim(&a, &a, 255.0).unwrap() - 1.0).abs() < 1e-12);
        let ab = ssim(&a, &b, 255.0).unwrap();
        let ba = ssim(&b, &a, 255.0).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn flat_gray_vs_texture_scores_low() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut a = Tensor::zeros(&[1, 64, 64]);
        for v in a.data_mut() {
            *v = if rng.gen_bool(0.5) { 20.0 } else { 235.0 };
        }
        let b = Tensor::filled(&[1, 64, 64], 127.0);
        assert!(ssim(&a, &b, 255.0).unwrap() < 0.5);
    }

    #[test]
    fn ms_ssim_self_is_one_and_small_inputs_are_rejected() {
        let a = rand_image(192, 192, 9);
        assert!((ms_ssim(&a, &a, 255.0).unwrap() - 1.0).abs() < 1e-9);
        let small = rand_image(64, 64, 10);
        assert!(matches!(ms_ssim(&small, &small, 255.0), Err(Error::Input(_))));
    }

    fn synth_curve(metric: &str, rate_scale: f64) -> RDCurve {
        let points = (1..=6)
            .map(|i| RDPoint {
                rate_bpp: rate_scale * 0.15 * i as f64,
                quality: 30.0 + 2.0 * i as f64 + 0.05 * (i * i) as f64,
            })
            .collect();
        RDCurve::new(metric, points)
    }

    #[test]
    fn bd_rate_identity_is_zero() {
        let c = synth_curve("psnr", 1.0);
        assert!(bd_rate(&c, &c).unwrap().abs() < 1e-9);
    }

    #[test]
    fn bd_rate_uniform_scaling_is_exact() {
        let a = synth_curve("psnr", 1.0);
        let t = synth_curve("psnr", 0.9);
        let got = bd_rate(&a, &t).unwrap();
        assert!((got - -10.0).abs() < 0.01, "got {got}");
    }

    #[test]
    fn bd_rate_reciprocity() {
        let a = synth_curve("psnr", 1.0);
        let mut t = synth_curve("psnr", 1.0);
        for (i, p) in t.points.iter_mut().enumerate() {
            p.rate_bpp *= 0.85 + 0.02 * i as f64;
        }
        let ab = bd_rate(&a, &t).unwrap();
        let ba = bd_rate(&t, &a).unwrap();
        let prod = (1.0 + ab / 100.0) * (1.0 + ba / 100.0);
        assert!((prod - 1.0).abs() < 0.005, "ab={ab} ba={ba}");
    }

    #[test]
    fn bd_rate_matches_dense_numerical_integration() {
        let a = synth_curve("psnr", 1.0);
        let mut t = synth_curve("psnr", 1.0);
        for (i, p) in t.points.iter_mut().enumerate() {
            p.rate_bpp *= 0.8 + 0.04 * i as f64;
            p.quality += 0.3;
        }
        let got = bd_rate(&a, &t).unwrap();
        // Oracle: trapezoid integration of the same fitted cubics on a
        // dense grid.
        let (ca, sa) = fit_log_rate(&a).unwrap();
        let (ct, st) = fit_log_rate(&t).unwrap();
        let lo = a.points[0].quality.max(t.points[0].quality);
        let hi = a.points.last().unwrap().quality.min(t.points.last().unwrap().quality);
        let n = 100_000;
        let mut acc = 0.0;
        let eval = |c: &[f64; 4], s: f64, q: f64| {
            let x = q - s;
            c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x
        };
        for i in 0..n {
            let q0 = lo + (hi - lo) * i as f64 / n as f64;
            let q1 = lo + (hi - lo) * (i + 1) as f64 / n as f64;
            let d0 = eval(&ct, st, q0) - eval(&ca, sa, q0);
            let d1 = eval(&ct, st, q1) - eval(&ca, sa, q1);
            acc += 0.5 * (d0 + d1) * (q1 - q0);
        }
        let want = (10f64.powf(acc / (hi - lo)) - 1.0) * 100.0;
        assert!((got - want).abs() < 0.05, "got {got} want {want}");
    }

    #[test]
    fn bd_rate_rejects_disjoint_quality_ranges() {
        let a = synth_curve("psnr", 1.0);
        let mut t = synth_curve("psnr", 1.0);
        for p in t.points.iter_mut() {
            p.quality += 1000.0;
        }
        assert!(matches!(bd_rate(&a, &t), Err(Error::Evaluation(_))));
        let short = RDCurve::new("psnr", a.points[..3].to_vec());
        assert!(bd_rate(&a, &short).is_err());
    }

    #[test]
    fn curve_validation_flags_issues() {
        let c = RDCurve::new(
            "psnr",
            vec![
                RDPoint { rate_bpp: 0.2, quality: 30.0 },
                RDPoint { rate_bpp: 0.4, quality: 29.0 },
            ],
        );
        assert!(!c.validate().is_empty());
    }

    #[test]
    fn rd_csv_round_trip() {
        let dir = std::env::temp_dir().join("liftwave_rd_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("curve.csv");
        let curves = vec![synth_curve("psnr", 1.0), synth_curve("ssim", 0.8)];
        write_rd_csv(&path, &curves).unwrap();
        let back = read_rd_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        let psnr_curve = back.iter().find(|c| c.metric == "psnr").unwrap();
        assert_eq!(psnr_curve.points.len(), 6);
        assert!((psnr_curve.points[0].rate_bpp - 0.15).abs() < 1e-12);
    }
}
