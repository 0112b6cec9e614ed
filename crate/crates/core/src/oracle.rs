//! Heuristic oracle opacities for pre-training.
//!
//! Stage-1 pre-training freezes the opacity branches and blends the
//! proposals with maps derived directly from the full-resolution input: the
//! magnitude responses of one non-oriented Gaussian and `N-1` oriented
//! derivative-of-Gaussian filters, pooled down to the step's grid and passed
//! through the usual channel normalization.  The Gaussian channel (index 0)
//! lines up with the frozen base proposal.  These maps need the original
//! image, so they are unavailable at inference time by construction.

use crate::error::{Error, Result};
use crate::nn::{conv2d_forward, normalize_forward};
use crate::tensor::{resample_to, Tensor};

/// One non-oriented Gaussian plus `N-1` oriented DoG kernels at the scale
/// of one decomposition level (`sigma = 2^(level-1)`).
#[derive(Debug, Clone)]
pub struct OracleBank {
    pub sigma: f64,
    /// Edge orientation each DoG channel responds to, radians.
    pub angles: Vec<f64>,
    pub filters: Vec<Tensor>,
}

pub fn level_sigma(level: usize) -> f64 {
    debug_assert!(level >= 1);
    2f64.powi(level as i32 - 1)
}

impl OracleBank {
    pub fn new(proposal_count: usize, level: usize) -> Result<Self> {
        if proposal_count < 1 {
            return Err(Error::config("oracle bank needs at least one channel"));
        }
        if level < 1 {
            return Err(Error::input("decomposition level starts at 1"));
        }
        let sigma = level_sigma(level);
        let mut filters = vec![gaussian_kernel(sigma)];
        let mut angles = Vec::new();
        let oriented = proposal_count - 1;
        for k in 0..oriented {
            let angle = k as f64 * std::f64::consts::PI / oriented as f64;
            angles.push(angle);
            filters.push(dog_kernel(sigma, angle));
        }
        Ok(OracleBank {
            sigma,
            angles,
            filters,
        })
    }

    pub fn channels(&self) -> usize {
        self.filters.len()
    }
}

/// Isotropic Gaussian truncated at +-3 sigma, normalized to unit sum.
fn gaussian_kernel(sigma: f64) -> Tensor {
    let r = (3.0 * sigma).ceil() as usize;
    let ext = 2 * r + 1;
    let mut k = Tensor::zeros(&[1, 1, ext, ext]);
    let mut sum = 0.0;
    for y in 0..ext {
        for x in 0..ext {
            let dy = y as f64 - r as f64;
            let dx = x as f64 - r as f64;
            let v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            *k.at4_mut(0, 0, y, x) = v;
            sum += v;
        }
    }
    k.scale(1.0 / sum);
    k
}

/// First derivative of the Gaussian taken along the normal of `edge_angle`,
/// so the channel peaks on edges oriented at that angle.
fn dog_kernel(sigma: f64, edge_angle: f64) -> Tensor {
    let normal = edge_angle + std::f64::consts::FRAC_PI_2;
    let (nx, ny) = (normal.cos(), normal.sin());
    let r = (3.0 * sigma).ceil() as usize;
    let ext = 2 * r + 1;
    let mut k = Tensor::zeros(&[1, 1, ext, ext]);
    let mut pos = 0.0;
    for y in 0..ext {
        for x in 0..ext {
            let dy = y as f64 - r as f64;
            let dx = x as f64 - r as f64;
            let g = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            // d/dn of the Gaussian; y grows downwards so the sign of ny is
            // irrelevant after the magnitude is taken.
            let v = -((dx * nx + dy * ny) / (sigma * sigma)) * g;
            *k.at4_mut(0, 0, y, x) = v;
            pos += v.max(0.0);
        }
    }
    if pos > 0.0 {
        k.scale(1.0 / pos);
    }
    k
}

/// Block-average pooling aligned to the even phase (blocks start at index
/// 0); ragged edge blocks average over the available samples, preserving
/// non-negativity.
fn average_pool(t: &Tensor, block_y: usize, block_x: usize) -> Tensor {
    let (c, h, w) = (t.channels(), t.height(), t.width());
    let (ph, pw) = (h.div_ceil(block_y), w.div_ceil(block_x));
    let mut out = Tensor::zeros(&[c, ph, pw]);
    for ch in 0..c {
        for by in 0..ph {
            let y0 = by * block_y;
            let y1 = (y0 + block_y).min(h);
            for bx in 0..pw {
                let x0 = bx * block_x;
                let x1 = (x0 + block_x).min(w);
                let mut acc = 0.0;
                for y in y0..y1 {
                    let row = t.row(ch, y);
                    for v in &row[x0..x1] {
                        acc += v;
                    }
                }
                *out.at_mut(ch, by, bx) = acc / ((y1 - y0) * (x1 - x0)) as f64;
            }
        }
    }
    out
}

/// Oracle opacities on the level-`d` subband grid: filter-response
/// magnitudes at `sigma_d`, pooled over `2^d x 2^d` blocks, then normalized
/// so the channels are non-negative and sum to one everywhere.
pub fn oracle_opacities(image: &Tensor, level: usize, bank: &OracleBank) -> Result<Tensor> {
    let p = 1usize << level;
    oracle_opacities_pooled(image, bank, p, p)
}

/// Same, but with explicit pooling factors; vertical-step grids pool rows
/// one octave deeper than columns.
pub fn oracle_opacities_pooled(
    image: &Tensor,
    bank: &OracleBank,
    pool_y: usize,
    pool_x: usize,
) -> Result<Tensor> {
    if image.channels() != 1 {
        return Err(Error::input("oracle opacities expect a single-channel image"));
    }
    let mut responses = Vec::with_capacity(bank.channels());
    for f in &bank.filters {
        let r = conv2d_forward(image, f, None)?;
        responses.push(average_pool(&r.map(f64::abs), pool_y, pool_x));
    }
    let refs: Vec<&Tensor> = responses.iter().collect();
    let stacked = Tensor::stack_channels(&refs)?;
    let (out, _) = normalize_forward(&stacked);
    Ok(out)
}

/// Oracle opacities resampled onto an exact target grid.
pub fn oracle_opacities_shaped(
    image: &Tensor,
    bank: &OracleBank,
    pool_y: usize,
    pool_x: usize,
    th: usize,
    tw: usize,
) -> Result<Tensor> {
    let o = oracle_opacities_pooled(image, bank, pool_y, pool_x)?;
    Ok(resample_to(&o, th, tw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_doubles_per_level() {
        assert_eq!(level_sigma(1), 1.0);
        assert_eq!(level_sigma(2), 2.0);
        assert_eq!(level_sigma(3), 4.0);
    }

    #[test]
    fn constant_image_concentrates_on_the_gaussian_channel() {
        let bank = OracleBank::new(5, 1).unwrap();
        let image = Tensor::filled(&[1, 16, 16], 7.0);
        let o = oracle_opacities(&image, 1, &bank).unwrap();
        // DoG responses vanish on constants, so after normalization the
        // Gaussian channel holds the largest share everywhere.
        for y in 0..o.height() {
            for x in 0..o.width() {
                for c in 1..5 {
                    assert!(o.at(0, y, x) > o.at(c, y, x));
                }
            }
        }
    }

    #[test]
    fn channels_sum_to_one_and_are_nonnegative() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(0.0..255.0)).collect();
        let image = Tensor::from_vec(&[1, 32, 32], data).unwrap();
        for level in 1..=2 {
            let bank = OracleBank::new(5, level).unwrap();
            let o = oracle_opacities(&image, level, &bank).unwrap();
            for y in 0..o.height() {
                for x in 0..o.width() {
                    let s: f64 = (0..5).map(|c| o.at(c, y, x)).sum();
                    assert!((s - 1.0).abs() < 1e-9);
                    assert!((0..5).all(|c| o.at(c, y, x) >= 0.0));
                }
            }
        }
    }

    #[test]
    fn oriented_edge_wins_its_own_dog_channel() {
        // 45-degree edge: intensity step across the line y = x.
        let n = 48;
        let mut data = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                if x as i64 - y as i64 > 0 {
                    data[y * n + x] = 200.0;
                }
            }
        }
        let image = Tensor::from_vec(&[1, n, n], data).unwrap();
        let bank = OracleBank::new(5, 1).unwrap();
        // Channel k detects edges at angle k*pi/4; the 45-degree edge is
        // channel 1 (channel 0 is the Gaussian, oriented channels follow).
        let target = 1 + bank
            .angles
            .iter()
            .position(|a| (a - std::f64::consts::FRAC_PI_4).abs() < 1e-12)
            .unwrap();
        let o = oracle_opacities(&image, 1, &bank).unwrap();
        // Probe along the diagonal, away from borders.
        let mut wins = 0;
        let mut total = 0;
        for i in 8..(n / 2 - 8) {
            let (y, x) = (i, i);
            let best = (0..5).max_by(|&a, &b| {
                o.at(a, y, x).partial_cmp(&o.at(b, y, x)).unwrap()
            });
            total += 1;
            if best == Some(target) {
                wins += 1;
            }
        }
        assert!(wins * 2 > total, "45-degree channel won {wins}/{total}");
    }

    #[test]
    fn argmax_is_intensity_robust() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..24 * 24).map(|_| rng.gen_range(0.0..64.0)).collect();
        let image = Tensor::from_vec(&[1, 24, 24], data).unwrap();
        let doubled = image.map(|v| v * 2.0);
        let bank = OracleBank::new(5, 1).unwrap();
        let a = oracle_opacities(&image, 1, &bank).unwrap();
        let b = oracle_opacities(&doubled, 1, &bank).unwrap();
        // Raw pooled responses, to find locations clearly above the offset.
        let raw: Vec<Tensor> = bank
            .filters
            .iter()
            .map(|f| average_pool(&conv2d_forward(&image, f, None).unwrap().map(f64::abs), 2, 2))
            .collect();
        // Where some raw response clearly exceeds the normalization offset,
        // doubling the intensity must not move the winning channel.
        for y in 0..a.height() {
            for x in 0..a.width() {
                let maxv = raw.iter().map(|r| r.at(0, y, x)).fold(0.0f64, f64::max);
                if maxv < 10.0 * crate::nn::NORMALIZE_OFFSET {
                    continue;
                }
                let am = (0..5)
                    .max_by(|&p, &q| a.at(p, y, x).partial_cmp(&a.at(q, y, x)).unwrap())
                    .unwrap();
                let bm = (0..5)
                    .max_by(|&p, &q| b.at(p, y, x).partial_cmp(&b.at(q, y, x)).unwrap())
                    .unwrap();
                assert_eq!(am, bm);
            }
        }
    }
}
