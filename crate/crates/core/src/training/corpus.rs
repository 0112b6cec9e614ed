//! Deterministic synthetic images with strong oriented structure, used as
//! the bundled desk-scale training and evaluation corpus.

use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` grayscale images of `size x size` samples in `[0, 255]`, each a
/// mix of an oriented grating, a hard oriented edge and a smooth blob.
pub fn synthetic_texture_corpus(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            // Spread orientations across the set rather than sampling them,
            // so small corpora still cover the angle range.
            let theta = i as f64 * std::f64::consts::PI / count.max(1) as f64
                + rng.gen_range(-0.1..0.1);
            let freq = rng.gen_range(2.5..6.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(35.0..70.0);
            let edge_theta = theta + rng.gen_range(0.6..2.2);
            let edge_pos = rng.gen_range(-0.2..0.2);
            let edge_amp = rng.gen_range(30.0..60.0);
            let (bx, by) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
            let bsig = rng.gen_range(0.15..0.35);
            let bamp = rng.gen_range(20.0..50.0);
            let mut img = Tensor::plane(size, size);
            let (ct, st) = (theta.cos(), theta.sin());
            let (cet, set) = (edge_theta.cos(), edge_theta.sin());
            for y in 0..size {
                for x in 0..size {
                    let u = x as f64 / size as f64 - 0.5;
                    let v = y as f64 / size as f64 - 0.5;
                    let grat =
                        amp * (std::f64::consts::TAU * freq * (u * ct + v * st) + phase).sin();
                    let edge = if u * cet + v * set > edge_pos {
                        edge_amp
                    } else {
                        -edge_amp
                    };
                    let du = u - (bx - 0.5);
                    let dv = v - (by - 0.5);
                    let blob = bamp * (-(du * du + dv * dv) / (2.0 * bsig * bsig)).exp();
                    let val = 128.0 + grat + edge + blob;
                    *img.at_mut(0, y, x) = val.clamp(0.0, 255.0);
                }
            }
            img
        })
        .collect()
}

/// A photograph-like synthetic test plate: smooth illumination, oriented
/// textures of several scales, hard edges and mild grain.
pub fn natural_test_image(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Tensor::plane(size, size);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.1..0.9),
                rng.gen_range(0.05..0.3),
                rng.gen_range(-45.0..45.0),
            )
        })
        .collect();
    let grats: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.0..std::f64::consts::PI),
                rng.gen_range(6.0..28.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(6.0..16.0),
            )
        })
        .collect();
    for y in 0..size {
        for x in 0..size {
            let u = x as f64 / size as f64;
            let v = y as f64 / size as f64;
            let mut val = 110.0 + 50.0 * (1.3 * u + 0.7 * v) - 20.0 * (2.2 * v).sin();
            for &(bx, by, bs, ba) in &blobs {
                let du = u - bx;
                let dv = v - by;
                val += ba * (-(du * du + dv * dv) / (2.0 * bs * bs)).exp();
            }
            for &(theta, freq, phase, amp) in &grats {
                // Windowed gratings: each texture occupies one quadrant-ish.
                let win = (-(((u - theta.cos().abs()).powi(2) + (v - theta.sin().abs()).powi(2))
                    / 0.08))
                    .exp();
                val += amp
                    * win
                    * (std::f64::consts::TAU * freq * (u * theta.cos() + v * theta.sin()) + phase)
                        .sin();
            }
            if u + 0.5 * v > 0.95 {
                val += 35.0;
            }
            if (u - 0.28).abs() < 0.002 {
                val -= 40.0;
            }
            val += rng.gen_range(-2.0..2.0);
            *img.at_mut(0, y, x) = val.clamp(0.0, 255.0);
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_in_range() {
        let a = synthetic_texture_corpus(8, 64, 7);
        let b = synthetic_texture_corpus(8, 64, 7);
        assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.data(), y.data());
            assert!(x.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        }
        // Different seeds differ.
        let c = synthetic_texture_corpus(8, 64, 8);
        assert_ne!(a[0].data(), c[0].data());
    }
}
