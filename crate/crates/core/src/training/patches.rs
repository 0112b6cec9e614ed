//! Deterministic patch sampling from an image directory.

use crate::error::{Error, Result};
use crate::image::load_luminance;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub struct PatchLoader {
    images: Vec<Tensor>,
    pub patch: usize,
    pub batch: usize,
    rng: ChaCha8Rng,
    pub skipped: Vec<String>,
}

impl PatchLoader {
    /// Loads every `.pgm`/`.ppm` file under `dir` (sorted by name for
    /// reproducibility).  Images smaller than the patch size are skipped
    /// with a warning entry.
    pub fn open(dir: &Path, patch: usize, batch: usize, seed: u64) -> Result<Self> {
        let mut names: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pgm") | Some("ppm")
                )
            })
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::input(format!(
                "no .pgm/.ppm images under {}",
                dir.display()
            )));
        }
        let mut images = Vec::new();
        let mut skipped = Vec::new();
        for path in names {
            let img = load_luminance(&path)?;
            if img.height() < patch || img.width() < patch {
                skipped.push(format!(
                    "{}: {}x{} smaller than the {patch} patch",
                    path.display(),
                    img.height(),
                    img.width()
                ));
                continue;
            }
            images.push(img);
        }
        if images.is_empty() {
            return Err(Error::input("every corpus image is smaller than the patch size"));
        }
        Ok(PatchLoader {
            images,
            patch,
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
            skipped,
        })
    }

    pub fn from_images(images: Vec<Tensor>, patch: usize, batch: usize, seed: u64) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::input("empty corpus"));
        }
        if images.iter().any(|i| i.height() < patch || i.width() < patch) {
            return Err(Error::input("corpus image smaller than the patch size"));
        }
        Ok(PatchLoader {
            images,
            patch,
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
            skipped: Vec::new(),
        })
    }

    pub fn image_count(&self) -> usize {
        self.images.len()
    }

    /// One batch of random crops, sampled with replacement; values stay in
    /// the `[0, 255]` source range.
    pub fn next_batch(&mut self) -> Vec<Tensor> {
        (0..self.batch)
            .map(|_| {
                let img = &self.images[self.rng.gen_range(0..self.images.len())];
                let y0 = self.rng.gen_range(0..=img.height() - self.patch);
                let x0 = self.rng.gen_range(0..=img.width() - self.patch);
                let mut out = Tensor::plane(self.patch, self.patch);
                for y in 0..self.patch {
                    out.row_mut(0, y)
                        .copy_from_slice(&img.row(0, y0 + y)[x0..x0 + self.patch]);
                }
                out
            })
            .collect()
    }
}
