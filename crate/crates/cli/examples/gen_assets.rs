//! Regenerates the bundled assets: the natural test plate and the oriented
//! texture corpus.  Both are deterministic, so the committed files can be
//! reproduced exactly.

use liftwave_core::image::save_pgm;
use liftwave_core::training::corpus::{natural_test_image, synthetic_texture_corpus};
use std::path::Path;

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    std::fs::create_dir_all(root.join("corpus")).unwrap();
    let plate = natural_test_image(512, 90210);
    save_pgm(&root.join("test_image.pgm"), &plate).unwrap();
    for (i, img) in synthetic_texture_corpus(8, 64, 2024).iter().enumerate() {
        save_pgm(&root.join(format!("corpus/tex{i}.pgm")), img).unwrap();
    }
    println!("assets written under {}", root.display());
}
