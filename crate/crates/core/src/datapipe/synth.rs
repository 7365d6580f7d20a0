//! Synthetic blob dataset generation for smoke tests and overfit checks.
//!
//! Each sample is a grayscale image containing a few smooth Gaussian bumps
//! on a dark background plus low-amplitude noise; the mask marks pixels
//! where the clean bump field reaches 0.5. Generation is deterministic per
//! seed.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::Tensor;

use super::pgm;
use super::{Manifest, Sample, SampleRecord};

/// Generate one image/mask pair of extent h×w ([1,H,W] tensors).
pub fn synth_sample(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Sample {
    let min_ext = h.min(w) as f64;
    let blobs = rng.random_range(1..=3usize);
    let mut params = Vec::with_capacity(blobs);
    for _ in 0..blobs {
        let cy = rng.random_range(0.25..=0.75) * (h as f64 - 1.0);
        let cx = rng.random_range(0.25..=0.75) * (w as f64 - 1.0);
        let sigma = rng.random_range(0.10..=0.18) * min_ext;
        let amp = rng.random_range(0.85..=1.15);
        params.push((cy, cx, sigma, amp));
    }
    let mut field = vec![0.0f64; h * w];
    for &(cy, cx, sigma, amp) in &params {
        let inv = 1.0 / (2.0 * sigma * sigma);
        for i in 0..h {
            let dy = i as f64 - cy;
            for j in 0..w {
                let dx = j as f64 - cx;
                field[i * w + j] += amp * (-(dy * dy + dx * dx) * inv).exp();
            }
        }
    }
    let mut image = vec![0.0f32; h * w];
    let mut mask = vec![0.0f32; h * w];
    for k in 0..h * w {
        let noise = rng.random_range(-0.03..=0.03);
        image[k] = (0.1 + 0.8 * field[k].min(1.0) + noise).clamp(0.0, 1.0) as f32;
        mask[k] = if field[k] >= 0.5 { 1.0 } else { 0.0 };
    }
    Sample {
        image: Tensor::from_vec(vec![1, h, w], image).unwrap(),
        mask: Tensor::from_vec(vec![1, h, w], mask).unwrap(),
    }
}

/// Generate `count` pairs in memory.
pub fn synth_samples(count: usize, h: usize, w: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synth_sample(h, w, &mut rng)).collect()
}

/// Write a synthetic dataset to `dir` as PGM files plus a manifest listing
/// them with relative paths; returns the manifest path.
pub fn write_synth_dataset(
    dir: &Path,
    count: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let samples = synth_samples(count, h, w, seed);
    let mut records = Vec::with_capacity(count);
    for (i, s) in samples.iter().enumerate() {
        let img_name = format!("img_{:04}.pgm", i);
        let msk_name = format!("msk_{:04}.pgm", i);
        pgm::write_image(&dir.join(&img_name), &s.image)?;
        pgm::write_mask(&dir.join(&msk_name), &s.mask)?;
        records.push(SampleRecord {
            image: PathBuf::from(img_name),
            mask: PathBuf::from(msk_name),
            split: None,
        });
    }
    let manifest = Manifest { dir: dir.to_path_buf(), records };
    let path = dir.join("manifest.csv");
    manifest.write(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_deterministic_and_well_formed() {
        let a = synth_samples(3, 32, 24, 42);
        let b = synth_samples(3, 32, 24, 42);
        for (s, t) in a.iter().zip(&b) {
            assert_eq!(s.image.shape(), &[1, 32, 24]);
            assert!(s.image.bits_eq(&t.image));
            assert!(s.mask.bits_eq(&t.mask));
            assert!(s.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
            for &v in s.image.data() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        let c = synth_samples(3, 32, 24, 43);
        assert!(!a[0].image.bits_eq(&c[0].image));
    }

    #[test]
    fn masks_have_moderate_foreground() {
        for seed in 0..5u64 {
            for s in synth_samples(4, 64, 64, seed) {
                let fg: f32 = s.mask.data().iter().sum();
                let frac = fg / s.mask.len() as f32;
                assert!(frac > 0.005 && frac < 0.6, "foreground fraction {}", frac);
            }
        }
    }

    #[test]
    fn dataset_files_and_manifest_land_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_synth_dataset(dir.path(), 4, 16, 16, 7).unwrap();
        let m = Manifest::read(&path).unwrap();
        assert_eq!(m.records.len(), 4);
        for r in &m.records {
            assert!(m.dir.join(&r.image).is_file());
            assert!(m.dir.join(&r.mask).is_file());
            assert!(r.split.is_none());
        }
    }
}
