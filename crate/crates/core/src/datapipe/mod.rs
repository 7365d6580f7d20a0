//! Dataset plumbing: manifest files, split assignment, sample loading,
//! per-epoch augmentation, and batch iteration.
//!
//! A dataset is described by a UTF-8 CSV manifest with header
//! `image,mask,split`; paths are relative to the manifest's directory and
//! the `split` column (values `train`, `val`, `test`) may be empty or
//! absent until splits are assigned. Images load as [1,H,W] tensors scaled
//! to [0,1]; masks are binary {0,1}. The per-sample pipeline runs
//! load, resize, augment, normalize, in that order; masks skip smoothing
//! and normalization and are re-binarized after every geometric transform.

pub mod augment;
pub mod pgm;
pub mod synth;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use augment::AugmentConfig;

/// Dataset partition tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One manifest row: image and mask paths relative to the manifest dir.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Option<Split>,
}

/// A parsed manifest plus the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub dir: PathBuf,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    /// Parse a manifest CSV; errors carry 1-based line numbers.
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
        let mut records = Vec::new();
        let mut saw_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !saw_header {
                if fields != ["image", "mask", "split"] && fields != ["image", "mask"] {
                    return Err(Error::Parse {
                        line: line_no,
                        detail: format!("expected header 'image,mask,split', got '{}'", line),
                    });
                }
                saw_header = true;
                continue;
            }
            if fields.len() != 2 && fields.len() != 3 {
                return Err(Error::Parse {
                    line: line_no,
                    detail: format!("expected 2 or 3 fields, got {}", fields.len()),
                });
            }
            if fields[0].is_empty() || fields[1].is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    detail: "empty image or mask path".into(),
                });
            }
            let split = match fields.get(2).copied().unwrap_or("") {
                "" => None,
                tag => Some(Split::parse(tag).ok_or_else(|| Error::Parse {
                    line: line_no,
                    detail: format!("unknown split tag '{}' (expected train/val/test)", tag),
                })?),
            };
            records.push(SampleRecord {
                image: PathBuf::from(fields[0]),
                mask: PathBuf::from(fields[1]),
                split,
            });
        }
        if !saw_header {
            return Err(Error::Parse { line: 1, detail: "empty manifest".into() });
        }
        Ok(Manifest { dir, records })
    }

    /// Write the manifest CSV, always including the split column.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::from("image,mask,split\n");
        for r in &self.records {
            let tag = r.split.map(Split::name).unwrap_or("");
            writeln!(out, "{},{},{}", r.image.display(), r.mask.display(), tag)
                .expect("string write");
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Records tagged with the given split, in manifest order.
    pub fn records_for(&self, split: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == Some(split)).collect()
    }
}

/// Assign split tags by seeded shuffle: floor(0.70 n) train, floor(0.15 n)
/// val, remainder test. Record order in the manifest is preserved.
pub fn split_dataset(manifest: &mut Manifest, seed: u64) -> Result<()> {
    let n = manifest.records.len();
    if n == 0 {
        return Err(Error::Data("split: manifest has no records".into()));
    }
    let n_train = n * 7 / 10;
    let n_val = n * 15 / 100;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    for (rank, &i) in order.iter().enumerate() {
        manifest.records[i].split = Some(if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(())
}

/// One image/mask pair as [1,H,W] tensors. The image holds raw [0,1]
/// intensities until `normalize_sample`; the mask is binary {0,1}.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
}

fn squeeze2(x: &Tensor<f32>, op: &'static str) -> Result<Tensor<f32>> {
    let (c, h, w) = x.dims3(op)?;
    if c != 1 {
        return Err(Error::shape(op, format!("expected single channel, got {}", c)));
    }
    Tensor::from_vec(vec![h, w], x.data().to_vec())
}

fn lift3(x: Tensor<f32>) -> Result<Tensor<f32>> {
    let (h, w) = x.dims2("lift")?;
    Tensor::from_vec(vec![1, h, w], x.data().to_vec())
}

/// Load the records of one split; images resize bilinearly, masks with
/// nearest neighbor plus re-binarization.
pub fn load_records(
    dir: &Path,
    records: &[&SampleRecord],
    resize_to: Option<(usize, usize)>,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut image = pgm::read_image(&dir.join(&r.image))?;
        let mut mask = pgm::read_mask(&dir.join(&r.mask))?;
        if image.shape() != mask.shape() {
            return Err(Error::Data(format!(
                "{}: image extent {:?} does not match mask {:?}",
                r.image.display(),
                image.shape(),
                mask.shape()
            )));
        }
        if let Some((h, w)) = resize_to {
            image = augment::resize_bilinear(&image, h, w)?;
            mask = augment::binarize_mask(&augment::resize_nearest(&mask, h, w)?, 0.5);
        }
        out.push(Sample { image: lift3(image)?, mask: lift3(mask)? });
    }
    Ok(out)
}

/// Load every sample of a split from a manifest.
pub fn load_split(
    manifest: &Manifest,
    split: Split,
    resize_to: Option<(usize, usize)>,
) -> Result<Vec<Sample>> {
    load_records(&manifest.dir, &manifest.records_for(split), resize_to)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix three seeds into one stream key (order-sensitive).
pub fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(a).wrapping_add(b)).wrapping_add(c))
}

/// Augment (when enabled) and normalize one sample for a given epoch. The
/// augmentation stream depends only on (cfg.seed, epoch, index), so batch
/// composition never changes a sample's draw. Masks are re-binarized and
/// never normalized.
pub fn prepare_sample(
    s: &Sample,
    cfg: &AugmentConfig,
    epoch: usize,
    index: usize,
) -> Result<Sample> {
    let mut img = squeeze2(&s.image, "prepare")?;
    let mut msk = squeeze2(&s.mask, "prepare")?;
    if cfg.enabled {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, epoch as u64, index as u64));
        let (ai, am) = augment::augment_pair(&img, &msk, cfg, &mut rng)?;
        img = ai;
        msk = am;
    }
    let (norm, _) = augment::normalize(&img)?;
    Ok(Sample { image: lift3(norm)?, mask: lift3(msk)? })
}

/// Partition 0..n into batches; train epochs get a per-epoch seeded
/// shuffle, and the final short batch is kept.
pub fn batch_indices(
    n: usize,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Data("batching: split has no records".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batching: batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, epoch as u64, 0));
        order.shuffle(&mut rng);
    }
    Ok(order.chunks(batch_size).map(|c| c.to_vec()).collect())
}

/// Materialize one epoch of prepared batches from base samples.
pub fn batch_iter(
    samples: &[Sample],
    batch_size: usize,
    epoch: usize,
    seed: u64,
    shuffle: bool,
    cfg: &AugmentConfig,
) -> Result<Vec<Vec<Sample>>> {
    let batches = batch_indices(samples.len(), batch_size, shuffle, seed, epoch)?;
    batches
        .into_iter()
        .map(|idxs| {
            idxs.into_iter().map(|i| prepare_sample(&samples[i], cfg, epoch, i)).collect()
        })
        .collect()
}

/// Write `count` augmented copies of a sample's image as
/// `<stem>_aug1.pgm` .. `<stem>_augN.pgm` for visual inspection (raw [0,1]
/// intensities, before normalization). Returns the paths written.
pub fn dump_augmented_previews(
    sample: &Sample,
    cfg: &AugmentConfig,
    count: usize,
    out_dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let img = squeeze2(&sample.image, "preview")?;
    let msk = squeeze2(&sample.mask, "preview")?;
    let mut paths = Vec::with_capacity(count);
    for i in 1..=count {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, i as u64, u64::MAX));
        let (ai, _) = augment::augment_pair(&img, &msk, cfg, &mut rng)?;
        let path = out_dir.join(format!("{}_aug{}.pgm", stem, i));
        pgm::write_image(&path, &ai)?;
        paths.push(path);
    }
    Ok(paths)
}
