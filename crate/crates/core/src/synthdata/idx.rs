use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{LabeledExample, LatentLabels, Provenance, SslDataset};
use crate::error::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdxOptions {
    /// Number of images kept (all when larger than the file).
    pub subsample: usize,
    pub n_labeled_per_class: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for IdxOptions {
    fn default() -> Self {
        Self { subsample: 2000, n_labeled_per_class: 4, test_fraction: 0.2, seed: 0 }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format("truncated IDX header".into()))
}

/// Parses an IDX3 image file into `[0, 1]`-scaled feature vectors.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!("image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() != n * size {
        return Err(Error::Format(format!("expected {} pixel bytes, found {}", n * size, body.len())));
    }
    Ok(body
        .chunks(size.max(1))
        .take(n)
        .map(|img| img.iter().map(|&b| b as f64 / 255.0).collect())
        .collect())
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!("label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}")));
    }
    let n = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format(format!("expected {n} label bytes, found {}", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair, subsamples it and splits it into labeled,
/// unlabeled and test sets. Unlabeled latent labels are kept for evaluation.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, options: &IdxOptions) -> Result<SslDataset> {
    let xs = parse_idx_images(&std::fs::read(images.as_ref())?)?;
    let ys = parse_idx_labels(&std::fs::read(labels.as_ref())?)?;
    if xs.len() != ys.len() {
        return Err(Error::Format(format!("{} images but {} labels", xs.len(), ys.len())));
    }
    split_idx(xs, ys, options, format!("idx:{}", images.as_ref().display()))
}

fn split_idx(xs: Vec<Vec<f64>>, ys: Vec<usize>, options: &IdxOptions, tag: String) -> Result<SslDataset> {
    if options.n_labeled_per_class == 0 {
        return Err(Error::InvalidInput("n_labeled_per_class must be positive".into()));
    }
    if !(0.0..1.0).contains(&options.test_fraction) {
        return Err(Error::InvalidInput("test fraction outside [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let keep = options.subsample.min(xs.len());
    let mut picked = index::sample(&mut rng, xs.len(), keep).into_vec();
    picked.sort_unstable();
    picked.shuffle(&mut rng);

    let n_test = (keep as f64 * options.test_fraction).floor() as usize;
    let mut taken: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut labeled, mut unlabeled, mut latent, mut test) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (pos, i) in picked.into_iter().enumerate() {
        let (x, y) = (xs[i].clone(), ys[i]);
        if pos < n_test {
            test.push(LabeledExample { features: x, label: y });
            continue;
        }
        let count = taken.entry(y).or_default();
        if *count < options.n_labeled_per_class {
            *count += 1;
            labeled.push(LabeledExample { features: x, label: y });
        } else {
            unlabeled.push(x);
            latent.push(Some(y));
        }
    }
    let num_classes = ys.iter().max().map_or(0, |m| m + 1).max(2);
    SslDataset::new(num_classes, labeled, unlabeled, LatentLabels::new(latent), test, Provenance::External { tag })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn labels(ys: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(ys.len() as u32).to_be_bytes());
        b.extend_from_slice(ys);
        b
    }

    #[test]
    fn parses_two_2x2_images() {
        let xs = parse_idx_images(&images(2, 2, 2, &[0, 255, 51, 102, 1, 2, 3, 4])).unwrap();
        assert_eq!(xs.len(), 2);
        assert_eq!(xs[0], vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(xs[1].len(), 4);
    }

    #[test]
    fn wrong_magic_and_truncation_are_format_errors() {
        let mut bad = images(1, 1, 1, &[0]);
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&images(2, 1, 1, &[0])), Err(Error::Format(_))));
        assert!(matches!(parse_idx_labels(&images(1, 1, 1, &[0])), Err(Error::Format(_))));
        assert!(matches!(parse_idx_images(&[0, 0]), Err(Error::Format(_))));
    }

    #[test]
    fn load_checks_count_mismatch_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("img");
        let lab_path = dir.path().join("lab");
        let n = 60u32;
        let pixels: Vec<u8> = (0..n * 4).map(|i| (i % 256) as u8).collect();
        std::fs::write(&img_path, images(n, 2, 2, &pixels)).unwrap();
        let ys: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
        std::fs::write(&lab_path, labels(&ys)).unwrap();
        let opts = IdxOptions { subsample: 40, n_labeled_per_class: 2, test_fraction: 0.25, seed: 5 };
        let a = load_idx(&img_path, &lab_path, &opts).unwrap();
        let b = load_idx(&img_path, &lab_path, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.test().len(), 10);
        assert_eq!(a.labeled().len(), 6);
        assert_eq!(a.unlabeled_features().len(), 24);
        assert_eq!(a.num_classes(), 3);

        std::fs::write(&lab_path, labels(&ys[..10])).unwrap();
        assert!(matches!(load_idx(&img_path, &lab_path, &opts), Err(Error::Format(_))));
    }
}
