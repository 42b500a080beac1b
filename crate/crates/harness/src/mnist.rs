//! IDX-format dataset ingestion and shard partitioning.
//!
//! Big-endian IDX: images carry magic 2051 and dims (n, 28, 28), labels
//! carry magic 2049. Pixels are scaled to [0, 1].

use airfl_core::objective::{DataShard, Sample};
use airfl_core::rng::{self, Purpose};
use rand::seq::SliceRandom;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum MnistError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {observed:#010x} (expected {expected:#010x})")]
    Magic {
        path: String,
        observed: u32,
        expected: u32,
    },
    #[error("{path}: unexpected image dimensions {rows}x{cols} (expected 28x28)")]
    Dims { path: String, rows: u32, cols: u32 },
    #[error("{path}: truncated file, needed {needed} bytes, found {found}")]
    Truncated {
        path: String,
        needed: usize,
        found: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at index {index} outside 0..=9")]
    BadLabel {
        path: String,
        label: u8,
        index: usize,
    },
}

fn read_file(path: &Path) -> Result<Vec<u8>, MnistError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| MnistError::Io {
            path: path.display().to_string(),
            source,
        })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, MnistError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(MnistError::Truncated {
            path: path.display().to_string(),
            needed: end,
            found: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parse the image/label pair into flat samples: 784 pixel features in
/// [0, 1], class index as the label.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<Sample>, MnistError> {
    let img = read_file(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IMAGES_MAGIC {
        return Err(MnistError::Magic {
            path: images_path.display().to_string(),
            observed: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let n = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)?;
    let cols = be_u32(&img, 12, images_path)?;
    if rows != 28 || cols != 28 {
        return Err(MnistError::Dims {
            path: images_path.display().to_string(),
            rows,
            cols,
        });
    }
    let pixel_bytes = n * 784;
    if img.len() < 16 + pixel_bytes {
        return Err(MnistError::Truncated {
            path: images_path.display().to_string(),
            needed: 16 + pixel_bytes,
            found: img.len(),
        });
    }

    let lab = read_file(labels_path)?;
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != LABELS_MAGIC {
        return Err(MnistError::Magic {
            path: labels_path.display().to_string(),
            observed: magic,
            expected: LABELS_MAGIC,
        });
    }
    let n_labels = be_u32(&lab, 4, labels_path)? as usize;
    if n_labels != n {
        return Err(MnistError::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    if lab.len() < 8 + n {
        return Err(MnistError::Truncated {
            path: labels_path.display().to_string(),
            needed: 8 + n,
            found: lab.len(),
        });
    }

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = lab[8 + i];
        if label > 9 {
            return Err(MnistError::BadLabel {
                path: labels_path.display().to_string(),
                label,
                index: i,
            });
        }
        let start = 16 + i * 784;
        let features = img[start..start + 784]
            .iter()
            .map(|&p| p as f64 / 255.0)
            .collect();
        samples.push(Sample {
            features,
            label: label as f64,
        });
    }
    Ok(samples)
}

/// Deal samples into `devices` shards without replacement: a seeded shuffle
/// followed by near-equal contiguous chunks (the first shards absorb the
/// remainder).
pub fn partition(samples: Vec<Sample>, devices: usize, seed: u64) -> Vec<DataShard> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng::substream(seed, rng::SERVER, 0, Purpose::Data);
    order.shuffle(&mut rng);

    let base = samples.len() / devices;
    let extra = samples.len() % devices;
    let mut samples: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut shards = Vec::with_capacity(devices);
    let mut cursor = 0usize;
    for k in 0..devices {
        let take = base + usize::from(k < extra);
        let picked = order[cursor..cursor + take]
            .iter()
            .map(|&i| samples[i].take().expect("indices are unique"))
            .collect();
        cursor += take;
        shards.push(DataShard {
            owner: k,
            samples: picked,
        });
    }
    shards
}

/// Serialize samples back into an IDX pair (tests and fixtures).
pub fn write_idx_fixture(
    images_path: &Path,
    labels_path: &Path,
    samples: &[(Vec<u8>, u8)],
) -> std::io::Result<()> {
    let mut img = Vec::with_capacity(16 + samples.len() * 784);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    img.extend_from_slice(&28u32.to_be_bytes());
    img.extend_from_slice(&28u32.to_be_bytes());
    for (pixels, _) in samples {
        assert_eq!(pixels.len(), 784);
        img.extend_from_slice(pixels);
    }
    let mut lab = Vec::with_capacity(8 + samples.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(samples.len() as u32).to_be_bytes());
    for (_, label) in samples {
        lab.push(*label);
    }
    std::fs::write(images_path, img)?;
    std::fs::write(labels_path, lab)?;
    Ok(())
}
