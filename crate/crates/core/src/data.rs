//! Dataset ingestion and deterministic mini-batch scheduling.
//!
//! Supported sources: IDX image/label file pairs (big-endian, magic
//! 0x00000803 for images and 0x00000801 for labels, pixels scaled by 1/255)
//! and a seeded synthetic Gaussian-blob generator used by fast checks.

use crate::matrix::{Matrix, MatrixError};
use crate::rng::{derive_seed, SeededRng};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated file ({detail})")]
    Truncated { path: PathBuf, detail: String },
    #[error("image file has {images} items but label file has {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {label} out of range for {num_classes} classes (example {index})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("invalid dataset parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("batch size {batch_size} exceeds dataset size {examples} with drop_last")]
    BatchTooLarge { batch_size: usize, examples: usize },
    #[error("batch size must be >= 1")]
    ZeroBatch,
}

/// Feature matrix plus integer labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self, DataError> {
        if features.rows() == 0 {
            return Err(DataError::InvalidParams("dataset is empty".into()));
        }
        if labels.len() != features.rows() {
            return Err(DataError::CountMismatch {
                images: features.rows(),
                labels: labels.len(),
            });
        }
        for (index, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(DataError::LabelOutOfRange {
                    index,
                    label,
                    num_classes,
                });
            }
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Copies the rows at `indices` into a batch.
    pub fn gather(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        let dim = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        let features = Matrix::from_vec(indices.len(), dim, data)
            .expect("gather of finite rows is finite");
        (features, labels)
    }
}

struct IdxReader {
    path: PathBuf,
    reader: BufReader<File>,
}

impl IdxReader {
    fn open(path: &Path) -> Result<Self, DataError> {
        let file = File::open(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(IdxReader {
            path: path.to_path_buf(),
            reader: BufReader::new(file),
        })
    }

    fn read_u32(&mut self, what: &str) -> Result<u32, DataError> {
        let mut buf = [0u8; 4];
        self.reader
            .read_exact(&mut buf)
            .map_err(|_| DataError::Truncated {
                path: self.path.clone(),
                detail: format!("missing {what}"),
            })?;
        Ok(u32::from_be_bytes(buf))
    }

    fn read_bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>, DataError> {
        let mut buf = vec![0u8; n];
        self.reader
            .read_exact(&mut buf)
            .map_err(|_| DataError::Truncated {
                path: self.path.clone(),
                detail: format!("expected {n} bytes of {what}"),
            })?;
        Ok(buf)
    }
}

/// Loads an IDX image/label file pair. Pixels are scaled to `[0, 1]` by
/// 1/255; the item counts of the two files are cross-checked.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let mut images = IdxReader::open(images_path)?;
    let magic = images.read_u32("magic number")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            path: images_path.to_path_buf(),
            found: magic,
            expected: IDX_IMAGE_MAGIC,
        });
    }
    let count = images.read_u32("image count")? as usize;
    let rows = images.read_u32("row count")? as usize;
    let cols = images.read_u32("column count")? as usize;
    let dim = rows * cols;
    let pixels = images.read_bytes(count * dim, "pixel data")?;

    let mut labels = IdxReader::open(labels_path)?;
    let magic = labels.read_u32("magic number")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_path.to_path_buf(),
            found: magic,
            expected: IDX_LABEL_MAGIC,
        });
    }
    let label_count = labels.read_u32("label count")? as usize;
    if label_count != count {
        return Err(DataError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let label_bytes = labels.read_bytes(label_count, "label data")?;

    let scale = 1.0 / 255.0;
    let data: Vec<f64> = pixels.iter().map(|&p| f64::from(p) * scale).collect();
    let features = Matrix::from_vec(count, dim, data)?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Dataset::new(features, labels, num_classes)
}

/// Well-known file names of an IDX directory layout.
pub struct IdxDir {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl IdxDir {
    pub fn mnist(dir: &Path) -> Self {
        IdxDir {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
        }
    }
}

/// Synthetic dataset: `classes` isotropic unit-variance Gaussian clusters
/// with means `separation` apart (exactly, while `classes <= dim`), labels
/// assigned round-robin so classes stay balanced within one example.
pub fn synthetic_blobs(
    seed: u64,
    examples: usize,
    dim: usize,
    classes: usize,
    separation: f64,
) -> Result<Dataset, DataError> {
    if classes < 2 {
        return Err(DataError::InvalidParams(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if examples == 0 || dim == 0 {
        return Err(DataError::InvalidParams(
            "examples and dim must be > 0".into(),
        ));
    }
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(DataError::InvalidParams(format!(
            "separation must be finite and > 0, got {separation}"
        )));
    }

    // Axis-aligned means scaled so that distinct axes sit `separation`
    // apart; classes beyond `dim` reuse axes at larger magnitudes.
    let unit = separation / std::f64::consts::SQRT_2;
    let mean = |class: usize| -> (usize, f64) {
        let axis = class % dim;
        let ring = (class / dim + 1) as f64;
        (axis, unit * ring)
    };

    let mut rng = SeededRng::new(seed);
    let mut data = Vec::with_capacity(examples * dim);
    let mut labels = Vec::with_capacity(examples);
    for i in 0..examples {
        let class = i % classes;
        let (axis, magnitude) = mean(class);
        for d in 0..dim {
            let center = if d == axis { magnitude } else { 0.0 };
            data.push(center + rng.next_normal());
        }
        labels.push(class);
    }
    let features = Matrix::from_vec(examples, dim, data)?;
    Dataset::new(features, labels, classes)
}

/// Deterministic mini-batch schedule: same (dataset, seed, batch size)
/// yields the same batch sequence in every run.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSchedule {
    pub shuffle_seed: u64,
    pub batch_size: usize,
    pub drop_last: bool,
}

/// Seed tag mixing the epoch index into the per-epoch permutation.
pub const EPOCH_SEED_TAG: &str = "epoch";

/// Index batches for one epoch: a fresh seeded permutation of the dataset
/// sliced into `batch_size` chunks. The final partial batch is kept unless
/// `drop_last` is set.
pub fn epoch_batches(
    examples: usize,
    schedule: &BatchSchedule,
    epoch: usize,
) -> Result<Vec<Vec<usize>>, DataError> {
    if schedule.batch_size == 0 {
        return Err(DataError::ZeroBatch);
    }
    if schedule.drop_last && schedule.batch_size > examples {
        return Err(DataError::BatchTooLarge {
            batch_size: schedule.batch_size,
            examples,
        });
    }
    let mut perm: Vec<usize> = (0..examples).collect();
    let mut rng = SeededRng::new(derive_seed(
        schedule.shuffle_seed,
        EPOCH_SEED_TAG,
        epoch as u64,
    ));
    rng.shuffle(&mut perm);

    let mut batches = Vec::with_capacity(examples.div_ceil(schedule.batch_size));
    for chunk in perm.chunks(schedule.batch_size) {
        if chunk.len() < schedule.batch_size && schedule.drop_last {
            break;
        }
        batches.push(chunk.to_vec());
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_images(path: &Path, images: &[[u8; 4]]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&IDX_IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(images.len() as u32).to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        for img in images {
            f.write_all(img).unwrap();
        }
    }

    fn write_idx_labels(path: &Path, labels: &[u8]) {
        let mut f = File::create(path).unwrap();
        f.write_all(&IDX_LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&(labels.len() as u32).to_be_bytes()).unwrap();
        f.write_all(labels).unwrap();
    }

    #[test]
    fn idx_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let images_path = dir.path().join("imgs");
        let labels_path = dir.path().join("lbls");
        write_idx_images(&images_path, &[[0, 51, 102, 255], [255, 204, 153, 0]]);
        write_idx_labels(&labels_path, &[3, 7]);

        let ds = load_idx(&images_path, &labels_path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.labels, vec![3, 7]);
        let expected = [0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0];
        for (got, want) in ds.features.row(0).iter().zip(&expected) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn idx_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let images_path = dir.path().join("imgs");
        let labels_path = dir.path().join("lbls");
        let mut f = File::create(&images_path).unwrap();
        f.write_all(&0xdead_beefu32.to_be_bytes()).unwrap();
        f.write_all(&[0u8; 12]).unwrap();
        drop(f);
        write_idx_labels(&labels_path, &[0]);
        assert!(matches!(
            load_idx(&images_path, &labels_path),
            Err(DataError::BadMagic { .. })
        ));
    }

    #[test]
    fn idx_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let images_path = dir.path().join("imgs");
        let labels_path = dir.path().join("lbls");
        let mut f = File::create(&images_path).unwrap();
        f.write_all(&IDX_IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[1u8; 3]).unwrap(); // needs 8 bytes
        drop(f);
        write_idx_labels(&labels_path, &[0, 1]);
        assert!(matches!(
            load_idx(&images_path, &labels_path),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn idx_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let images_path = dir.path().join("imgs");
        let labels_path = dir.path().join("lbls");
        write_idx_images(&images_path, &[[1, 2, 3, 4]]);
        write_idx_labels(&labels_path, &[0, 1]);
        assert!(matches!(
            load_idx(&images_path, &labels_path),
            Err(DataError::CountMismatch { images: 1, labels: 2 })
        ));
    }

    #[test]
    fn blobs_deterministic_and_balanced() {
        let a = synthetic_blobs(9, 101, 4, 3, 5.0).unwrap();
        let b = synthetic_blobs(9, 101, 4, 3, 5.0).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);

        let mut counts = [0usize; 3];
        for &l in &a.labels {
            counts[l] += 1;
        }
        let max = counts.iter().max().unwrap();
        let min = counts.iter().min().unwrap();
        assert!(max - min <= 1, "{counts:?}");
    }

    #[test]
    fn blobs_cluster_means_are_separated() {
        let sep = 8.0;
        let ds = synthetic_blobs(3, 4000, 2, 2, sep).unwrap();
        let mut means = [[0.0f64; 2]; 2];
        let mut counts = [0usize; 2];
        for i in 0..ds.len() {
            let l = ds.labels[i];
            counts[l] += 1;
            for d in 0..2 {
                means[l][d] += ds.features.get(i, d);
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            for v in m.iter_mut() {
                *v /= c as f64;
            }
        }
        let dist = ((means[0][0] - means[1][0]).powi(2)
            + (means[0][1] - means[1][1]).powi(2))
        .sqrt();
        assert!((dist - sep).abs() < 0.2, "mean distance {dist}");
    }

    #[test]
    fn batches_partition_every_epoch() {
        let sched = BatchSchedule {
            shuffle_seed: 5,
            batch_size: 3,
            drop_last: false,
        };
        let batches = epoch_batches(10, &sched, 0).unwrap();
        let sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batches_deterministic_and_epoch_dependent() {
        let sched = BatchSchedule {
            shuffle_seed: 42,
            batch_size: 4,
            drop_last: false,
        };
        assert_eq!(
            epoch_batches(16, &sched, 0).unwrap(),
            epoch_batches(16, &sched, 0).unwrap()
        );
        assert_ne!(
            epoch_batches(16, &sched, 0).unwrap(),
            epoch_batches(16, &sched, 1).unwrap()
        );
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let sched = BatchSchedule {
            shuffle_seed: 1,
            batch_size: 8,
            drop_last: false,
        };
        let batches = epoch_batches(8, &sched, 0).unwrap();
        assert_eq!(batches.len(), 1);
        let mut b = batches[0].clone();
        b.sort_unstable();
        assert_eq!(b, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn drop_last_rules() {
        let sched = BatchSchedule {
            shuffle_seed: 1,
            batch_size: 4,
            drop_last: true,
        };
        let batches = epoch_batches(10, &sched, 0).unwrap();
        assert_eq!(batches.len(), 2);
        assert!(batches.iter().all(|b| b.len() == 4));

        let sched = BatchSchedule {
            shuffle_seed: 1,
            batch_size: 11,
            drop_last: true,
        };
        assert!(matches!(
            epoch_batches(10, &sched, 0),
            Err(DataError::BatchTooLarge { .. })
        ));
    }

    #[test]
    fn different_seeds_shuffle_differently() {
        let mut distinct = 0;
        for seed in 0..100u64 {
            let a = epoch_batches(
                100,
                &BatchSchedule {
                    shuffle_seed: seed,
                    batch_size: 100,
                    drop_last: false,
                },
                0,
            )
            .unwrap();
            let b = epoch_batches(
                100,
                &BatchSchedule {
                    shuffle_seed: seed + 1000,
                    batch_size: 100,
                    drop_last: false,
                },
                0,
            )
            .unwrap();
            if a != b {
                distinct += 1;
            }
        }
        assert_eq!(distinct, 100);
    }
}
