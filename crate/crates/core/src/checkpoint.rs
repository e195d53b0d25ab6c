//! Versioned binary model checkpoints.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic            8 bytes  "ADENSCK1"
//! version          u32      currently 1
//! master_seed      u64
//! init_seed        u64
//! shuffle_seed     u64
//! replica_index    u32
//! init_scale       f64
//! averaging        u8       0 = prob, 1 = logit
//! generator        u32 len + UTF-8 bytes
//! components       u32
//! layers           u32      per component
//! per layer:       u32 rows, u32 cols, rows*cols f64, u32 bias_len, f64...
//! ```
//!
//! Save followed by load reproduces every parameter bit-exactly.

use crate::model::{AveragingMode, EnsembleModel, Layer, MlpComponent, ModelError};
use crate::matrix::Matrix;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADENSCK1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Seeds and settings stored alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub master_seed: u64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
    pub replica_index: u32,
    pub init_scale: f64,
    pub generator: String,
}

pub fn save_checkpoint(
    path: &Path,
    model: &EnsembleModel,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err);

    write(CHECKPOINT_MAGIC)?;
    write(&CHECKPOINT_VERSION.to_le_bytes())?;
    write(&meta.master_seed.to_le_bytes())?;
    write(&meta.init_seed.to_le_bytes())?;
    write(&meta.shuffle_seed.to_le_bytes())?;
    write(&meta.replica_index.to_le_bytes())?;
    write(&meta.init_scale.to_bits().to_le_bytes())?;
    write(&[match model.averaging() {
        AveragingMode::Probability => 0u8,
        AveragingMode::Logit => 1u8,
    }])?;
    write(&(meta.generator.len() as u32).to_le_bytes())?;
    write(meta.generator.as_bytes())?;
    write(&(model.components().len() as u32).to_le_bytes())?;
    write(&(model.components()[0].layers().len() as u32).to_le_bytes())?;
    for component in model.components() {
        for layer in component.layers() {
            write(&(layer.weights.rows() as u32).to_le_bytes())?;
            write(&(layer.weights.cols() as u32).to_le_bytes())?;
            for &v in layer.weights.as_slice() {
                write(&v.to_bits().to_le_bytes())?;
            }
            write(&(layer.bias.len() as u32).to_le_bytes())?;
            for &v in &layer.bias {
                write(&v.to_bits().to_le_bytes())?;
            }
        }
    }
    w.flush().map_err(io_err)
}

struct CheckpointReader {
    path: PathBuf,
    reader: BufReader<File>,
}

impl CheckpointReader {
    fn format_err(&self, detail: impl Into<String>) -> CheckpointError {
        CheckpointError::Format {
            path: self.path.clone(),
            detail: detail.into(),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
        self.reader
            .read_exact(buf)
            .map_err(|_| self.format_err(format!("truncated while reading {what}")))
    }

    fn read_u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf, what)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn read_u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        let mut buf = [0u8; 8];
        self.read_exact(&mut buf, what)?;
        Ok(u64::from_le_bytes(buf))
    }

    fn read_f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_bits(self.read_u64(what)?))
    }

    fn read_f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>, CheckpointError> {
        let mut bytes = vec![0u8; n * 8];
        self.read_exact(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(EnsembleModel, CheckpointMeta), CheckpointError> {
    let file = File::open(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut r = CheckpointReader {
        path: path.to_path_buf(),
        reader: BufReader::new(file),
    };

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic, "magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(r.format_err("bad magic; not a checkpoint file"));
    }
    let version = r.read_u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.format_err(format!("unsupported version {version}")));
    }
    let master_seed = r.read_u64("master_seed")?;
    let init_seed = r.read_u64("init_seed")?;
    let shuffle_seed = r.read_u64("shuffle_seed")?;
    let replica_index = r.read_u32("replica_index")?;
    let init_scale = r.read_f64("init_scale")?;
    let mut averaging_byte = [0u8; 1];
    r.read_exact(&mut averaging_byte, "averaging mode")?;
    let averaging = match averaging_byte[0] {
        0 => AveragingMode::Probability,
        1 => AveragingMode::Logit,
        other => return Err(r.format_err(format!("unknown averaging mode {other}"))),
    };
    let gen_len = r.read_u32("generator length")? as usize;
    let mut gen_bytes = vec![0u8; gen_len];
    r.read_exact(&mut gen_bytes, "generator id")?;
    let generator = String::from_utf8(gen_bytes)
        .map_err(|_| r.format_err("generator id is not UTF-8"))?;

    let component_count = r.read_u32("component count")? as usize;
    let layer_count = r.read_u32("layer count")? as usize;
    if component_count == 0 || layer_count == 0 {
        return Err(r.format_err("checkpoint has no parameters"));
    }

    let mut components = Vec::with_capacity(component_count);
    for _ in 0..component_count {
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let rows = r.read_u32("layer rows")? as usize;
            let cols = r.read_u32("layer cols")? as usize;
            let data = r.read_f64_vec(rows * cols, "weights")?;
            let weights = Matrix::from_vec(rows, cols, data)
                .map_err(|e| r.format_err(format!("invalid weights: {e}")))?;
            let bias_len = r.read_u32("bias length")? as usize;
            let bias = r.read_f64_vec(bias_len, "bias")?;
            layers.push(Layer { weights, bias });
        }
        components.push(MlpComponent::from_layers(layers)?);
    }
    let model = EnsembleModel::from_components(components, averaging)?;
    let meta = CheckpointMeta {
        master_seed,
        init_seed,
        shuffle_seed,
        replica_index,
        init_scale,
        generator,
    };
    Ok((model, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, EnsembleConfig};
    use crate::rng::GENERATOR_ALGORITHM;

    fn sample_model() -> EnsembleModel {
        let cfg = EnsembleConfig {
            architecture: Architecture {
                input_dim: 5,
                hidden: vec![7, 3],
                labels: 4,
            },
            components: 2,
            averaging: AveragingMode::Logit,
            init_scale: 1.5,
        };
        EnsembleModel::init(&cfg, 12345).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = sample_model();
        let meta = CheckpointMeta {
            master_seed: 42,
            init_seed: 43,
            shuffle_seed: 44,
            replica_index: 7,
            init_scale: 1.5,
            generator: GENERATOR_ALGORITHM.to_string(),
        };
        save_checkpoint(&path, &model, &meta).unwrap();
        let (loaded, loaded_meta) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded_meta, meta);
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPThello").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Format { .. })
        ));
    }

    #[test]
    fn rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = sample_model();
        let meta = CheckpointMeta {
            master_seed: 1,
            init_seed: 2,
            shuffle_seed: 3,
            replica_index: 0,
            init_scale: 1.0,
            generator: GENERATOR_ALGORITHM.to_string(),
        };
        save_checkpoint(&path, &model, &meta).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Format { .. })
        ));
    }
}
