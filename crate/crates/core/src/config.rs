//! Experiment configuration: resolved settings, the flat key-value config
//! file format, and the patch/merge logic shared with the CLI flags.
//!
//! Precedence, lowest to highest: built-in defaults, the paper-scale
//! preset (when requested), values from `--config <file>`, explicit flags.

use crate::hashing::Fnv1a;
use crate::loss::{AdConfig, AdKind, AttachPoint, LabelAggregation};
use crate::model::AveragingMode;
use crate::optim::OptimizerConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Where training and evaluation data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSpec {
    /// Synthetic Gaussian blobs; train and eval sets are generated from
    /// seeds derived from the master seed, so both experiment arms of a
    /// comparison see identical data.
    Blobs {
        train: usize,
        eval: usize,
        dim: usize,
        classes: usize,
        separation: f64,
    },
    /// IDX image/label pairs in the standard four-file layout.
    Mnist { dir: PathBuf },
}

/// A fully resolved experiment: everything that determines the trained
/// replicas and their metrics. Hashing this (via JSON) yields the config
/// hash recorded in reports and prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Hidden-layer widths of every component.
    pub hidden: Vec<usize>,
    /// Ensemble size J.
    pub components: usize,
    /// Replica count M.
    pub replicas: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub ad: AdConfig,
    pub averaging: AveragingMode,
    pub init_scale: f64,
    pub master_seed: u64,
    /// Replicas share initialization seeds and differ only in shuffle
    /// seeds; clearing this gives every replica its own init stream.
    pub shared_init: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.components == 0 {
            return Err(ConfigError::Invalid("components must be >= 1".into()));
        }
        if self.ad.kind != AdKind::None && self.components < 2 {
            return Err(ConfigError::Invalid(
                "anti-distillation losses need at least 2 components".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::Invalid("batch size must be >= 1".into()));
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(ConfigError::Invalid(format!(
                "init scale must be finite and > 0, got {}",
                self.init_scale
            )));
        }
        self.ad
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.optimizer
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        match &self.dataset {
            DatasetSpec::Blobs {
                train,
                eval,
                dim,
                classes,
                separation,
            } => {
                if *train == 0 || *eval == 0 || *dim == 0 || *classes < 2 {
                    return Err(ConfigError::Invalid("invalid blob dataset sizes".into()));
                }
                if !(separation > &0.0) {
                    return Err(ConfigError::Invalid("separation must be > 0".into()));
                }
            }
            DatasetSpec::Mnist { .. } => {}
        }
        Ok(())
    }

    /// Stable fingerprint of everything that shapes the result.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Fnv1a::new().write_bytes(json.as_bytes()).finish_hex()
    }
}

/// Optional overrides collected from a config file and from CLI flags.
/// Field names mirror the flag names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigPatch {
    pub dataset: Option<String>,
    pub mnist_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub components: Option<usize>,
    pub replicas: Option<usize>,
    pub lambda: Option<f64>,
    pub ad_kind: Option<AdKind>,
    pub ad_attach: Option<AttachPoint>,
    pub ad_epsilon: Option<f64>,
    pub ad_aggregation: Option<LabelAggregation>,
    pub width: Option<usize>,
    pub depth: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub accumulator_init: Option<f64>,
    pub optimizer: Option<String>,
    pub averaging: Option<AveragingMode>,
    pub init_scale: Option<f64>,
    pub vary_init: Option<bool>,
    pub blob_train: Option<usize>,
    pub blob_eval: Option<usize>,
    pub blob_dim: Option<usize>,
    pub blob_classes: Option<usize>,
    pub blob_separation: Option<f64>,
    pub paper_scale: Option<bool>,
}

impl ConfigPatch {
    /// Parses the flat `key = value` config file format. Keys are the flag
    /// names; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let content = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut patch = ConfigPatch::default();
        for (idx, raw) in content.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| ConfigError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                detail,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            let value = value.trim();
            patch
                .set(key, value)
                .map_err(|detail| err(detail))?;
        }
        Ok(patch)
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("bad value '{value}' for key '{key}'"))
        }
        match key {
            "dataset" => self.dataset = Some(value.to_string()),
            "mnist-dir" => self.mnist_dir = Some(PathBuf::from(value)),
            "seed" => self.seed = Some(parse(key, value)?),
            "components" => self.components = Some(parse(key, value)?),
            "replicas" => self.replicas = Some(parse(key, value)?),
            "lambda" => self.lambda = Some(parse(key, value)?),
            "ad-kind" => self.ad_kind = Some(value.parse()?),
            "ad-attach" => self.ad_attach = Some(value.parse()?),
            "ad-epsilon" => self.ad_epsilon = Some(parse(key, value)?),
            "ad-aggregation" => self.ad_aggregation = Some(value.parse()?),
            "width" => self.width = Some(parse(key, value)?),
            "depth" => self.depth = Some(parse(key, value)?),
            "epochs" => self.epochs = Some(parse(key, value)?),
            "batch-size" => self.batch_size = Some(parse(key, value)?),
            "lr" => self.lr = Some(parse(key, value)?),
            "accumulator-init" => self.accumulator_init = Some(parse(key, value)?),
            "optimizer" => self.optimizer = Some(value.to_string()),
            "averaging" => self.averaging = Some(value.parse()?),
            "init-scale" => self.init_scale = Some(parse(key, value)?),
            "vary-init" => self.vary_init = Some(parse(key, value)?),
            "blob-train" => self.blob_train = Some(parse(key, value)?),
            "blob-eval" => self.blob_eval = Some(parse(key, value)?),
            "blob-dim" => self.blob_dim = Some(parse(key, value)?),
            "blob-classes" => self.blob_classes = Some(parse(key, value)?),
            "blob-separation" => self.blob_separation = Some(parse(key, value)?),
            "paper-scale" => self.paper_scale = Some(parse(key, value)?),
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    /// Overlays `self` (higher precedence) on top of `base`.
    pub fn merge_over(self, base: ConfigPatch) -> ConfigPatch {
        macro_rules! pick {
            ($field:ident) => {
                self.$field.or(base.$field)
            };
        }
        ConfigPatch {
            dataset: pick!(dataset),
            mnist_dir: pick!(mnist_dir),
            seed: pick!(seed),
            components: pick!(components),
            replicas: pick!(replicas),
            lambda: pick!(lambda),
            ad_kind: pick!(ad_kind),
            ad_attach: pick!(ad_attach),
            ad_epsilon: pick!(ad_epsilon),
            ad_aggregation: pick!(ad_aggregation),
            width: pick!(width),
            depth: pick!(depth),
            epochs: pick!(epochs),
            batch_size: pick!(batch_size),
            lr: pick!(lr),
            accumulator_init: pick!(accumulator_init),
            optimizer: pick!(optimizer),
            averaging: pick!(averaging),
            init_scale: pick!(init_scale),
            vary_init: pick!(vary_init),
            blob_train: pick!(blob_train),
            blob_eval: pick!(blob_eval),
            blob_dim: pick!(blob_dim),
            blob_classes: pick!(blob_classes),
            blob_separation: pick!(blob_separation),
            paper_scale: pick!(paper_scale),
        }
    }

    /// Fills unset fields with defaults and builds the final config.
    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let paper_scale = self.paper_scale.unwrap_or(false);

        // Desk-scale defaults; the paper-scale preset swaps in the full
        // benchmark configuration (wide layers, long training, M = 20).
        let (def_dataset, def_width, def_depth, def_epochs, def_replicas) = if paper_scale {
            ("mnist", 1200, 2, 150, 20)
        } else {
            ("blobs", 16, 1, 5, 4)
        };

        let dataset_kind = self.dataset.clone().unwrap_or_else(|| def_dataset.into());
        let dataset = match dataset_kind.as_str() {
            "blobs" => DatasetSpec::Blobs {
                train: self.blob_train.unwrap_or(2000),
                eval: self.blob_eval.unwrap_or(1000),
                dim: self.blob_dim.unwrap_or(10),
                classes: self.blob_classes.unwrap_or(2),
                separation: self.blob_separation.unwrap_or(3.0),
            },
            "mnist" => DatasetSpec::Mnist {
                dir: self
                    .mnist_dir
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("data/mnist")),
            },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown dataset '{other}' (expected mnist|blobs)"
                )))
            }
        };

        let optimizer = match self.optimizer.as_deref().unwrap_or("adagrad") {
            "adagrad" => OptimizerConfig::Adagrad {
                learning_rate: self.lr.unwrap_or(0.02),
                accumulator_init: self.accumulator_init.unwrap_or(0.1),
            },
            "sgd" => OptimizerConfig::Sgd {
                learning_rate: self.lr.unwrap_or(0.02),
            },
            other => {
                return Err(ConfigError::Invalid(format!(
                    "unknown optimizer '{other}' (expected adagrad|sgd)"
                )))
            }
        };

        let ad = AdConfig {
            kind: self.ad_kind.unwrap_or(AdKind::None),
            attach: self.ad_attach.unwrap_or(AttachPoint::Logit),
            lambda: self.lambda.unwrap_or(0.0),
            epsilon: self.ad_epsilon.unwrap_or(1e-2),
            label_aggregation: self.ad_aggregation.unwrap_or(LabelAggregation::Sum),
        };

        let width = self.width.unwrap_or(def_width);
        let depth = self.depth.unwrap_or(def_depth);
        let config = ExperimentConfig {
            dataset,
            hidden: vec![width; depth],
            components: self.components.unwrap_or(2),
            replicas: self.replicas.unwrap_or(def_replicas),
            epochs: self.epochs.unwrap_or(def_epochs),
            batch_size: self.batch_size.unwrap_or(100),
            optimizer,
            ad,
            averaging: self.averaging.unwrap_or(AveragingMode::Probability),
            init_scale: self.init_scale.unwrap_or(1.0),
            master_seed: self.seed.unwrap_or(42),
            shared_init: !self.vary_init.unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }
}
