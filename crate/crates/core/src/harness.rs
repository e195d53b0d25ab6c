//! Experiment orchestration: train M replicas of a configuration, persist
//! predictions, checkpoints and logs, compute PD metrics, and emit report
//! rows. Replicas are independent tasks; results are merged in replica
//! order, so serial and concurrent execution produce identical artifacts.

use crate::checkpoint::{save_checkpoint, CheckpointError, CheckpointMeta};
use crate::config::{ConfigError, DatasetSpec, ExperimentConfig};
use crate::data::{epoch_batches, load_idx, synthetic_blobs, BatchSchedule, DataError, Dataset, IdxDir};
use crate::hashing::Fnv1a;
use crate::loss::{ad_loss, cross_entropy, total_loss, AdLossResult, AttachPoint, BatchOutputs, LossError};
use crate::matrix::{Matrix, MatrixError};
use crate::model::{Architecture, EnsembleConfig, EnsembleModel, ModelError};
use crate::optim::{OptimError, OptimizerState};
use crate::pd::{PdError, PdReport, PredictionSet};
use crate::predfile::{
    read_labels_file, read_prediction_file, write_labels_file, write_prediction_file,
    PredFileError, PredictionHeader,
};
use crate::rng::{derive_seed, GENERATOR_ALGORITHM};
use rayon::prelude::*;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Pd(#[from] PdError),
    #[error(transparent)]
    PredFile(#[from] PredFileError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(
        "non-finite loss at step {step} (lambda {lambda}): label loss {label_loss}, ad loss {ad_loss}"
    )]
    NonFiniteLoss {
        step: usize,
        lambda: f64,
        label_loss: f64,
        ad_loss: f64,
    },
    #[error("prediction files disagree: {0}")]
    EvalMismatch(String),
    #[error("{0}")]
    Invalid(String),
}

/// Coarse error category for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Numerical,
}

impl HarnessError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            HarnessError::Config(_) | HarnessError::Invalid(_) => ErrorCategory::Usage,
            HarnessError::Data(_)
            | HarnessError::PredFile(_)
            | HarnessError::Checkpoint(_)
            | HarnessError::Io { .. }
            | HarnessError::EvalMismatch(_) => ErrorCategory::Data,
            HarnessError::Model(_)
            | HarnessError::Matrix(_)
            | HarnessError::Loss(_)
            | HarnessError::Optim(_)
            | HarnessError::Pd(_)
            | HarnessError::NonFiniteLoss { .. } => ErrorCategory::Numerical,
        }
    }
}

/// Seeds that fully determine one replica's training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaSeeds {
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

/// Seed derivation: with shared init every replica builds its ensemble
/// from the same init stream and differs only in the shuffle stream;
/// otherwise each replica gets its own init stream too.
pub fn replica_seeds(cfg: &ExperimentConfig, replica: usize) -> ReplicaSeeds {
    let init_seed = if cfg.shared_init {
        derive_seed(cfg.master_seed, "init-master", 0)
    } else {
        derive_seed(cfg.master_seed, "replica-init", replica as u64)
    };
    ReplicaSeeds {
        init_seed,
        shuffle_seed: derive_seed(cfg.master_seed, "shuffle", replica as u64),
    }
}

/// Loads (train, eval) per the dataset spec. Blob data is derived from the
/// master seed so that configurations differing only in AD settings train
/// on identical examples.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), HarnessError> {
    match &cfg.dataset {
        DatasetSpec::Blobs {
            train,
            eval,
            dim,
            classes,
            separation,
        } => {
            let train_seed = derive_seed(cfg.master_seed, "blobs-train", 0);
            let eval_seed = derive_seed(cfg.master_seed, "blobs-eval", 0);
            let train_ds = synthetic_blobs(train_seed, *train, *dim, *classes, *separation)?;
            let eval_ds = synthetic_blobs(eval_seed, *eval, *dim, *classes, *separation)?;
            Ok((train_ds, eval_ds))
        }
        DatasetSpec::Mnist { dir } => {
            let files = IdxDir::mnist(dir);
            let train_ds = load_idx(&files.train_images, &files.train_labels)?;
            let eval_ds = load_idx(&files.test_images, &files.test_labels)?;
            Ok((train_ds, eval_ds))
        }
    }
}

/// Fingerprint of an evaluation set; prediction files carry it so offline
/// metric computation can refuse mismatched inputs.
pub fn eval_set_hash(eval: &Dataset) -> String {
    let mut h = Fnv1a::new();
    h.write_u64(eval.len() as u64);
    h.write_u64(eval.feature_dim() as u64);
    h.write_u64(eval.num_classes as u64);
    h.write_f64_slice(eval.features.as_slice());
    for &label in &eval.labels {
        h.write_u64(label as u64);
    }
    h.finish_hex()
}

/// Mean losses over one epoch's optimizer steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_label_loss: f64,
    pub mean_ad_loss: f64,
}

/// A trained replica and its evaluation-set predictions.
pub struct TrainedReplica {
    pub replica: usize,
    pub model: EnsembleModel,
    pub predictions: Matrix,
    pub epoch_stats: Vec<EpochStats>,
    pub seeds: ReplicaSeeds,
}

/// Trains one replica: per batch, every component computes its own label
/// loss; the AD loss couples the components at the configured attach
/// point; one optimizer step applies both. Fully determined by
/// `(config, replica)`.
pub fn train_replica(
    cfg: &ExperimentConfig,
    train: &Dataset,
    eval: &Dataset,
    replica: usize,
) -> Result<TrainedReplica, HarnessError> {
    cfg.validate()?;
    let seeds = replica_seeds(cfg, replica);
    let arch = Architecture {
        input_dim: train.feature_dim(),
        hidden: cfg.hidden.clone(),
        labels: train.num_classes,
    };
    let ensemble_cfg = EnsembleConfig {
        architecture: arch,
        components: cfg.components,
        averaging: cfg.averaging,
        init_scale: cfg.init_scale,
    };
    let mut model = EnsembleModel::init(&ensemble_cfg, seeds.init_seed)?;
    let mut states = model
        .components()
        .iter()
        .map(|c| OptimizerState::new(&cfg.optimizer, c))
        .collect::<Result<Vec<_>, _>>()?;

    let schedule = BatchSchedule {
        shuffle_seed: seeds.shuffle_seed,
        batch_size: cfg.batch_size,
        drop_last: false,
    };
    let ad_active = cfg.ad.is_active();
    let lambda = cfg.ad.lambda;

    let mut epoch_stats = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut label_sum = 0.0;
        let mut ad_sum = 0.0;
        let mut steps_in_epoch = 0usize;
        for indices in epoch_batches(train.len(), &schedule, epoch)? {
            let (x, y) = train.gather(&indices);

            let mut label_losses = Vec::with_capacity(cfg.components);
            let mut caches = Vec::with_capacity(cfg.components);
            let mut logits_all = Vec::with_capacity(cfg.components);
            for component in model.components() {
                let (logits, cache) = component.forward(&x)?;
                let (loss, dlogits) = cross_entropy(&logits, &y)?;
                label_losses.push((loss, dlogits));
                caches.push(cache);
                logits_all.push(logits);
            }

            let ad = if ad_active {
                let result = match cfg.ad.attach {
                    AttachPoint::Logit => {
                        let outputs = BatchOutputs::new(&logits_all)?;
                        ad_loss(&outputs, &cfg.ad)?
                    }
                    AttachPoint::Probability => {
                        let probs: Vec<Matrix> =
                            logits_all.iter().map(Matrix::softmax_rows).collect();
                        let outputs = BatchOutputs::new(&probs)?;
                        let raw = ad_loss(&outputs, &cfg.ad)?;
                        let grads = probs
                            .iter()
                            .zip(&raw.grads)
                            .map(|(p, g)| Matrix::softmax_backward(p, g))
                            .collect::<Result<Vec<_>, _>>()?;
                        AdLossResult {
                            loss: raw.loss,
                            grads,
                        }
                    }
                };
                Some(result)
            } else {
                None
            };

            let combined = total_loss(label_losses, ad.as_ref(), lambda)?;
            if !combined.label_loss.is_finite() || !combined.ad_loss.is_finite() {
                return Err(HarnessError::NonFiniteLoss {
                    step,
                    lambda,
                    label_loss: combined.label_loss,
                    ad_loss: combined.ad_loss,
                });
            }
            label_sum += combined.label_loss;
            ad_sum += combined.ad_loss;

            for ((component, state), (cache, dlogits)) in model
                .components_mut()
                .iter_mut()
                .zip(&mut states)
                .zip(caches.iter().zip(&combined.dlogits))
            {
                let grads = component.backward(cache, dlogits)?;
                state.step(component, &grads)?;
            }
            step += 1;
            steps_in_epoch += 1;
        }
        epoch_stats.push(EpochStats {
            epoch,
            mean_label_loss: label_sum / steps_in_epoch as f64,
            mean_ad_loss: ad_sum / steps_in_epoch as f64,
        });
    }

    let predictions = model.predict(&eval.features)?;
    Ok(TrainedReplica {
        replica,
        model,
        predictions,
        epoch_stats,
        seeds,
    })
}

/// Files produced by one replica run.
pub struct ReplicaArtifacts {
    pub trained: TrainedReplica,
    pub prediction_file: PathBuf,
    pub checkpoint_file: PathBuf,
    pub log_file: PathBuf,
}

fn ensure_dir(path: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Trains one replica and persists its prediction file, checkpoint and
/// training log under `out_dir`.
pub fn run_replica_with_data(
    cfg: &ExperimentConfig,
    train: &Dataset,
    eval: &Dataset,
    replica: usize,
    out_dir: &Path,
) -> Result<ReplicaArtifacts, HarnessError> {
    let trained = train_replica(cfg, train, eval, replica)?;
    let config_hash = cfg.config_hash();
    let eval_hash = eval_set_hash(eval);

    let pred_dir = out_dir.join("predictions");
    let ckpt_dir = out_dir.join("checkpoints");
    let log_dir = out_dir.join("logs");
    ensure_dir(&pred_dir)?;
    ensure_dir(&ckpt_dir)?;
    ensure_dir(&log_dir)?;

    let prediction_file = pred_dir.join(format!("replica_{replica:03}.pred.txt"));
    let header = PredictionHeader {
        replica,
        examples: trained.predictions.rows(),
        labels: trained.predictions.cols(),
        master_seed: cfg.master_seed,
        init_seed: trained.seeds.init_seed,
        shuffle_seed: trained.seeds.shuffle_seed,
        config_hash: config_hash.clone(),
        eval_hash,
        generator: GENERATOR_ALGORITHM.to_string(),
    };
    write_prediction_file(&prediction_file, &header, &trained.predictions)?;

    let checkpoint_file = ckpt_dir.join(format!("replica_{replica:03}.ckpt"));
    save_checkpoint(
        &checkpoint_file,
        &trained.model,
        &CheckpointMeta {
            master_seed: cfg.master_seed,
            init_seed: trained.seeds.init_seed,
            shuffle_seed: trained.seeds.shuffle_seed,
            replica_index: replica as u32,
            init_scale: cfg.init_scale,
            generator: GENERATOR_ALGORITHM.to_string(),
        },
    )?;

    let log_file = log_dir.join(format!("replica_{replica:03}.log"));
    let mut log = format!(
        "replica {replica}\nconfig_hash = {config_hash}\ninit_seed = {}\nshuffle_seed = {}\n",
        trained.seeds.init_seed, trained.seeds.shuffle_seed
    );
    for stats in &trained.epoch_stats {
        log.push_str(&format!(
            "epoch {} label_loss {:.6e} ad_loss {:.6e}\n",
            stats.epoch, stats.mean_label_loss, stats.mean_ad_loss
        ));
    }
    fs::write(&log_file, log).map_err(|source| HarnessError::Io {
        path: log_file.clone(),
        source,
    })?;

    Ok(ReplicaArtifacts {
        trained,
        prediction_file,
        checkpoint_file,
        log_file,
    })
}

/// Loads the configured datasets, then trains and persists one replica.
pub fn run_replica(
    cfg: &ExperimentConfig,
    replica: usize,
    out_dir: &Path,
) -> Result<ReplicaArtifacts, HarnessError> {
    let (train, eval) = load_datasets(cfg)?;
    run_replica_with_data(cfg, &train, &eval, replica, out_dir)
}

/// One configuration's report row.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub config_hash: String,
    pub report: PdReport,
    pub wall_time_s: f64,
}

/// Everything an experiment leaves on disk.
pub struct ExperimentArtifacts {
    pub row: ExperimentRow,
    pub prediction_files: Vec<PathBuf>,
    pub labels_file: PathBuf,
    pub report_file: PathBuf,
    pub metadata_file: PathBuf,
}

/// Trains all M replicas (on a bounded worker pool), assembles the
/// prediction set, computes PD and quality metrics, and appends a report
/// row. Every artifact needed to recompute the row offline is persisted.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentArtifacts, HarnessError> {
    cfg.validate()?;
    if cfg.replicas < 2 {
        return Err(HarnessError::Invalid(
            "an experiment needs at least 2 replicas for PD metrics".into(),
        ));
    }
    let start = Instant::now();
    let (train, eval) = load_datasets(cfg)?;
    ensure_dir(out_dir)?;

    // Independent replicas; merged in index order via collect.
    let artifacts: Vec<ReplicaArtifacts> = (0..cfg.replicas)
        .into_par_iter()
        .map(|replica| run_replica_with_data(cfg, &train, &eval, replica, out_dir))
        .collect::<Result<Vec<_>, _>>()?;

    let eval_hash = eval_set_hash(&eval);
    let labels_file = out_dir.join("labels.txt");
    write_labels_file(&labels_file, &eval.labels, eval.num_classes, &eval_hash)?;

    let predictions: Vec<Matrix> = artifacts
        .iter()
        .map(|a| a.trained.predictions.clone())
        .collect();
    let set = PredictionSet::new(predictions, Some(eval.labels.clone()))?;
    let report = set.report()?;

    let row = ExperimentRow {
        config_hash: cfg.config_hash(),
        report,
        wall_time_s: start.elapsed().as_secs_f64(),
    };

    let report_file = out_dir.join("report.csv");
    crate::report::append_report_row(&report_file, &row).map_err(|source| HarnessError::Io {
        path: report_file.clone(),
        source,
    })?;

    let metadata_file = out_dir.join("metadata.json");
    let seeds: Vec<_> = (0..cfg.replicas)
        .map(|r| {
            let s = replica_seeds(cfg, r);
            serde_json::json!({
                "replica": r,
                "init_seed": s.init_seed,
                "shuffle_seed": s.shuffle_seed,
            })
        })
        .collect();
    let metadata = serde_json::json!({
        "library_version": env!("CARGO_PKG_VERSION"),
        "generator": GENERATOR_ALGORITHM,
        "config_hash": row.config_hash,
        "config": cfg,
        "eval_hash": eval_hash,
        "replica_seeds": seeds,
        "wall_time_s": row.wall_time_s,
    });
    fs::write(
        &metadata_file,
        serde_json::to_string_pretty(&metadata).expect("metadata serializes"),
    )
    .map_err(|source| HarnessError::Io {
        path: metadata_file.clone(),
        source,
    })?;

    Ok(ExperimentArtifacts {
        row,
        prediction_files: artifacts.into_iter().map(|a| a.prediction_file).collect(),
        labels_file,
        report_file,
        metadata_file,
    })
}

/// Offline audit path: recomputes a [`PdReport`] from persisted prediction
/// files plus the labels sidecar. Files must agree on example count, label
/// count and evaluation-set hash.
pub fn pd_from_files(
    prediction_paths: &[PathBuf],
    labels_path: &Path,
) -> Result<PdReport, HarnessError> {
    if prediction_paths.len() < 2 {
        return Err(HarnessError::Invalid(
            "need at least 2 prediction files".into(),
        ));
    }
    let (labels_header, labels) = read_labels_file(labels_path)?;
    let mut replicas = Vec::with_capacity(prediction_paths.len());
    for path in prediction_paths {
        let (header, probs) = read_prediction_file(path)?;
        if header.examples != labels_header.examples || header.labels != labels_header.labels {
            return Err(HarnessError::EvalMismatch(format!(
                "{} has shape {}x{}, labels file says {}x{}",
                path.display(),
                header.examples,
                header.labels,
                labels_header.examples,
                labels_header.labels
            )));
        }
        if header.eval_hash != labels_header.eval_hash {
            return Err(HarnessError::EvalMismatch(format!(
                "{} was produced on a different evaluation set (hash {} vs {})",
                path.display(),
                header.eval_hash,
                labels_header.eval_hash
            )));
        }
        replicas.push(probs);
    }
    let set = PredictionSet::new(replicas, Some(labels))?;
    Ok(set.report()?)
}
