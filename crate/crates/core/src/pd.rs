//! Prediction-difference metrics over M independently trained replicas.
//!
//! All metrics consume a [`PredictionSet`]: per-example label distributions
//! from M replicas over the same evaluation set, plus optional true labels.
//! Every metric is invariant under permutation of the replicas and is zero
//! exactly when the replicas agree.

use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor applied to probabilities used as divisors or inside logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-sum tolerance for validating probability vectors.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PdError {
    #[error("prediction set needs at least {needed} replicas, got {got}")]
    TooFewReplicas { needed: usize, got: usize },
    #[error("replica {replica} has shape {rows}x{cols}, expected {exp_rows}x{exp_cols}")]
    ShapeMismatch {
        replica: usize,
        rows: usize,
        cols: usize,
        exp_rows: usize,
        exp_cols: usize,
    },
    #[error("replica {replica} row {row} is not a probability vector (sum {sum})")]
    NotAProbability { replica: usize, row: usize, sum: f64 },
    #[error("true labels missing but required")]
    MissingLabels,
    #[error("true label {label} out of range for {num_classes} classes (example {index})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("labels length {got} does not match example count {expected}")]
    LabelCountMismatch { got: usize, expected: usize },
    #[error("metric requires exactly 2 classes, set has {0}")]
    NotBinary(usize),
    #[error("p-norm must be 1 or 2, got {0}")]
    InvalidNorm(usize),
    #[error("prediction set is empty")]
    Empty,
}

/// `N x M x L` tensor of per-example, per-replica label probabilities,
/// stored as M matrices of shape `N x L`.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    replicas: Vec<Matrix>,
    true_labels: Option<Vec<usize>>,
}

impl PredictionSet {
    pub fn new(replicas: Vec<Matrix>, true_labels: Option<Vec<usize>>) -> Result<Self, PdError> {
        let first = replicas.first().ok_or(PdError::TooFewReplicas { needed: 1, got: 0 })?;
        let (rows, cols) = first.shape();
        if rows == 0 || cols == 0 {
            return Err(PdError::Empty);
        }
        for (replica, m) in replicas.iter().enumerate() {
            if m.shape() != (rows, cols) {
                return Err(PdError::ShapeMismatch {
                    replica,
                    rows: m.rows(),
                    cols: m.cols(),
                    exp_rows: rows,
                    exp_cols: cols,
                });
            }
            for row in 0..rows {
                let r = m.row(row);
                let sum: f64 = r.iter().sum();
                let entries_ok = r.iter().all(|&v| (-PROB_FLOOR..=1.0 + PROB_FLOOR).contains(&v));
                if !entries_ok || (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(PdError::NotAProbability { replica, row, sum });
                }
            }
        }
        if let Some(labels) = &true_labels {
            if labels.len() != rows {
                return Err(PdError::LabelCountMismatch {
                    got: labels.len(),
                    expected: rows,
                });
            }
            for (index, &label) in labels.iter().enumerate() {
                if label >= cols {
                    return Err(PdError::LabelOutOfRange {
                        index,
                        label,
                        num_classes: cols,
                    });
                }
            }
        }
        Ok(PredictionSet {
            replicas,
            true_labels,
        })
    }

    pub fn replica_count(&self) -> usize {
        self.replicas.len()
    }

    pub fn example_count(&self) -> usize {
        self.replicas[0].rows()
    }

    pub fn label_count(&self) -> usize {
        self.replicas[0].cols()
    }

    pub fn replicas(&self) -> &[Matrix] {
        &self.replicas
    }

    pub fn true_labels(&self) -> Option<&[usize]> {
        self.true_labels.as_deref()
    }

    fn require_pairs(&self) -> Result<(), PdError> {
        if self.replica_count() < 2 {
            return Err(PdError::TooFewReplicas {
                needed: 2,
                got: self.replica_count(),
            });
        }
        Ok(())
    }

    /// Per-example distribution averaged over replicas (`N x L`).
    pub fn mean_distribution(&self) -> Matrix {
        let n = self.example_count();
        let l = self.label_count();
        let inv_m = 1.0 / self.replica_count() as f64;
        let mut data = vec![0.0; n * l];
        for replica in &self.replicas {
            for (acc, v) in data.iter_mut().zip(replica.as_slice()) {
                *acc += v;
            }
        }
        for v in &mut data {
            *v *= inv_m;
        }
        Matrix::from_vec(n, l, data).expect("mean of probabilities is finite")
    }

    /// Average L_p distance between each replica's distribution and the
    /// replica mean, `p` in {1, 2}.
    pub fn delta_p(&self, p: usize) -> Result<f64, PdError> {
        if p != 1 && p != 2 {
            return Err(PdError::InvalidNorm(p));
        }
        self.require_pairs()?;
        let mean = self.mean_distribution();
        let n = self.example_count();
        let inv_nm = 1.0 / (n as f64 * self.replica_count() as f64);
        let mut total = 0.0;
        for replica in &self.replicas {
            for row in 0..n {
                let mut acc = 0.0;
                for (&a, &b) in replica.row(row).iter().zip(mean.row(row)) {
                    let d = (a - b).abs();
                    acc += if p == 1 { d } else { d * d };
                }
                total += if p == 1 { acc } else { acc.sqrt() };
            }
        }
        Ok(total * inv_nm)
    }

    /// Relative L1 prediction difference: the innermost summand normalized
    /// by the mean probability of that label (floored at [`PROB_FLOOR`]).
    pub fn delta_rel(&self) -> Result<f64, PdError> {
        self.require_pairs()?;
        let mean = self.mean_distribution();
        let n = self.example_count();
        let inv_nm = 1.0 / (n as f64 * self.replica_count() as f64);
        let mut total = 0.0;
        for replica in &self.replicas {
            for row in 0..n {
                for (&a, &b) in replica.row(row).iter().zip(mean.row(row)) {
                    total += (a - b).abs() / b.max(PROB_FLOOR);
                }
            }
        }
        Ok(total * inv_nm)
    }

    /// Binary relative PD: normalizes only the positive-label difference by
    /// the mean positive probability. The positive label is index 1.
    pub fn delta_rel_binary(&self) -> Result<f64, PdError> {
        self.require_pairs()?;
        if self.label_count() != 2 {
            return Err(PdError::NotBinary(self.label_count()));
        }
        let mean = self.mean_distribution();
        let n = self.example_count();
        let inv_nm = 1.0 / (n as f64 * self.replica_count() as f64);
        let mut total = 0.0;
        for replica in &self.replicas {
            for row in 0..n {
                let p = replica.get(row, 1);
                let q = mean.get(row, 1);
                total += (p - q).abs() / q.max(PROB_FLOOR);
            }
        }
        Ok(total * inv_nm)
    }

    /// Relative PD restricted to the observed label of each example.
    pub fn delta_true_label(&self) -> Result<f64, PdError> {
        self.require_pairs()?;
        let labels = self.true_labels.as_ref().ok_or(PdError::MissingLabels)?;
        let mean = self.mean_distribution();
        let n = self.example_count();
        let inv_nm = 1.0 / (n as f64 * self.replica_count() as f64);
        let mut total = 0.0;
        for replica in &self.replicas {
            for (row, &label) in labels.iter().enumerate() {
                let p = replica.get(row, label);
                let q = mean.get(row, label);
                total += (p - q).abs() / q.max(PROB_FLOOR);
            }
        }
        Ok(total * inv_nm)
    }

    /// Fraction of examples whose argmax label differs, averaged over all
    /// unordered replica pairs. Argmax ties break toward the lowest index.
    pub fn delta_hamming(&self) -> Result<f64, PdError> {
        self.require_pairs()?;
        let m = self.replica_count();
        let n = self.example_count();
        let argmaxes: Vec<Vec<usize>> = self
            .replicas
            .iter()
            .map(|r| (0..n).map(|row| argmax(r.row(row))).collect())
            .collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..m {
            for j in (i + 1)..m {
                let differing = argmaxes[i]
                    .iter()
                    .zip(&argmaxes[j])
                    .filter(|(a, b)| a != b)
                    .count();
                total += differing as f64 / n as f64;
                pairs += 1;
            }
        }
        Ok(total / pairs as f64)
    }

    /// Log loss and argmax accuracy, per replica and for the replica-mean
    /// distribution. Probabilities inside the log are floored at
    /// [`PROB_FLOOR`]; `clamped` counts how often the floor fired.
    pub fn quality_metrics(&self) -> Result<QualityMetrics, PdError> {
        let labels = self.true_labels.as_ref().ok_or(PdError::MissingLabels)?;
        let n = self.example_count();
        let mut clamped = 0usize;

        let mut score = |m: &Matrix| -> (f64, f64) {
            let mut loss = 0.0;
            let mut correct = 0usize;
            for (row, &label) in labels.iter().enumerate() {
                let p = m.get(row, label);
                if p < PROB_FLOOR {
                    clamped += 1;
                }
                loss -= p.max(PROB_FLOOR).ln();
                if argmax(m.row(row)) == label {
                    correct += 1;
                }
            }
            (loss / n as f64, correct as f64 / n as f64)
        };

        let mut replica_log_loss = Vec::with_capacity(self.replica_count());
        let mut replica_accuracy = Vec::with_capacity(self.replica_count());
        for replica in &self.replicas {
            let (loss, acc) = score(replica);
            replica_log_loss.push(loss);
            replica_accuracy.push(acc);
        }
        let (ensemble_log_loss, ensemble_accuracy) = score(&self.mean_distribution());

        let m = self.replica_count() as f64;
        Ok(QualityMetrics {
            mean_log_loss: replica_log_loss.iter().sum::<f64>() / m,
            mean_accuracy: replica_accuracy.iter().sum::<f64>() / m,
            replica_log_loss,
            replica_accuracy,
            ensemble_log_loss,
            ensemble_accuracy,
            clamped,
        })
    }

    /// Computes every applicable metric. Requires M >= 2 and true labels.
    pub fn report(&self) -> Result<PdReport, PdError> {
        self.require_pairs()?;
        let quality = self.quality_metrics()?;
        let delta_rel_binary = if self.label_count() == 2 {
            Some(self.delta_rel_binary()?)
        } else {
            None
        };
        Ok(PdReport {
            delta_1: self.delta_p(1)?,
            delta_2: self.delta_p(2)?,
            delta_rel: self.delta_rel()?,
            delta_rel_binary,
            delta_true_label: Some(self.delta_true_label()?),
            delta_hamming: self.delta_hamming()?,
            log_loss: quality.mean_log_loss,
            accuracy: quality.mean_accuracy,
            ensemble_log_loss: quality.ensemble_log_loss,
            ensemble_accuracy: quality.ensemble_accuracy,
            log_loss_clamped: quality.clamped > 0,
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub replica_log_loss: Vec<f64>,
    pub replica_accuracy: Vec<f64>,
    /// Mean over replicas of the per-replica log loss / accuracy; the
    /// headline quality numbers of a configuration.
    pub mean_log_loss: f64,
    pub mean_accuracy: f64,
    /// Quality of the replica-averaged distribution.
    pub ensemble_log_loss: f64,
    pub ensemble_accuracy: f64,
    /// How many probabilities hit the floor inside the log.
    pub clamped: usize,
}

/// One configuration's metric row. PD values are stored as fractions;
/// report tables print the percentage variants scaled by 100.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdReport {
    pub delta_1: f64,
    pub delta_2: f64,
    pub delta_rel: f64,
    pub delta_rel_binary: Option<f64>,
    pub delta_true_label: Option<f64>,
    pub delta_hamming: f64,
    pub log_loss: f64,
    pub accuracy: f64,
    pub ensemble_log_loss: f64,
    pub ensemble_accuracy: f64,
    pub log_loss_clamped: bool,
}
