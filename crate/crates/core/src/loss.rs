//! Label loss and the anti-distillation loss family.
//!
//! The AD losses act on the per-component batch outputs `z[j]` (logits or
//! probabilities, depending on the attach point), one loss per label column,
//! and push the components' predictions apart:
//!
//! * correlation: off-diagonal Frobenius loss on `C[i][j] = (1/k) * sum_t z[i][t] * z[j][t]`;
//! * covariance: the same on the batch-centered products;
//! * residue correlation: the same on deviations from the per-example
//!   ensemble mean;
//! * difference: negated mean squared pairwise difference;
//! * reciprocal difference: `1 / (|difference| + epsilon)`.
//!
//! Every loss returns its analytic gradient with respect to each component's
//! batch output; the gradients are validated against central finite
//! differences by the gradcheck suite.

use crate::matrix::{Matrix, MatrixError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("label {label} out of range for {num_classes} classes (example {index})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("batch has {logits} logit rows but {labels} labels")]
    BatchSizeMismatch { logits: usize, labels: usize },
    #[error("anti-distillation losses need at least 2 components, got {0}")]
    NeedTwoComponents(usize),
    #[error("component batch outputs must share one shape")]
    ComponentShapeMismatch,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("ad_loss called with kind = none")]
    KindNone,
    #[error("temperature lambda must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("epsilon must be finite and > 0, got {0}")]
    InvalidEpsilon(f64),
    #[error("matrix argument must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// Which de-correlation signal the AD loss is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "corr")]
    Correlation,
    #[serde(rename = "cov")]
    Covariance,
    #[serde(rename = "residue")]
    ResidueCorrelation,
    #[serde(rename = "diff")]
    Difference,
    #[serde(rename = "recip-diff")]
    ReciprocalDifference,
}

impl AdKind {
    pub const ALL_ACTIVE: [AdKind; 5] = [
        AdKind::Correlation,
        AdKind::Covariance,
        AdKind::ResidueCorrelation,
        AdKind::Difference,
        AdKind::ReciprocalDifference,
    ];

    pub fn token(self) -> &'static str {
        match self {
            AdKind::None => "none",
            AdKind::Correlation => "corr",
            AdKind::Covariance => "cov",
            AdKind::ResidueCorrelation => "residue",
            AdKind::Difference => "diff",
            AdKind::ReciprocalDifference => "recip-diff",
        }
    }
}

impl std::str::FromStr for AdKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(AdKind::None),
            "corr" => Ok(AdKind::Correlation),
            "cov" => Ok(AdKind::Covariance),
            "residue" => Ok(AdKind::ResidueCorrelation),
            "diff" => Ok(AdKind::Difference),
            "recip-diff" => Ok(AdKind::ReciprocalDifference),
            other => Err(format!(
                "unknown ad kind '{other}' (expected none|corr|cov|residue|diff|recip-diff)"
            )),
        }
    }
}

/// Where the AD loss attaches: component logits or softmax probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttachPoint {
    #[serde(rename = "logit")]
    Logit,
    #[serde(rename = "prob")]
    Probability,
}

impl std::str::FromStr for AttachPoint {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "logit" => Ok(AttachPoint::Logit),
            "prob" => Ok(AttachPoint::Probability),
            other => Err(format!("unknown attach point '{other}' (expected logit|prob)")),
        }
    }
}

/// How the per-label AD losses combine into one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelAggregation {
    Sum,
    Mean,
}

impl std::str::FromStr for LabelAggregation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sum" => Ok(LabelAggregation::Sum),
            "mean" => Ok(LabelAggregation::Mean),
            other => Err(format!("unknown aggregation '{other}' (expected sum|mean)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdConfig {
    pub kind: AdKind,
    pub attach: AttachPoint,
    /// Temperature of the AD loss relative to the label loss.
    pub lambda: f64,
    /// Guard for the reciprocal-difference variant.
    pub epsilon: f64,
    pub label_aggregation: LabelAggregation,
}

impl Default for AdConfig {
    fn default() -> Self {
        AdConfig {
            kind: AdKind::None,
            attach: AttachPoint::Logit,
            lambda: 0.0,
            epsilon: 1e-2,
            label_aggregation: LabelAggregation::Sum,
        }
    }
}

impl AdConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(LossError::InvalidLambda(self.lambda));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(LossError::InvalidEpsilon(self.epsilon));
        }
        Ok(())
    }

    /// True when training must compute the AD term at all. `lambda == 0`
    /// is a strict no-op: the training trajectory must be bit-identical to
    /// `kind = none`, so the term is skipped rather than added with weight 0.
    pub fn is_active(&self) -> bool {
        self.kind != AdKind::None && self.lambda > 0.0
    }
}

/// Per-component batch outputs at the AD attach point: `J` matrices of
/// shape `k x L`.
pub struct BatchOutputs<'a> {
    components: &'a [Matrix],
}

impl<'a> BatchOutputs<'a> {
    pub fn new(components: &'a [Matrix]) -> Result<Self, LossError> {
        let first = components.first().ok_or(LossError::NeedTwoComponents(0))?;
        if components.iter().any(|m| m.shape() != first.shape()) {
            return Err(LossError::ComponentShapeMismatch);
        }
        if first.rows() == 0 {
            return Err(LossError::EmptyBatch);
        }
        Ok(BatchOutputs { components })
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn batch_size(&self) -> usize {
        self.components[0].rows()
    }

    pub fn label_count(&self) -> usize {
        self.components[0].cols()
    }

    pub fn components(&self) -> &[Matrix] {
        self.components
    }
}

/// Mean cross-entropy of a logit batch against integer labels.
///
/// Returns the loss and its gradient with respect to the logits,
/// `(softmax - onehot) / k`. The loss value is computed through
/// log-sum-exp and stays finite for any finite logits.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix), LossError> {
    let k = logits.rows();
    let classes = logits.cols();
    if labels.len() != k {
        return Err(LossError::BatchSizeMismatch {
            logits: k,
            labels: labels.len(),
        });
    }
    for (index, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(LossError::LabelOutOfRange {
                index,
                label,
                num_classes: classes,
            });
        }
    }
    if k == 0 {
        return Err(LossError::EmptyBatch);
    }

    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        loss += sum.ln() + max - row[label];
    }
    loss /= k as f64;

    let probs = logits.softmax_rows();
    let inv_k = 1.0 / k as f64;
    let mut grad = probs.as_slice().to_vec();
    for (i, &label) in labels.iter().enumerate() {
        grad[i * classes + label] -= 1.0;
    }
    for g in &mut grad {
        *g *= inv_k;
    }
    let grad = Matrix::from_vec(k, classes, grad)?;
    Ok((loss, grad))
}

fn check_vectors(vectors: &[Vec<f64>]) -> Result<(usize, usize), LossError> {
    let count = vectors.len();
    if count < 2 {
        return Err(LossError::NeedTwoComponents(count));
    }
    let k = vectors[0].len();
    if vectors.iter().any(|v| v.len() != k) {
        return Err(LossError::ComponentShapeMismatch);
    }
    if k == 0 {
        return Err(LossError::EmptyBatch);
    }
    Ok((count, k))
}

fn symmetric_product_matrix(vectors: &[Vec<f64>], k: usize) -> Matrix {
    let count = vectors.len();
    let inv_k = 1.0 / k as f64;
    let mut data = vec![0.0; count * count];
    for i in 0..count {
        for j in i..count {
            let mut acc = 0.0;
            for (&a, &b) in vectors[i].iter().zip(&vectors[j]) {
                acc += a * b;
            }
            let value = acc * inv_k;
            data[i * count + j] = value;
            data[j * count + i] = value;
        }
    }
    Matrix::from_vec(count, count, data).expect("finite products of finite inputs")
}

/// Batch correlation matrix: `C[i][j] = (1/k) * sum_t z[i][t] * z[j][t]`.
pub fn corr_matrix(vectors: &[Vec<f64>]) -> Result<Matrix, LossError> {
    let (_, k) = check_vectors(vectors)?;
    Ok(symmetric_product_matrix(vectors, k))
}

fn component_means(vectors: &[Vec<f64>], k: usize) -> Vec<f64> {
    vectors
        .iter()
        .map(|v| v.iter().sum::<f64>() / k as f64)
        .collect()
}

fn centered_by_component(vectors: &[Vec<f64>], means: &[f64]) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .zip(means)
        .map(|(v, &m)| v.iter().map(|&x| x - m).collect())
        .collect()
}

/// Batch covariance matrix, normalized by `k`. A single-example batch has
/// no variance and yields the zero matrix.
pub fn cov_matrix(vectors: &[Vec<f64>]) -> Result<Matrix, LossError> {
    let (_, k) = check_vectors(vectors)?;
    let means = component_means(vectors, k);
    let centered = centered_by_component(vectors, &means);
    Ok(symmetric_product_matrix(&centered, k))
}

fn per_example_means(vectors: &[Vec<f64>], count: usize, k: usize) -> Vec<f64> {
    let inv = 1.0 / count as f64;
    (0..k)
        .map(|t| vectors.iter().map(|v| v[t]).sum::<f64>() * inv)
        .collect()
}

fn residues(vectors: &[Vec<f64>], ensemble_means: &[f64]) -> Vec<Vec<f64>> {
    vectors
        .iter()
        .map(|v| v.iter().zip(ensemble_means).map(|(&x, &m)| x - m).collect())
        .collect()
}

/// Residue correlation matrix: correlation of the deviations from the
/// per-example ensemble mean.
pub fn residue_corr_matrix(vectors: &[Vec<f64>]) -> Result<Matrix, LossError> {
    let (count, k) = check_vectors(vectors)?;
    let means = per_example_means(vectors, count, k);
    Ok(symmetric_product_matrix(&residues(vectors, &means), k))
}

/// Half the squared Frobenius norm of the off-diagonal part, with its
/// gradient (zero on the diagonal, the entry itself elsewhere).
pub fn frobenius_offdiag_loss(mat: &Matrix) -> Result<(f64, Matrix), LossError> {
    if mat.rows() != mat.cols() {
        return Err(LossError::NotSquare {
            rows: mat.rows(),
            cols: mat.cols(),
        });
    }
    let n = mat.rows();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = mat.get(i, j);
                loss += 0.5 * v * v;
                grad[i * n + j] = v;
            }
        }
    }
    Ok((loss, Matrix::from_vec(n, n, grad)?))
}

// Gradient of a loss through `symmetric_product_matrix`:
// dz[i][t] = (1/k) * sum_j (G[i][j] + G[j][i]) * z[j][t].
fn product_matrix_vjp(vectors: &[Vec<f64>], upstream: &Matrix, k: usize) -> Vec<Vec<f64>> {
    let count = vectors.len();
    let inv_k = 1.0 / k as f64;
    let mut grads = vec![vec![0.0; k]; count];
    for i in 0..count {
        for j in 0..count {
            let w = (upstream.get(i, j) + upstream.get(j, i)) * inv_k;
            if w == 0.0 {
                continue;
            }
            for (g, &z) in grads[i].iter_mut().zip(&vectors[j]) {
                *g += w * z;
            }
        }
    }
    grads
}

fn subtract_mean_per_vector(grads: &mut [Vec<f64>]) {
    for g in grads.iter_mut() {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        for v in g.iter_mut() {
            *v -= mean;
        }
    }
}

fn subtract_mean_per_example(grads: &mut [Vec<f64>]) {
    let count = grads.len();
    let k = grads[0].len();
    let inv = 1.0 / count as f64;
    for t in 0..k {
        let mean = grads.iter().map(|g| g[t]).sum::<f64>() * inv;
        for g in grads.iter_mut() {
            g[t] -= mean;
        }
    }
}

/// Negated mean squared pairwise difference; always <= 0.
///
/// Each unordered component pair is counted twice by the ordered double
/// sum, matching the `1/(J^2 - J)` normalization.
pub fn difference_loss(vectors: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    let (count, k) = check_vectors(vectors)?;
    let norm = 1.0 / ((count * count - count) as f64);
    let inv_k = 1.0 / k as f64;

    let mut total = 0.0;
    for i in 0..count {
        for j in (i + 1)..count {
            let mut acc = 0.0;
            for (&a, &b) in vectors[i].iter().zip(&vectors[j]) {
                let d = a - b;
                acc += d * d;
            }
            total += 2.0 * acc; // ordered pairs (i,j) and (j,i)
        }
    }
    let loss = -norm * inv_k * total;

    // dL/dz[i][t] = -(4 / (k (J^2 - J))) * sum_{j != i} (z[i][t] - z[j][t])
    let coeff = -4.0 * norm * inv_k;
    let mut grads = vec![vec![0.0; k]; count];
    for t in 0..k {
        let sum_t: f64 = vectors.iter().map(|v| v[t]).sum();
        for (i, v) in vectors.iter().enumerate() {
            grads[i][t] = coeff * (count as f64 * v[t] - sum_t);
        }
    }
    Ok((loss, grads))
}

/// `1 / (|difference loss| + epsilon)`; strictly positive, with gradients
/// that grow as the components approach one another.
pub fn reciprocal_difference_loss(
    vectors: &[Vec<f64>],
    epsilon: f64,
) -> Result<(f64, Vec<Vec<f64>>), LossError> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    let (diff, diff_grads) = difference_loss(vectors)?;
    let denom = -diff + epsilon; // diff <= 0, so |diff| = -diff
    let loss = 1.0 / denom;
    let scale = 1.0 / (denom * denom);
    let grads = diff_grads
        .into_iter()
        .map(|g| g.into_iter().map(|v| v * scale).collect())
        .collect();
    Ok((loss, grads))
}

/// Result of [`ad_loss`]: the scalar loss and the gradient with respect to
/// each component's `k x L` batch output.
#[derive(Debug, Clone)]
pub struct AdLossResult {
    pub loss: f64,
    pub grads: Vec<Matrix>,
}

/// Applies the configured AD loss to every label column and aggregates.
pub fn ad_loss(batch: &BatchOutputs<'_>, cfg: &AdConfig) -> Result<AdLossResult, LossError> {
    cfg.validate()?;
    if cfg.kind == AdKind::None {
        return Err(LossError::KindNone);
    }
    let count = batch.component_count();
    if count < 2 {
        return Err(LossError::NeedTwoComponents(count));
    }
    let k = batch.batch_size();
    let labels = batch.label_count();

    let mut total = 0.0;
    let mut grad_data: Vec<Vec<f64>> = vec![vec![0.0; k * labels]; count];

    for label in 0..labels {
        let vectors: Vec<Vec<f64>> = batch
            .components()
            .iter()
            .map(|m| m.column(label))
            .collect();

        let (label_loss, label_grads) = match cfg.kind {
            AdKind::Correlation => {
                let c = symmetric_product_matrix(&vectors, k);
                let (loss, upstream) = frobenius_offdiag_loss(&c)?;
                (loss, product_matrix_vjp(&vectors, &upstream, k))
            }
            AdKind::Covariance => {
                let means = component_means(&vectors, k);
                let centered = centered_by_component(&vectors, &means);
                let c = symmetric_product_matrix(&centered, k);
                let (loss, upstream) = frobenius_offdiag_loss(&c)?;
                let mut grads = product_matrix_vjp(&centered, &upstream, k);
                subtract_mean_per_vector(&mut grads);
                (loss, grads)
            }
            AdKind::ResidueCorrelation => {
                let means = per_example_means(&vectors, count, k);
                let centered = residues(&vectors, &means);
                let c = symmetric_product_matrix(&centered, k);
                let (loss, upstream) = frobenius_offdiag_loss(&c)?;
                let mut grads = product_matrix_vjp(&centered, &upstream, k);
                subtract_mean_per_example(&mut grads);
                (loss, grads)
            }
            AdKind::Difference => difference_loss(&vectors)?,
            AdKind::ReciprocalDifference => reciprocal_difference_loss(&vectors, cfg.epsilon)?,
            AdKind::None => unreachable!(),
        };

        total += label_loss;
        for (dst, src) in grad_data.iter_mut().zip(&label_grads) {
            for (t, &g) in src.iter().enumerate() {
                dst[t * labels + label] = g;
            }
        }
    }

    if cfg.label_aggregation == LabelAggregation::Mean {
        let inv = 1.0 / labels as f64;
        total *= inv;
        for g in &mut grad_data {
            for v in g.iter_mut() {
                *v *= inv;
            }
        }
    }

    let grads = grad_data
        .into_iter()
        .map(|d| Matrix::from_vec(k, labels, d))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AdLossResult { loss: total, grads })
}

/// Combined objective for one optimizer step.
#[derive(Debug)]
pub struct TotalLoss {
    pub label_loss: f64,
    pub ad_loss: f64,
    pub total: f64,
    /// Per-component gradient with respect to the component logits.
    pub dlogits: Vec<Matrix>,
}

/// Combines per-component label losses with a weighted AD term.
///
/// `ad` gradients must already be expressed with respect to the component
/// logits (mapped through softmax by the caller for probability attach).
/// Label gradients flow only into their own component; AD gradients flow
/// into every component. With `lambda == 0` or no AD result the label
/// gradients pass through untouched, so the step is numerically identical
/// to training without AD.
pub fn total_loss(
    label_losses: Vec<(f64, Matrix)>,
    ad: Option<&AdLossResult>,
    lambda: f64,
) -> Result<TotalLoss, LossError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(LossError::InvalidLambda(lambda));
    }
    let label_loss: f64 = label_losses.iter().map(|(l, _)| *l).sum();
    let ad_value = ad.map_or(0.0, |r| r.loss);

    match ad {
        Some(result) if lambda > 0.0 => {
            if result.grads.len() != label_losses.len() {
                return Err(LossError::ComponentShapeMismatch);
            }
            let dlogits = label_losses
                .into_iter()
                .zip(&result.grads)
                .map(|((_, g), ad_g)| g.zip_map(ad_g, "total_loss", |a, b| a + lambda * b))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(TotalLoss {
                label_loss,
                ad_loss: ad_value,
                total: label_loss + lambda * ad_value,
                dlogits,
            })
        }
        _ => Ok(TotalLoss {
            label_loss,
            ad_loss: ad_value,
            total: label_loss,
            dlogits: label_losses.into_iter().map(|(_, g)| g).collect(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn cross_entropy_hand_values() {
        let logits = Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        assert_close(loss, 2.0_f64.ln(), 1e-15);
        assert_close(grad.get(0, 0), -0.5, 1e-15);
        assert_close(grad.get(0, 1), 0.5, 1e-15);
    }

    #[test]
    fn cross_entropy_confident_correct() {
        let logits = Matrix::from_rows(&[vec![30.0, -30.0]]).unwrap();
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-12);
        assert!(grad.as_slice().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn cross_entropy_uniform_ten_classes() {
        let logits = Matrix::zeros(1, 10);
        let (loss, _) = cross_entropy(&logits, &[3]).unwrap();
        assert_close(loss, 10.0_f64.ln(), 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Matrix::zeros(1, 2);
        assert!(matches!(
            cross_entropy(&logits, &[2]),
            Err(LossError::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn corr_matrix_orthogonal_batch() {
        let c = corr_matrix(&[vec![1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        assert_close(c.get(0, 1), 0.0, 1e-15);
    }

    #[test]
    fn corr_matrix_hand_values() {
        let c = corr_matrix(&[vec![2.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_close(c.get(0, 0), 2.0, 1e-15);
        assert_close(c.get(1, 1), 2.0, 1e-15);
        assert_close(c.get(0, 1), 2.0, 1e-15);
    }

    #[test]
    fn cov_matrix_hand_values() {
        let m = cov_matrix(&[vec![1.0, 3.0], vec![2.0, 4.0]]).unwrap();
        assert_close(m.get(0, 1), 1.0, 1e-15);
    }

    #[test]
    fn cov_matrix_shift_invariant() {
        let a = cov_matrix(&[vec![1.0, 3.0, 2.0], vec![0.5, -1.0, 2.5]]).unwrap();
        let b = cov_matrix(&[
            vec![1.0 + 7.0, 3.0 + 7.0, 2.0 + 7.0],
            vec![0.5 - 3.0, -1.0 - 3.0, 2.5 - 3.0],
        ])
        .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_close(a.get(i, j), b.get(i, j), 1e-12);
            }
        }
    }

    #[test]
    fn cov_matrix_single_example_is_zero() {
        let m = cov_matrix(&[vec![5.0], vec![-3.0]]).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residue_corr_hand_values() {
        let m = residue_corr_matrix(&[vec![1.0, 3.0], vec![3.0, 1.0]]).unwrap();
        assert_close(m.get(0, 1), -1.0, 1e-15);
        // for two components the residues are opposite: C~[0][1] = -C~[0][0]
        assert_close(m.get(0, 1), -m.get(0, 0), 1e-15);
    }

    #[test]
    fn residue_corr_identical_components_zero() {
        let m = residue_corr_matrix(&[vec![0.3, -2.0, 1.0], vec![0.3, -2.0, 1.0]]).unwrap();
        assert!(m.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frobenius_offdiag_cases() {
        let diag = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, -2.0]]).unwrap();
        let (loss, grad) = frobenius_offdiag_loss(&diag).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));

        let c = corr_matrix(&[vec![2.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let (loss, _) = frobenius_offdiag_loss(&c).unwrap();
        assert_close(loss, 4.0, 1e-15);

        let (loss, grad) = frobenius_offdiag_loss(&Matrix::identity(4)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&v| v == 0.0));

        assert!(matches!(
            frobenius_offdiag_loss(&Matrix::zeros(2, 3)),
            Err(LossError::NotSquare { .. })
        ));
    }

    #[test]
    fn difference_loss_hand_values() {
        let (loss, grads) = difference_loss(&[vec![1.0], vec![3.0]]).unwrap();
        assert_close(loss, -4.0, 1e-15);
        assert_close(grads[0][0], 4.0, 1e-15);
        assert_close(grads[1][0], -4.0, 1e-15);
    }

    #[test]
    fn difference_loss_identical_components() {
        let (loss, grads) = difference_loss(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn difference_loss_permutation_symmetric() {
        let (a, _) = difference_loss(&[vec![1.0, 0.5], vec![3.0, -1.0], vec![0.0, 2.0]]).unwrap();
        let (b, _) = difference_loss(&[vec![0.0, 2.0], vec![1.0, 0.5], vec![3.0, -1.0]]).unwrap();
        assert_close(a, b, 1e-15);
    }

    #[test]
    fn reciprocal_difference_values() {
        let (loss, _) =
            reciprocal_difference_loss(&[vec![1.0, 2.0], vec![1.0, 2.0]], 0.01).unwrap();
        assert_close(loss, 100.0, 1e-12);

        let (loss, _) = reciprocal_difference_loss(&[vec![1.0], vec![3.0]], 0.01).unwrap();
        assert_close(loss, 1.0 / 4.01, 1e-15);
    }

    #[test]
    fn ad_loss_single_label_matches_direct_formula() {
        let z0 = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![-0.5]]).unwrap();
        let z1 = Matrix::from_rows(&[vec![0.5], vec![-1.0], vec![2.0]]).unwrap();
        let mats = vec![z0, z1];
        let batch = BatchOutputs::new(&mats).unwrap();
        let cfg = AdConfig {
            kind: AdKind::Correlation,
            lambda: 1.0,
            ..AdConfig::default()
        };
        let result = ad_loss(&batch, &cfg).unwrap();

        let vectors = vec![mats[0].column(0), mats[1].column(0)];
        let c = corr_matrix(&vectors).unwrap();
        let (direct, _) = frobenius_offdiag_loss(&c).unwrap();
        assert_close(result.loss, direct, 1e-15);
    }

    #[test]
    fn ad_loss_orthogonal_columns_zero() {
        // two components whose every label column is orthogonal over the batch
        let z0 = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 1.0]]).unwrap();
        let z1 = Matrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, -2.0]]).unwrap();
        let mats = vec![z0, z1];
        let batch = BatchOutputs::new(&mats).unwrap();
        let cfg = AdConfig {
            kind: AdKind::Correlation,
            lambda: 1.0,
            ..AdConfig::default()
        };
        let result = ad_loss(&batch, &cfg).unwrap();
        assert_close(result.loss, 0.0, 1e-15);
    }

    #[test]
    fn ad_loss_rejects_kind_none() {
        let mats = vec![Matrix::zeros(2, 1), Matrix::zeros(2, 1)];
        let batch = BatchOutputs::new(&mats).unwrap();
        assert!(matches!(
            ad_loss(&batch, &AdConfig::default()),
            Err(LossError::KindNone)
        ));
    }

    #[test]
    fn ad_loss_mean_aggregation_scales_by_label_count() {
        let z0 = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let z1 = Matrix::from_rows(&[vec![0.5, 0.5], vec![-1.0, -1.0]]).unwrap();
        let mats = vec![z0, z1];
        let batch = BatchOutputs::new(&mats).unwrap();
        let sum_cfg = AdConfig {
            kind: AdKind::Correlation,
            lambda: 1.0,
            ..AdConfig::default()
        };
        let mean_cfg = AdConfig {
            label_aggregation: LabelAggregation::Mean,
            ..sum_cfg.clone()
        };
        let sum = ad_loss(&batch, &sum_cfg).unwrap();
        let mean = ad_loss(&batch, &mean_cfg).unwrap();
        assert_close(mean.loss, sum.loss / 2.0, 1e-15);
    }

    #[test]
    fn cov_equals_corr_for_zero_mean_columns() {
        let vectors = vec![vec![1.0, -1.0, 2.0, -2.0], vec![0.5, 1.5, -0.5, -1.5]];
        let c = corr_matrix(&vectors).unwrap();
        let s = cov_matrix(&vectors).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_close(c.get(i, j), s.get(i, j), 1e-12);
            }
        }
    }

    #[test]
    fn total_loss_arithmetic_and_linearity() {
        let g = Matrix::from_rows(&[vec![0.1, -0.1]]).unwrap();
        let ad = AdLossResult {
            loss: 4.0,
            grads: vec![Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap()],
        };
        let combined = total_loss(vec![(0.6, g.clone())], Some(&ad), 1.0).unwrap();
        assert_close(combined.total, 4.6, 1e-15);

        // the AD contribution (dlogit minus label grad) scales linearly in lambda
        let doubled = total_loss(vec![(0.6, g.clone())], Some(&ad), 2.0).unwrap();
        let contrib1: Vec<f64> = combined.dlogits[0]
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(c, l)| c - l)
            .collect();
        let contrib2: Vec<f64> = doubled.dlogits[0]
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(c, l)| c - l)
            .collect();
        for (one, two) in contrib1.iter().zip(&contrib2) {
            assert_close(*two, 2.0 * one, 1e-15);
        }
    }

    #[test]
    fn total_loss_lambda_zero_passes_label_grads_through() {
        let g = Matrix::from_rows(&[vec![0.25, -0.75]]).unwrap();
        let ad = AdLossResult {
            loss: 123.0,
            grads: vec![Matrix::from_rows(&[vec![9.0, 9.0]]).unwrap()],
        };
        let combined = total_loss(vec![(1.5, g.clone())], Some(&ad), 0.0).unwrap();
        assert_eq!(combined.dlogits[0], g);
        assert_eq!(combined.total, 1.5);
    }

    #[test]
    fn total_loss_rejects_negative_lambda() {
        let g = Matrix::zeros(1, 2);
        assert!(matches!(
            total_loss(vec![(0.0, g)], None, -0.5),
            Err(LossError::InvalidLambda(_))
        ));
    }
}
