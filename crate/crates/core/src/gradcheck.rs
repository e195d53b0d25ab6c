//! Central finite-difference validation of every analytic gradient.
//!
//! Two grids are checked:
//!
//! * the AD losses with respect to the raw batch outputs, over
//!   `J x k x L` combinations;
//! * the full backward pass (label loss and every AD kind at both attach
//!   points) with respect to one component's weights and biases, over an
//!   architecture grid.
//!
//! The numeric side uses only forward evaluations, so it stays independent
//! of the backward implementation it validates.

use crate::loss::{ad_loss, cross_entropy, AdConfig, AdKind, AttachPoint, BatchOutputs};
use crate::matrix::Matrix;
use crate::model::{Architecture, EnsembleConfig, EnsembleModel, MlpComponent, AveragingMode};
use crate::rng::{derive_seed, SeededRng};

/// Maximum allowed relative error between analytic and central-difference
/// gradients.
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Scale floor in the relative-error denominator; differences below
/// `floor * tolerance` are treated as measurement noise.
pub const REL_ERR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckCell {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub cells: Vec<GradCheckCell>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.cells.iter().all(|c| c.passed)
    }

    pub fn failed_count(&self) -> usize {
        self.cells.iter().filter(|c| !c.passed).count()
    }
}

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Central finite differences of a scalar function at `x`.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let original = point[i];
        point[i] = original + step;
        let plus = f(&point);
        point[i] = original - step;
        let minus = f(&point);
        point[i] = original;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

fn flatten_outputs(mats: &[Matrix]) -> Vec<f64> {
    mats.iter().flat_map(|m| m.as_slice().iter().copied()).collect()
}

fn unflatten_outputs(flat: &[f64], count: usize, rows: usize, cols: usize) -> Vec<Matrix> {
    let stride = rows * cols;
    (0..count)
        .map(|j| {
            Matrix::from_vec(rows, cols, flat[j * stride..(j + 1) * stride].to_vec())
                .expect("finite perturbed outputs")
        })
        .collect()
}

fn ad_cfg(kind: AdKind) -> AdConfig {
    AdConfig {
        kind,
        lambda: 1.0,
        ..AdConfig::default()
    }
}

/// Checks one AD loss against finite differences in batch-output space.
pub fn check_ad_loss_outputs(kind: AdKind, components: usize, batch: usize, labels: usize) -> f64 {
    let seed = derive_seed(
        0xad10,
        "gradcheck-z",
        (components * 1_000_000 + batch * 1_000 + labels) as u64 ^ kind.token().len() as u64,
    );
    let mut rng = SeededRng::new(seed);
    let mats: Vec<Matrix> = (0..components)
        .map(|_| rng.uniform_matrix(-2.0, 2.0, batch, labels).unwrap())
        .collect();
    let cfg = ad_cfg(kind);

    let outputs = BatchOutputs::new(&mats).unwrap();
    let result = ad_loss(&outputs, &cfg).unwrap();
    let analytic = flatten_outputs(&result.grads);

    let flat = flatten_outputs(&mats);
    let numeric = fd_gradient(
        |x| {
            let perturbed = unflatten_outputs(x, components, batch, labels);
            let outputs = BatchOutputs::new(&perturbed).unwrap();
            ad_loss(&outputs, &cfg).unwrap().loss
        },
        &flat,
        FD_STEP,
    );
    max_relative_error(&analytic, &numeric)
}

/// Which loss drives the end-to-end parameter check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossUnderTest {
    Label,
    Ad(AdKind, AttachPoint),
}

impl LossUnderTest {
    fn name(&self) -> String {
        match self {
            LossUnderTest::Label => "label".to_string(),
            LossUnderTest::Ad(kind, attach) => format!(
                "{}@{}",
                kind.token(),
                match attach {
                    AttachPoint::Logit => "logit",
                    AttachPoint::Probability => "prob",
                }
            ),
        }
    }

    pub fn full_set() -> Vec<LossUnderTest> {
        let mut set = vec![LossUnderTest::Label];
        for kind in AdKind::ALL_ACTIVE {
            for attach in [AttachPoint::Logit, AttachPoint::Probability] {
                set.push(LossUnderTest::Ad(kind, attach));
            }
        }
        set
    }
}

pub(crate) fn component_to_vec(component: &MlpComponent) -> Vec<f64> {
    let mut flat = Vec::new();
    for layer in component.layers() {
        flat.extend_from_slice(layer.weights.as_slice());
        flat.extend_from_slice(&layer.bias);
    }
    flat
}

pub(crate) fn set_component_from_vec(component: &mut MlpComponent, flat: &[f64]) {
    let mut offset = 0;
    for layer in component.layers_mut() {
        let w = layer.weights.rows() * layer.weights.cols();
        let data = flat[offset..offset + w].to_vec();
        layer.weights =
            Matrix::from_vec(layer.weights.rows(), layer.weights.cols(), data).unwrap();
        offset += w;
        let bias_len = layer.bias.len();
        layer.bias.copy_from_slice(&flat[offset..offset + bias_len]);
        offset += bias_len;
    }
    assert_eq!(offset, flat.len());
}

fn gradients_to_vec(grads: &crate::model::Gradients) -> Vec<f64> {
    let mut flat = Vec::new();
    for layer in &grads.layers {
        flat.extend_from_slice(layer.weights.as_slice());
        flat.extend_from_slice(&layer.bias);
    }
    flat
}

// FD steps must not cross a ReLU kink: require every hidden pre-activation
// of the unperturbed nets to sit at least this far from zero.
const KINK_MARGIN: f64 = 1e-3;

fn preactivations_clear(component: &MlpComponent, batch: &Matrix) -> bool {
    let mut activation = batch.clone();
    let layers = component.layers();
    for (idx, layer) in layers.iter().enumerate() {
        let pre = activation
            .matmul(&layer.weights)
            .unwrap()
            .add_row_vector(&layer.bias)
            .unwrap();
        if idx + 1 == layers.len() {
            return true;
        }
        if pre.as_slice().iter().any(|v| v.abs() < KINK_MARGIN) {
            return false;
        }
        activation = pre.map("relu", |v| v.max(0.0)).unwrap();
    }
    true
}

fn loss_value(
    ensemble: &EnsembleModel,
    batch: &Matrix,
    labels: &[usize],
    loss: LossUnderTest,
) -> f64 {
    match loss {
        LossUnderTest::Label => {
            let logits = ensemble.components()[0].forward_logits(batch).unwrap();
            cross_entropy(&logits, labels).unwrap().0
        }
        LossUnderTest::Ad(kind, attach) => {
            let outputs: Vec<Matrix> = ensemble
                .components()
                .iter()
                .map(|c| {
                    let logits = c.forward_logits(batch).unwrap();
                    match attach {
                        AttachPoint::Logit => logits,
                        AttachPoint::Probability => logits.softmax_rows(),
                    }
                })
                .collect();
            let batch_outputs = BatchOutputs::new(&outputs).unwrap();
            let mut cfg = ad_cfg(kind);
            cfg.attach = attach;
            ad_loss(&batch_outputs, &cfg).unwrap().loss
        }
    }
}

/// End-to-end check of the backward pass: finite differences over the first
/// component's parameters against the analytic gradient routed through the
/// configured loss.
pub fn check_component_gradients(arch: &Architecture, loss: LossUnderTest) -> f64 {
    let batch_size = 7;
    let base_seed = derive_seed(
        0xad11,
        "gradcheck-mlp",
        (arch.hidden.len() * 1000 + arch.hidden.first().copied().unwrap_or(0) * 10 + arch.labels)
            as u64,
    );

    // Draw until no hidden pre-activation sits near a ReLU kink. Biases are
    // randomized along with the weights so that narrow nets do not end up
    // with whole layers pinned exactly at zero.
    let mut attempt = 0u64;
    let (ensemble, batch, labels) = loop {
        let seed = derive_seed(base_seed, "attempt", attempt);
        let cfg = EnsembleConfig {
            architecture: arch.clone(),
            components: 2,
            averaging: AveragingMode::Probability,
            init_scale: 1.0,
        };
        let mut ensemble = EnsembleModel::init(&cfg, seed).unwrap();
        let mut prng = SeededRng::new(derive_seed(seed, "params", 0));
        for component in ensemble.components_mut() {
            let count = component_to_vec(component).len();
            let draws: Vec<f64> = (0..count)
                .map(|_| prng.next_uniform(-0.7, 0.7).unwrap())
                .collect();
            set_component_from_vec(component, &draws);
        }
        let mut rng = SeededRng::new(derive_seed(seed, "input", 0));
        let batch = rng
            .uniform_matrix(-1.0, 1.0, batch_size, arch.input_dim)
            .unwrap();
        let labels: Vec<usize> = (0..batch_size).map(|i| i % arch.labels).collect();
        if ensemble
            .components()
            .iter()
            .all(|c| preactivations_clear(c, &batch))
        {
            break (ensemble, batch, labels);
        }
        attempt += 1;
        assert!(attempt < 200, "could not find a kink-free configuration");
    };

    // Analytic gradient for component 0.
    let component = &ensemble.components()[0];
    let (logits, cache) = component.forward(&batch).unwrap();
    let dlogits = match loss {
        LossUnderTest::Label => cross_entropy(&logits, &labels).unwrap().1,
        LossUnderTest::Ad(kind, attach) => {
            let outputs: Vec<Matrix> = ensemble
                .components()
                .iter()
                .map(|c| {
                    let l = c.forward_logits(&batch).unwrap();
                    match attach {
                        AttachPoint::Logit => l,
                        AttachPoint::Probability => l.softmax_rows(),
                    }
                })
                .collect();
            let batch_outputs = BatchOutputs::new(&outputs).unwrap();
            let mut cfg = ad_cfg(kind);
            cfg.attach = attach;
            let result = ad_loss(&batch_outputs, &cfg).unwrap();
            match attach {
                AttachPoint::Logit => result.grads[0].clone(),
                AttachPoint::Probability => {
                    Matrix::softmax_backward(&outputs[0], &result.grads[0]).unwrap()
                }
            }
        }
    };
    let grads = component.backward(&cache, &dlogits).unwrap();
    let analytic = gradients_to_vec(&grads);

    // Numeric gradient via forward evaluations only.
    let flat = component_to_vec(component);
    let mut probe = ensemble.clone();
    let numeric = fd_gradient(
        |x| {
            set_component_from_vec(&mut probe.components_mut()[0], x);
            loss_value(&probe, &batch, &labels, loss)
        },
        &flat,
        FD_STEP,
    );
    max_relative_error(&analytic, &numeric)
}

/// AD-loss grid in batch-output space.
pub fn output_space_grid() -> GradCheckReport {
    let mut cells = Vec::new();
    for kind in AdKind::ALL_ACTIVE {
        for &j in &[2usize, 3, 5] {
            for &k in &[1usize, 2, 7, 32] {
                for &l in &[1usize, 2, 10] {
                    let err = check_ad_loss_outputs(kind, j, k, l);
                    cells.push(GradCheckCell {
                        name: format!("z {} J{} k{} L{}", kind.token(), j, k, l),
                        max_rel_error: err,
                        passed: err < GRADCHECK_TOLERANCE,
                    });
                }
            }
        }
    }
    GradCheckReport {
        cells,
        tolerance: GRADCHECK_TOLERANCE,
    }
}

/// Backward-pass grid over architectures and losses.
pub fn parameter_space_grid() -> GradCheckReport {
    let mut cells = Vec::new();
    for depth in 1..=3usize {
        for &width in &[2usize, 5, 16] {
            for &labels in &[2usize, 10] {
                let arch = Architecture {
                    input_dim: 4,
                    hidden: vec![width; depth],
                    labels,
                };
                for loss in LossUnderTest::full_set() {
                    let err = check_component_gradients(&arch, loss);
                    cells.push(GradCheckCell {
                        name: format!("mlp d{depth} w{width} L{labels} {}", loss.name()),
                        max_rel_error: err,
                        passed: err < GRADCHECK_TOLERANCE,
                    });
                }
            }
        }
    }
    GradCheckReport {
        cells,
        tolerance: GRADCHECK_TOLERANCE,
    }
}

/// The full validation suite: both grids.
pub fn full_grid() -> GradCheckReport {
    let mut report = output_space_grid();
    report.cells.extend(parameter_space_grid().cells);
    report
}
