//! The ensemble of independently trained MLP components.
//!
//! Each component is a ReLU MLP with an identity output layer producing one
//! logit per label. Inference averages the components either in probability
//! space or in logit space; no gradient ever flows through that average —
//! components train purely on their own per-component gradients.

use crate::matrix::{Matrix, MatrixError};
use crate::rng::{derive_seed, SeededRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("input batch has {got} columns, component expects {expected}")]
    InputDimMismatch { got: usize, expected: usize },
    #[error("backward called with a cache from a different forward pass")]
    StaleCache,
}

/// How the ensemble combines component outputs at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AveragingMode {
    /// Mean of the per-component softmax outputs.
    #[serde(rename = "prob")]
    Probability,
    /// Softmax of the mean of the per-component logits.
    #[serde(rename = "logit")]
    Logit,
}

impl std::str::FromStr for AveragingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "prob" => Ok(AveragingMode::Probability),
            "logit" => Ok(AveragingMode::Logit),
            other => Err(format!("unknown averaging mode '{other}' (expected prob|logit)")),
        }
    }
}

/// Architecture shared by all components of one ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub labels: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 {
            return Err(ModelError::InvalidArchitecture("input_dim must be > 0".into()));
        }
        if self.labels == 0 {
            return Err(ModelError::InvalidArchitecture("labels must be > 0".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(ModelError::InvalidArchitecture("hidden widths must be > 0".into()));
        }
        Ok(())
    }

    /// Layer dimension chain: input, hidden..., labels.
    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.labels);
        dims
    }
}

/// One dense layer: weights `in x out`, bias of length `out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// One ensemble component: hidden layers use ReLU, the output layer is
/// identity over the label logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpComponent {
    layers: Vec<Layer>,
}

/// Forward-pass intermediates needed by the backward pass: the input batch
/// and every post-ReLU hidden activation.
pub struct ForwardCache {
    input: Matrix,
    hidden: Vec<Matrix>,
}

/// Per-layer parameter gradients in layer order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl MlpComponent {
    /// Glorot-style uniform init scaled by `init_scale`, zero biases.
    ///
    /// The base draw is `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`;
    /// the scale multiplies the draw afterwards, so inits with scales `s`
    /// and `1` from the same seed differ by exactly the factor `s`.
    pub fn init(arch: &Architecture, seed: u64, init_scale: f64) -> Result<Self, ModelError> {
        arch.validate()?;
        if !(init_scale > 0.0) || !init_scale.is_finite() {
            return Err(ModelError::InvalidArchitecture(format!(
                "init scale must be finite and > 0, got {init_scale}"
            )));
        }
        let dims = arch.dims();
        let mut rng = SeededRng::new(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let base = rng
                .uniform_matrix(-bound, bound, fan_in, fan_out)
                .expect("valid glorot bound");
            let weights = base.scale(init_scale)?;
            layers.push(Layer {
                weights,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(MlpComponent { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::InvalidArchitecture("component needs >= 1 layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weights.cols() != pair[1].weights.rows() {
                return Err(ModelError::InvalidArchitecture(
                    "layer dimensions do not chain".into(),
                ));
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.weights.cols() {
                return Err(ModelError::InvalidArchitecture(
                    "bias length must equal layer output width".into(),
                ));
            }
        }
        Ok(MlpComponent { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.cols()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.rows() * l.weights.cols() + l.bias.len())
            .sum()
    }

    /// Forward pass over a `k x input_dim` batch; returns `k x labels`
    /// logits and the cache for [`MlpComponent::backward`].
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ForwardCache), ModelError> {
        if batch.cols() != self.input_dim() {
            return Err(ModelError::InputDimMismatch {
                got: batch.cols(),
                expected: self.input_dim(),
            });
        }
        let mut hidden = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut activation = batch.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let pre = activation
                .matmul(&layer.weights)?
                .add_row_vector(&layer.bias)?;
            if idx + 1 == self.layers.len() {
                return Ok((
                    pre,
                    ForwardCache {
                        input: batch.clone(),
                        hidden,
                    },
                ));
            }
            let post = pre.map("relu", |v| v.max(0.0))?;
            hidden.push(post.clone());
            activation = post;
        }
        unreachable!("component always has an output layer")
    }

    /// Logits only; used by inference and by finite-difference checks.
    pub fn forward_logits(&self, batch: &Matrix) -> Result<Matrix, ModelError> {
        Ok(self.forward(batch)?.0)
    }

    /// Backpropagates `dloss/dlogits` through the component, producing
    /// gradients for every weight and bias.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dlogits: &Matrix,
    ) -> Result<Gradients, ModelError> {
        if cache.hidden.len() + 1 != self.layers.len()
            || cache.input.rows() != dlogits.rows()
            || dlogits.cols() != self.output_dim()
        {
            return Err(ModelError::StaleCache);
        }
        let mut grads: Vec<LayerGradients> = Vec::with_capacity(self.layers.len());
        let mut delta = dlogits.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let below: &Matrix = if idx == 0 { &cache.input } else { &cache.hidden[idx - 1] };
            if below.rows() != delta.rows() || below.cols() != layer.weights.rows() {
                return Err(ModelError::StaleCache);
            }
            let dw = below.matmul_tn(&delta)?;
            let db = delta.column_sums();
            grads.push(LayerGradients {
                weights: dw,
                bias: db,
            });
            if idx > 0 {
                // Transposing once and using the row-major product keeps the
                // inner accumulation vectorizable; per-entry summation order
                // is unchanged.
                let upstream = delta.matmul(&layer.weights.transpose())?;
                // ReLU mask: the post-activation is positive iff the
                // pre-activation was.
                delta = upstream.zip_map(&cache.hidden[idx - 1], "relu_backward", |g, post| {
                    if post > 0.0 {
                        g
                    } else {
                        0.0
                    }
                })?;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }
}

/// The trainable object: `J` components plus an averaging mode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    components: Vec<MlpComponent>,
    averaging: AveragingMode,
}

/// Everything needed to build an ensemble deterministically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub architecture: Architecture,
    pub components: usize,
    pub averaging: AveragingMode,
    pub init_scale: f64,
}

/// Seed tag for per-component initialization streams.
pub const INIT_SEED_TAG: &str = "init";

impl EnsembleModel {
    /// Initializes component `j` from `derive_seed(init_seed, "init", j)`,
    /// so components differ from each other while the whole ensemble is a
    /// deterministic function of `init_seed`.
    pub fn init(config: &EnsembleConfig, init_seed: u64) -> Result<Self, ModelError> {
        if config.components == 0 {
            return Err(ModelError::InvalidArchitecture(
                "ensemble needs at least one component".into(),
            ));
        }
        let components = (0..config.components)
            .map(|j| {
                let seed = derive_seed(init_seed, INIT_SEED_TAG, j as u64);
                MlpComponent::init(&config.architecture, seed, config.init_scale)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EnsembleModel {
            components,
            averaging: config.averaging,
        })
    }

    pub fn from_components(
        components: Vec<MlpComponent>,
        averaging: AveragingMode,
    ) -> Result<Self, ModelError> {
        let first = components
            .first()
            .ok_or_else(|| ModelError::InvalidArchitecture("empty ensemble".into()))?;
        let (input_dim, output_dim) = (first.input_dim(), first.output_dim());
        if components
            .iter()
            .any(|c| c.input_dim() != input_dim || c.output_dim() != output_dim)
        {
            return Err(ModelError::InvalidArchitecture(
                "components must share input and output dimensions".into(),
            ));
        }
        Ok(EnsembleModel {
            components,
            averaging,
        })
    }

    pub fn components(&self) -> &[MlpComponent] {
        &self.components
    }

    pub fn components_mut(&mut self) -> &mut [MlpComponent] {
        &mut self.components
    }

    pub fn averaging(&self) -> AveragingMode {
        self.averaging
    }

    pub fn label_count(&self) -> usize {
        self.components[0].output_dim()
    }

    /// Ensemble prediction probabilities for a batch. Inference only:
    /// gradients never propagate through the ensemble average.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix, ModelError> {
        let scale = 1.0 / self.components.len() as f64;
        match self.averaging {
            AveragingMode::Probability => {
                let mut acc: Option<Matrix> = None;
                for component in &self.components {
                    let probs = component.forward_logits(batch)?.softmax_rows();
                    acc = Some(match acc {
                        None => probs,
                        Some(sum) => sum.add(&probs)?,
                    });
                }
                Ok(acc.unwrap().scale(scale)?)
            }
            AveragingMode::Logit => {
                let mut acc: Option<Matrix> = None;
                for component in &self.components {
                    let logits = component.forward_logits(batch)?;
                    acc = Some(match acc {
                        None => logits,
                        Some(sum) => sum.add(&logits)?,
                    });
                }
                Ok(acc.unwrap().scale(scale)?.softmax_rows())
            }
        }
    }
}
