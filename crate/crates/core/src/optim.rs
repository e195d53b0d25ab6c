//! Parameter updates: AdaGrad (the paper-anchored optimizer) and plain SGD
//! as an ablation alternative.

use crate::matrix::{Matrix, MatrixError};
use crate::model::{Gradients, MlpComponent};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("gradient contains a non-finite entry (layer {layer})")]
    NonFiniteGradient { layer: usize },
    #[error("gradient shapes do not match parameters (layer {layer})")]
    ShapeMismatch { layer: usize },
    #[error("invalid optimizer setting: {0}")]
    InvalidSetting(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Adagrad {
        learning_rate: f64,
        accumulator_init: f64,
    },
    Sgd {
        learning_rate: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adagrad {
            learning_rate: 0.02,
            accumulator_init: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        match *self {
            OptimizerConfig::Adagrad {
                learning_rate,
                accumulator_init,
            } => {
                if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                    return Err(OptimError::InvalidSetting(format!(
                        "learning rate must be > 0, got {learning_rate}"
                    )));
                }
                if !(accumulator_init > 0.0 && accumulator_init.is_finite()) {
                    return Err(OptimError::InvalidSetting(format!(
                        "accumulator init must be > 0, got {accumulator_init}"
                    )));
                }
            }
            OptimizerConfig::Sgd { learning_rate } => {
                if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                    return Err(OptimError::InvalidSetting(format!(
                        "learning rate must be > 0, got {learning_rate}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Per-parameter state for one component.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Adagrad {
        learning_rate: f64,
        /// Accumulators mirror the parameter shapes; entries start at
        /// `accumulator_init > 0` and never decrease, so no epsilon term
        /// is needed in the update.
        weight_acc: Vec<Matrix>,
        bias_acc: Vec<Vec<f64>>,
    },
    Sgd {
        learning_rate: f64,
    },
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig, component: &MlpComponent) -> Result<Self, OptimError> {
        config.validate()?;
        match *config {
            OptimizerConfig::Adagrad {
                learning_rate,
                accumulator_init,
            } => {
                let mut weight_acc = Vec::with_capacity(component.layers().len());
                let mut bias_acc = Vec::with_capacity(component.layers().len());
                for layer in component.layers() {
                    weight_acc.push(Matrix::filled(
                        layer.weights.rows(),
                        layer.weights.cols(),
                        accumulator_init,
                    )?);
                    bias_acc.push(vec![accumulator_init; layer.bias.len()]);
                }
                Ok(OptimizerState::Adagrad {
                    learning_rate,
                    weight_acc,
                    bias_acc,
                })
            }
            OptimizerConfig::Sgd { learning_rate } => Ok(OptimizerState::Sgd { learning_rate }),
        }
    }

    /// Applies one update step to a component in place.
    ///
    /// AdaGrad: `a += g^2; w -= lr * g / sqrt(a)`.
    /// SGD: `w -= lr * g`.
    pub fn step(
        &mut self,
        component: &mut MlpComponent,
        grads: &Gradients,
    ) -> Result<(), OptimError> {
        if grads.layers.len() != component.layers().len() {
            return Err(OptimError::ShapeMismatch { layer: 0 });
        }
        for (layer_idx, (layer, grad)) in component
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .enumerate()
        {
            if grad.weights.shape() != layer.weights.shape()
                || grad.bias.len() != layer.bias.len()
            {
                return Err(OptimError::ShapeMismatch { layer: layer_idx });
            }
            let finite = grad.weights.as_slice().iter().all(|g| g.is_finite())
                && grad.bias.iter().all(|g| g.is_finite());
            if !finite {
                return Err(OptimError::NonFiniteGradient { layer: layer_idx });
            }

            match self {
                OptimizerState::Adagrad {
                    learning_rate,
                    weight_acc,
                    bias_acc,
                } => {
                    let lr = *learning_rate;
                    let acc = weight_acc[layer_idx].as_mut_slice();
                    for ((w, &g), a) in layer
                        .weights
                        .as_mut_slice()
                        .iter_mut()
                        .zip(grad.weights.as_slice())
                        .zip(acc.iter_mut())
                    {
                        *a += g * g;
                        *w -= lr * g / a.sqrt();
                    }
                    for ((b, &g), a) in layer
                        .bias
                        .iter_mut()
                        .zip(&grad.bias)
                        .zip(bias_acc[layer_idx].iter_mut())
                    {
                        *a += g * g;
                        *b -= lr * g / a.sqrt();
                    }
                }
                OptimizerState::Sgd { learning_rate } => {
                    let lr = *learning_rate;
                    for (w, &g) in layer
                        .weights
                        .as_mut_slice()
                        .iter_mut()
                        .zip(grad.weights.as_slice())
                    {
                        *w -= lr * g;
                    }
                    for (b, &g) in layer.bias.iter_mut().zip(&grad.bias) {
                        *b -= lr * g;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, LayerGradients};

    fn one_param_component(w: f64) -> MlpComponent {
        MlpComponent::from_layers(vec![Layer {
            weights: Matrix::filled(1, 1, w).unwrap(),
            bias: vec![0.0],
        }])
        .unwrap()
    }

    fn grad(g: f64, gb: f64) -> Gradients {
        Gradients {
            layers: vec![LayerGradients {
                weights: Matrix::filled(1, 1, g).unwrap(),
                bias: vec![gb],
            }],
        }
    }

    #[test]
    fn zero_gradient_leaves_everything_unchanged() {
        let mut component = one_param_component(0.5);
        let cfg = OptimizerConfig::default();
        let mut state = OptimizerState::new(&cfg, &component).unwrap();
        let before = component.clone();
        state.step(&mut component, &grad(0.0, 0.0)).unwrap();
        assert_eq!(component, before);
        if let OptimizerState::Adagrad { weight_acc, .. } = &state {
            assert_eq!(weight_acc[0].get(0, 0), 0.1);
        }
    }

    #[test]
    fn adagrad_hand_example() {
        // w = 0, g = 1, a0 = 0.1, lr = 0.02 -> a = 1.1, w = -0.02/sqrt(1.1)
        let mut component = one_param_component(0.0);
        let cfg = OptimizerConfig::Adagrad {
            learning_rate: 0.02,
            accumulator_init: 0.1,
        };
        let mut state = OptimizerState::new(&cfg, &component).unwrap();
        state.step(&mut component, &grad(1.0, 0.0)).unwrap();
        let w = component.layers()[0].weights.get(0, 0);
        assert!((w - (-0.02 / 1.1_f64.sqrt())).abs() < 1e-15, "w = {w}");
        assert!((w - (-0.0190693)).abs() < 1e-7);
        if let OptimizerState::Adagrad { weight_acc, .. } = &state {
            assert!((weight_acc[0].get(0, 0) - 1.1).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_steps_shrink() {
        let mut component = one_param_component(0.0);
        let cfg = OptimizerConfig::default();
        let mut state = OptimizerState::new(&cfg, &component).unwrap();
        state.step(&mut component, &grad(1.0, 0.0)).unwrap();
        let w1 = component.layers()[0].weights.get(0, 0);
        state.step(&mut component, &grad(1.0, 0.0)).unwrap();
        let w2 = component.layers()[0].weights.get(0, 0);
        let first = w1.abs();
        let second = (w2 - w1).abs();
        assert!(second < first, "second step {second} not smaller than {first}");
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut component = one_param_component(0.0);
        let cfg = OptimizerConfig::default();
        let mut state = OptimizerState::new(&cfg, &component).unwrap();
        let bad = Gradients {
            layers: vec![LayerGradients {
                weights: Matrix::zeros(1, 1),
                bias: vec![f64::NAN],
            }],
        };
        assert!(matches!(
            state.step(&mut component, &bad),
            Err(OptimError::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn sgd_step() {
        let mut component = one_param_component(1.0);
        let cfg = OptimizerConfig::Sgd { learning_rate: 0.1 };
        let mut state = OptimizerState::new(&cfg, &component).unwrap();
        state.step(&mut component, &grad(2.0, -1.0)).unwrap();
        assert!((component.layers()[0].weights.get(0, 0) - 0.8).abs() < 1e-15);
        assert!((component.layers()[0].bias[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn invalid_settings_rejected() {
        let component = one_param_component(0.0);
        let bad = OptimizerConfig::Adagrad {
            learning_rate: 0.0,
            accumulator_init: 0.1,
        };
        assert!(OptimizerState::new(&bad, &component).is_err());
        let bad = OptimizerConfig::Adagrad {
            learning_rate: 0.1,
            accumulator_init: 0.0,
        };
        assert!(OptimizerState::new(&bad, &component).is_err());
    }
}
