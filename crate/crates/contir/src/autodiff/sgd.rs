//! Stochastic gradient descent with classical momentum.

use std::collections::BTreeMap;

use super::params::{GradientMap, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// SGD update state: `v <- momentum * v + g`, `theta <- theta - lr * v`.
#[derive(Debug, Clone)]
pub struct SgdOptimizer {
    learning_rate: f64,
    momentum: f64,
    velocity: BTreeMap<String, Tensor>,
}

impl SgdOptimizer {
    /// Panics unless `learning_rate > 0` and `momentum` in `[0, 1)`.
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        assert!(
            (0.0..1.0).contains(&momentum),
            "momentum must be in [0, 1)"
        );
        SgdOptimizer {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Apply one update. Gradients must cover every parameter; shapes must
    /// agree; the updated values must stay finite.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &GradientMap) -> Result<()> {
        for (name, value) in params.iter_mut() {
            let grad = grads.get(name).ok_or_else(|| {
                Error::Train(format!("missing gradient for parameter {name}"))
            })?;
            if grad.shape() != value.shape() {
                return Err(Error::Train(format!(
                    "gradient shape {:?} does not match parameter {name} shape {:?}",
                    grad.shape(),
                    value.shape()
                )));
            }
            let velocity = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(value.shape()));
            for ((v, g), p) in velocity
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(value.data_mut())
            {
                *v = self.momentum * *v + g;
                *p -= self.learning_rate * *v;
                if !p.is_finite() {
                    return Err(Error::NonFinite(format!("update of parameter {name}")));
                }
            }
        }
        Ok(())
    }
}
