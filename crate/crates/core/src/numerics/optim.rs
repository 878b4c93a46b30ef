use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensor with a freeze flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer. Moment buffers are allocated lazily on the
/// first step and stay shape-congruent with their parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate {} must be positive",
                config.learning_rate
            )));
        }
        Ok(Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to `params[i]`; frozen
    /// parameters are skipped and may have no gradient.
    pub fn step(&mut self, params: &mut [Param], grads: &[Option<&Tensor>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape("optimizer_step", &[params.len()], &[grads.len()]));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len() {
            return Err(Error::shape("optimizer_step", &[self.first.len()], &[params.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.frozen {
                continue;
            }
            let g = g.ok_or_else(|| Error::MissingGradient(p.name.clone()))?;
            if g.shape() != p.value.shape() {
                return Err(Error::shape("optimizer_step", p.value.shape(), g.shape()));
            }
            if !g.all_finite() {
                return Err(Error::non_finite(format!("gradient of `{}`", p.name)));
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.frozen {
                continue;
            }
            let g = g.expect("checked above").data();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((w, gv), mv), vv) in p.value.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bias1;
                let vhat = *vv / bias2;
                *w -= learning_rate * mhat / (vhat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Param {
        Param::new("w", Tensor::new(vec![1], vec![v]).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = vec![scalar_param(1.25)];
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let g = Tensor::zeros(&[1]);
        for _ in 0..10 {
            opt.step(&mut params, &[Some(&g)]).unwrap();
        }
        assert_eq!(params[0].value.data(), &[1.25]);
        assert_eq!(opt.steps(), 10);
    }

    #[test]
    fn quadratic_loss_decreases() {
        // loss = (w - 3)^2, gradient 2 (w - 3)
        let mut params = vec![scalar_param(0.0)];
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.01)).unwrap();
        let loss = |w: f64| (w - 3.0) * (w - 3.0);
        let mut prev = loss(0.0);
        for _ in 0..100 {
            let w = params[0].value.data()[0];
            let g = Tensor::new(vec![1], vec![2.0 * (w - 3.0)]).unwrap();
            opt.step(&mut params, &[Some(&g)]).unwrap();
            let now = loss(params[0].value.data()[0]);
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn frozen_parameter_is_untouched() {
        let mut params = vec![scalar_param(0.5), scalar_param(0.5)];
        params[0].frozen = true;
        let g = Tensor::new(vec![1], vec![4.0]).unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        opt.step(&mut params, &[Some(&g), Some(&g)]).unwrap();
        assert_eq!(params[0].value.data(), &[0.5]);
        assert_ne!(params[1].value.data(), &[0.5]);
        // frozen parameters may omit their gradient entirely
        opt.step(&mut params, &[None, Some(&g)]).unwrap();
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut params = vec![scalar_param(0.5)];
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        assert!(matches!(opt.step(&mut params, &[None]), Err(Error::MissingGradient(_))));
    }
}
