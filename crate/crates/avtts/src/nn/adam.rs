//! Adam with bias correction, one moment pair per named parameter.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    /// first/second moments keyed by parameter name
    pub moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One bias-corrected update over `params`, applied in place.
    /// `lr_scale` multiplies the base learning rate (warmup).
    pub fn step(
        &mut self,
        params: &mut BTreeMap<String, Tensor<f32>>,
        grads: &HashMap<String, Tensor<f32>>,
        trainable: impl Fn(&str) -> bool,
        lr_scale: f32,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c = self.config;
        let bc1 = 1.0 - (c.beta1 as f64).powf(t);
        let bc2 = 1.0 - (c.beta2 as f64).powf(t);
        let lr = c.lr * lr_scale;

        for (name, param) in params.iter_mut() {
            if !trainable(name) {
                continue;
            }
            let Some(grad) = grads.get(name) else {
                continue;
            };
            if grad.shape() != param.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: param.shape().to_vec(),
                    rhs: grad.shape().to_vec(),
                });
            }
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(param.shape()), Tensor::zeros(param.shape())));
            let (md, vd, pd, gd) = (m.data_mut(), v.data_mut(), param.data_mut(), grad.data());
            for i in 0..gd.len() {
                let g = gd[i];
                md[i] = c.beta1 * md[i] + (1.0 - c.beta1) * g;
                vd[i] = c.beta2 * vd[i] + (1.0 - c.beta2) * g * g;
                let mhat = md[i] / bc1 as f32;
                let vhat = vd[i] / bc2 as f32;
                pd[i] -= lr * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f32) -> BTreeMap<String, Tensor<f32>> {
        let mut p = BTreeMap::new();
        p.insert("w".to_string(), Tensor::scalar(v));
        p
    }

    #[test]
    fn first_step_moves_by_lr() {
        // closed form: first step update = -lr * g / (|g| + eps*sqrt(1-b2))
        let mut state = AdamState::new(AdamConfig {
            lr: 1e-3,
            ..Default::default()
        });
        let mut params = one_param(0.0);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::scalar(1.0f32));
        state.step(&mut params, &grads, |_| true, 1.0).unwrap();
        let w = params["w"].data()[0];
        assert!((w + 1e-3).abs() < 1e-6, "got {w}");
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut params = one_param(0.7);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::scalar(0.0f32));
        for _ in 0..5 {
            state.step(&mut params, &grads, |_| true, 1.0).unwrap();
        }
        assert_eq!(params["w"].data()[0], 0.7);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut state = AdamState::new(AdamConfig::default());
            let mut params = one_param(0.5);
            let mut grads = HashMap::new();
            grads.insert("w".to_string(), Tensor::scalar(0.3f32));
            for _ in 0..10 {
                state.step(&mut params, &grads, |_| true, 1.0).unwrap();
            }
            params["w"].data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut params = one_param(0.0);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::<f32>::zeros(&[2]));
        assert!(state.step(&mut params, &grads, |_| true, 1.0).is_err());
    }

    #[test]
    fn frozen_params_untouched() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut params = one_param(0.5);
        let mut grads = HashMap::new();
        grads.insert("w".to_string(), Tensor::scalar(1.0f32));
        state.step(&mut params, &grads, |_| false, 1.0).unwrap();
        assert_eq!(params["w"].data()[0], 0.5);
        assert!(state.moments.is_empty());
    }
}
