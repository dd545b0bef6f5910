use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Module, NnError, Parameter};
use crate::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_shape(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update; gradients are zeroed afterwards.
pub fn adam_step<T: Scalar>(
    p: &mut Parameter<T>,
    s: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), NnError> {
    if !p.grad.all_finite() {
        return Err(NnError::NonFiniteGradient(p.name.clone()));
    }
    s.t += 1;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powi(s.t as i32));
    let c2 = T::lit(1.0 - cfg.beta2.powi(s.t as i32));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let one = T::one();
    let values = p.value.data_mut();
    let grads = p.grad.data();
    let (m, v) = (s.m.data_mut(), s.v.data_mut());
    for i in 0..values.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    p.zero_grad();
    Ok(())
}

/// Adam over every trainable parameter of a module, keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub states: BTreeMap<String, AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            states: BTreeMap::new(),
        }
    }

    /// Updates all trainable parameters. Nothing is modified if any gradient
    /// is non-finite.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M) -> Result<(), NnError> {
        let mut bad = None;
        module.visit_params(&mut |p| {
            if bad.is_none() && p.trainable && !p.grad.all_finite() {
                bad = Some(p.name.clone());
            }
        });
        if let Some(name) = bad {
            return Err(NnError::NonFiniteGradient(name));
        }
        let cfg = self.config;
        let states = &mut self.states;
        let mut result = Ok(());
        module.visit_params_mut(&mut |p| {
            if !p.trainable {
                p.zero_grad();
                return;
            }
            let state = states
                .entry(p.name.clone())
                .or_insert_with(|| AdamState::for_shape(p.value.shape()));
            if result.is_ok() {
                result = adam_step(p, state, &cfg);
            }
        });
        result
    }
}
