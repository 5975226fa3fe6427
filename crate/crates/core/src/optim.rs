//! Bias-corrected Adam and per-group learning-rate scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LayerGroup;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moments per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(shapes_of: &[Tensor], config: AdamConfig) -> Self {
        let zeros = || shapes_of.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { config, m: zeros(), v: zeros(), t: 0 }
    }
}

/// One Adam update with a learning rate per parameter tensor.
///
/// Rejects the whole step, leaving parameters and state untouched, when any
/// gradient is non-finite.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lrs: &[f64],
) -> Result<()> {
    let n = params.len();
    if grads.len() != n || lrs.len() != n || state.m.len() != n {
        return Err(Error::dim(format!(
            "adam_step: {n} params, {} grads, {} lrs, {} moment slots",
            grads.len(),
            lrs.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::dim(format!(
                "adam_step: param {i} shape {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of parameter {i} at coordinate {j} is {}",
                g.data()[j]
            )));
        }
        if !(lrs[i] > 0.0) {
            return Err(Error::contract(format!("learning rate {} must be positive", lrs[i])));
        }
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let lr = lrs[i];
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for ((theta, g), (m, v)) in p
            .data_mut()
            .iter_mut()
            .zip(grads[i].data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Per-group learning-rate divisors for `(group1, group2, group3)`; group `g`
/// trains at `base_lr / divisors[g]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupLrPolicy {
    pub divisors: [f64; 3],
}

impl Default for GroupLrPolicy {
    fn default() -> Self {
        GroupLrPolicy { divisors: [9.0, 3.0, 1.0] }
    }
}

impl GroupLrPolicy {
    /// Same rate everywhere, disabling discriminative fine-tuning.
    pub fn uniform() -> Self {
        GroupLrPolicy { divisors: [1.0; 3] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.divisors.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::config(format!(
                "group divisors must be positive, got {:?}",
                self.divisors
            )));
        }
        Ok(())
    }

    /// Multipliers `1 / divisor` per group.
    pub fn multipliers(&self) -> [f64; 3] {
        self.divisors.map(|d| 1.0 / d)
    }

    pub fn lr_for(&self, base_lr: f64, group: LayerGroup) -> f64 {
        base_lr / self.divisors[group.index()]
    }
}

/// `(base/9, base/3, base)` under the default policy.
pub fn group_scaled_lrs(base_lr: f64, policy: &GroupLrPolicy) -> [f64; 3] {
    policy.divisors.map(|d| base_lr / d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::vector(vec![0.5, -1.0]).unwrap();
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::new(std::slice::from_ref(&p), AdamConfig::default());
        adam_step(&mut [&mut p], &[g], &mut st, &[0.1]).unwrap();
        assert_eq!(p.data(), &[0.5, -1.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new(std::slice::from_ref(&p), AdamConfig::default());
        adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &mut st, &[0.1]).unwrap();
        let expect = -0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_aborts_without_mutation() {
        let mut p = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let mut st = AdamState::new(std::slice::from_ref(&p), AdamConfig::default());
        let before = (p.clone(), st.clone());
        let g = Tensor::vector(vec![0.1, f64::NAN]).unwrap();
        assert!(matches!(
            adam_step(&mut [&mut p], &[g], &mut st, &[0.1]),
            Err(Error::NonFinite(_))
        ));
        assert_eq!((p, st), before);
    }

    #[test]
    fn group_scaling_examples() {
        let lrs = group_scaled_lrs(0.09, &GroupLrPolicy::default());
        assert_eq!(lrs, [0.09 / 9.0, 0.09 / 3.0, 0.09]);
        assert!((lrs[0] - 0.01).abs() < 1e-17 && (lrs[1] - 0.03).abs() < 1e-17);
        assert_eq!(group_scaled_lrs(0.2, &GroupLrPolicy::uniform()), [0.2; 3]);
    }
}
