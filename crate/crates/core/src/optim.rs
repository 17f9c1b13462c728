//! AdamW with decoupled weight decay, and the cosine learning-rate schedule.

use core::f64::consts::PI;

use crate::math::{cos, powi, sqrt};
use crate::model::{Gradients, ParamSet};
use crate::{Error, Result};

/// `0.5 * max_lr * (1 + cos(pi * step / total_steps))`, clamped to zero past
/// the end of the schedule.
pub fn cosine_lr(step: u64, total_steps: u64, max_lr: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return if total_steps == 0 { max_lr } else { 0.0 };
    }
    0.5 * max_lr * (1.0 + cos(PI * step as f64 / total_steps as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First and second moment estimates per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: ParamSet,
    pub second_moment: ParamSet,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamSet) -> Self {
        OptimizerState { first_moment: params.zeros_like(), second_moment: params.zeros_like(), step: 0 }
    }
}

/// One AdamW update in place.
pub fn adamw_step(params: &mut ParamSet, grads: &Gradients, state: &mut OptimizerState, lr: f64, config: &AdamWConfig) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    let shapes_match = params.tensors().map(<[f64]>::len).eq(grads.tensors().map(<[f64]>::len))
        && params.tensors().map(<[f64]>::len).eq(state.first_moment.tensors().map(<[f64]>::len));
    if !shapes_match {
        return Err(Error::shape("parameters, gradients and optimizer state differ in shape"));
    }
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let bias1 = 1.0 - powi(config.beta1, t);
    let bias2 = 1.0 - powi(config.beta2, t);
    let decay = 1.0 - lr * config.weight_decay;
    let tensors = params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut());
    for (((p, g), m), v) in tensors {
        for i in 0..p.len() {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] = p[i] * decay - lr * m_hat / (sqrt(v_hat) + config.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::Linear;
    use alloc::vec;

    fn scalar(v: f64) -> ParamSet {
        ParamSet { layers: vec![Linear { weight: Matrix::from_vec(1, 1, vec![v]).unwrap(), bias: vec![0.0] }] }
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.001), 0.001);
        assert!(cosine_lr(100, 100, 0.001).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.001) - 0.0005).abs() < 1e-15);
        let lrs: alloc::vec::Vec<f64> = (0..=1000).map(|s| cosine_lr(s, 1000, 1.0)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_gradient_no_decay_is_a_no_op() {
        let mut p = scalar(0.7);
        let g = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &g, &mut s, 0.1, &cfg).unwrap();
        assert_eq!(p, scalar(0.7));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(0.0);
        let g = scalar(1.0);
        let mut s = OptimizerState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &g, &mut s, 0.1, &cfg).unwrap();
        // m_hat = v_hat = 1, so the update is -0.1 / (1 + 1e-8).
        let w = p.layers[0].weight.get(0, 0);
        assert!((w + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn decoupled_decay() {
        let mut p = scalar(2.0);
        let g = scalar(0.0);
        let mut s = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut s, 1.0, &AdamWConfig::default()).unwrap();
        assert!((p.layers[0].weight.get(0, 0) - 1.98).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradients_rejected() {
        let mut p = scalar(1.0);
        let mut s = OptimizerState::new(&p);
        assert!(adamw_step(&mut p, &scalar(f64::NAN), &mut s, 0.1, &AdamWConfig::default()).is_err());
    }
}
