use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers for Adam, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor], config: AdamConfig) -> Self {
        Self {
            config,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }
}

/// One bias-corrected Adam update. Every parameter must carry a gradient.
pub fn adam_step(params: &mut [Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != state.first.len() {
        return Err(Error::invalid(format!(
            "adam state holds {} buffers but {} parameters were given",
            state.first.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad().is_none() {
            return Err(Error::invalid(format!("parameter {i} has no gradient")));
        }
        if p.len() != state.first[i].len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: vec![state.first[i].len()],
            });
        }
    }

    state.step += 1;
    let AdamConfig {
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    for ((p, m), v) in params
        .iter_mut()
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        let grad = p.grad.take().expect("checked above");
        for (((x, g), m), v) in p.data.iter_mut().zip(&grad).zip(m).zip(v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *x -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        p.grad = Some(grad);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(value: f64, grad: f64) -> Tensor {
        let mut p = Tensor::new(vec![1], vec![value]).unwrap();
        p.set_grad(vec![grad]).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![scalar_param(1.5, 0.0)];
        let mut state = AdamState::new(&params, AdamConfig::default());
        adam_step(&mut params, &mut state, 0.003).unwrap();
        assert_eq!(params[0].data(), &[1.5]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        for g in [3.0, -0.02] {
            let mut params = vec![scalar_param(0.0, g)];
            let mut state = AdamState::new(&params, AdamConfig::default());
            adam_step(&mut params, &mut state, 0.003).unwrap();
            let moved = params[0].data()[0];
            assert!((moved + 0.003 * g.signum()).abs() < 1e-8, "{moved}");
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let mut params = vec![scalar_param(0.0, 0.0)];
        let mut state = AdamState::new(&params, AdamConfig::default());
        for _ in 0..200 {
            let p = params[0].data()[0];
            params[0].set_grad(vec![2.0 * (p - 5.0)]).unwrap();
            adam_step(&mut params, &mut state, 0.1).unwrap();
        }
        assert!((params[0].data()[0] - 5.0).abs() < 0.05);
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut params = vec![Tensor::zeros(vec![2])];
        let mut state = AdamState::new(&params, AdamConfig::default());
        assert!(adam_step(&mut params, &mut state, 0.1).is_err());
        assert_eq!(state.step(), 0);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut params = vec![scalar_param(0.3, 0.7), scalar_param(-1.0, 0.1)];
            let mut state = AdamState::new(&params, AdamConfig::default());
            for _ in 0..5 {
                adam_step(&mut params, &mut state, 0.01).unwrap();
            }
            (params, state)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }
}
