use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamGrads;
use crate::error::{Result, SdoreError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[&Array2<f64>]) -> Self {
        let zeros: Vec<Array2<f64>> = params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Array2<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Array2<f64>] {
        &self.v
    }
}

fn check_shapes(params: &[&mut Array2<f64>], grads: &ParamGrads) -> Result<()> {
    if params.len() != grads.len() {
        return Err(SdoreError::Shape {
            context: "optimizer step",
            expected: format!("{} parameter tensors", params.len()),
            actual: format!("{} gradients", grads.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(&grads.0).enumerate() {
        if p.dim() != g.dim() {
            return Err(SdoreError::Shape {
                context: "optimizer step",
                expected: format!("slot {i} {:?}", p.dim()),
                actual: format!("{:?}", g.dim()),
            });
        }
    }
    Ok(())
}

/// One bias-corrected Adam update.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut Array2<f64>],
    grads: &ParamGrads,
    config: &AdamConfig,
) -> Result<()> {
    check_shapes(params, grads)?;
    if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.dim() != p.dim()) {
        return Err(SdoreError::Shape {
            context: "adam state",
            expected: "moments shaped like the parameters".into(),
            actual: format!("{} moment tensors", state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (config.learning_rate, config.eps);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(&grads.0)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        Zip::from(&mut **p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}

/// Plain gradient descent, `θ ← θ − lr·g`.
pub fn sgd_step(params: &mut [&mut Array2<f64>], grads: &ParamGrads, learning_rate: f64) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(&grads.0) {
        p.scaled_add(-learning_rate, g);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = array![[1.0, -2.0]];
        let mut state = AdamState::new(&[&p]);
        state.m[0] = array![[0.5, 0.5]];
        state.v[0] = array![[0.25, 0.25]];
        state.step = 3;
        let before = p.clone();
        let grads = ParamGrads(vec![Array2::zeros((1, 2))]);
        adam_step(&mut state, &mut [&mut p], &grads, &AdamConfig::default()).unwrap();
        assert_eq!(state.m[0], array![[0.45, 0.45]]);
        assert!(state.v[0][[0, 0]] < 0.25);

        // from zero moments the update is exactly zero
        let mut fresh = AdamState::new(&[&before]);
        let mut q = before.clone();
        adam_step(&mut fresh, &mut [&mut q], &grads, &AdamConfig::default()).unwrap();
        assert_eq!(q, before);
        assert_eq!(fresh.step(), 1);
    }

    #[test]
    fn first_step_matches_hand_formula() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut p = array![[0.5, -1.0]];
        let g = array![[0.2, -3.0]];
        let mut state = AdamState::new(&[&p]);
        adam_step(&mut state, &mut [&mut p], &ParamGrads(vec![g.clone()]), &cfg).unwrap();
        for k in 0..2 {
            let gk: f64 = g[[0, k]];
            let m = 0.1 * gk;
            let v = 0.001 * gk * gk;
            let m_hat = m / (1.0 - 0.9);
            let v_hat = v / (1.0 - 0.999);
            let expected = [0.5, -1.0][k] - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((p[[0, k]] - expected).abs() < 1e-15);
        }
        // about lr times the sign of g
        assert!((p[[0, 0]] - 0.49).abs() < 1e-9);
        assert!((p[[0, 1]] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = array![[1.0, 2.0]];
        let mut state = AdamState::new(&[&p]);
        let grads = ParamGrads(vec![Array2::zeros((2, 1))]);
        assert!(adam_step(&mut state, &mut [&mut p], &grads, &AdamConfig::default()).is_err());
        assert!(sgd_step(&mut [&mut p], &ParamGrads(vec![]), 0.1).is_err());
    }
}
