//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::params::{Gradients, ParameterSet};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(params: &ParameterSet) -> Self {
        Self::with_hyper(params, Self::DEFAULT_BETA1, Self::DEFAULT_BETA2, Self::DEFAULT_EPS)
    }

    pub fn with_hyper(params: &ParameterSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    fn check_layout(&self, params: &ParameterSet, grads: &Gradients) -> Result<()> {
        if self.first.len() != params.len() || grads.len() != params.len() {
            return Err(DiffError::Invalid {
                op: "adam_step",
                reason: format!(
                    "{} parameters, {} gradients, {} moment slots",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            });
        }
        for (i, (_, p)) in params.iter().enumerate() {
            if p.shape() != grads.get(i).shape() || p.shape() != self.first[i].shape() {
                return Err(DiffError::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: grads.get(i).shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

/// One Adam update with learning rate `lr`. With `checked`, non-finite
/// gradients are rejected before anything is modified.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    checked: bool,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(DiffError::Invalid {
            op: "adam_step",
            reason: format!("learning rate must be positive, got {lr}"),
        });
    }
    state.check_layout(params, grads)?;
    if checked && !grads.all_finite() {
        return Err(DiffError::NonFinite { op: "adam_step" });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for i in 0..params.len() {
        let g = grads.get(i).data();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let p = params.by_index_mut(i).data_mut();
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut params = ParameterSet::new();
        params.insert("w", Tensor::new(vec![2], vec![0.5, -1.5]).unwrap()).unwrap();
        let before = params.clone();
        let mut st = AdamState::new(&params);
        let grads = Gradients::zeros_like(&params);
        adam_step(&mut params, &grads, &mut st, 1e-3, true).unwrap();
        assert_eq!(params, before);
        assert_eq!(st.step, 1);
    }

    /// Independent scalar Adam written out longhand.
    fn scalar_adam(p: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut p) = (0.0, 0.0, p);
        for (t, g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        p
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut params = ParameterSet::new();
        params.insert("w", Tensor::new(vec![3], vec![0.2, -0.3, 1.0]).unwrap()).unwrap();
        let mut st = AdamState::new(&params);
        let seq = [[0.5, -2.0, 1e-3], [0.1, 0.4, -0.2], [-0.3, 0.0, 0.7]];
        for g in &seq {
            let mut grads = Gradients::zeros_like(&params);
            let mut gv = grads.clone().into_vec();
            gv[0] = Tensor::new(vec![3], g.to_vec()).unwrap();
            grads = Gradients::from_vec(gv);
            adam_step(&mut params, &grads, &mut st, 1e-2, true).unwrap();
        }
        for (j, start) in [0.2, -0.3, 1.0].iter().enumerate() {
            let gs: Vec<f64> = seq.iter().map(|g| g[j]).collect();
            let want = scalar_adam(*start, &gs, 1e-2);
            assert!((params.by_index(0).data()[j] - want).abs() < 1e-15);
        }
        // first step moves every coordinate by ~lr against the gradient sign
        let mut p2 = ParameterSet::new();
        p2.insert("w", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()).unwrap();
        let mut st2 = AdamState::new(&p2);
        let grads = Gradients::from_vec(vec![Tensor::new(vec![2], vec![3.0, -0.01]).unwrap()]);
        adam_step(&mut p2, &grads, &mut st2, 0.1, true).unwrap();
        let d = p2.by_index(0).data();
        assert!((d[0] + 0.1).abs() < 1e-8 && (d[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn descends_on_quadratic() {
        let mut params = ParameterSet::new();
        params.insert("x", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap()).unwrap();
        let mut st = AdamState::new(&params);
        let loss = |p: &ParameterSet| p.by_index(0).sum_squares();
        let mut last = loss(&params);
        for _ in 0..2 {
            let mut g = Graph::new();
            let x = g.param(&params, "x").unwrap();
            let r = g.sum_squares(x).unwrap();
            let grads = g.backward(r, &params).unwrap();
            adam_step(&mut params, &grads, &mut st, 0.05, true).unwrap();
            let now = loss(&params);
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn nan_gradient_rejected_in_checked_mode() {
        let mut params = ParameterSet::new();
        params.insert("w", Tensor::zeros(&[1])).unwrap();
        let mut st = AdamState::new(&params);
        let grads = Gradients::from_vec(vec![Tensor::new(vec![1], vec![f64::NAN]).unwrap()]);
        assert!(adam_step(&mut params, &grads, &mut st, 1e-3, true).is_err());
        assert_eq!(st.step, 0);
    }
}
