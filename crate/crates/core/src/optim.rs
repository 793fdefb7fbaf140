//! Adam with bias correction, and a cosine learning-rate decay.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::nn::{Parameters, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new<P: Parameters<S>>(params: &P) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| vec![S::zero(); t.data.len()])
                .collect::<Vec<_>>()
        };
        Self { step: 0, m: zeros(), v: zeros() }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<S: Scalar, P: Parameters<S>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<S>,
    lr: f64,
    config: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (S::of(config.beta1), S::of(config.beta2));
    let one = S::one();
    let correction1 = S::of(1.0 - config.beta1.powi(t));
    let correction2 = S::of(1.0 - config.beta2.powi(t));
    let lr = S::of(lr);
    let eps = S::of(config.eps);
    let grads = grads.tensors();
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(&grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for i in 0..p.len() {
            let gi = g.data[i];
            m[i] = b1 * m[i] + (one - b1) * gi;
            v[i] = b2 * v[i] + (one - b2) * gi * gi;
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Cosine decay from `lr_init` at epoch 0 to `lr_final` at the last epoch.
///
/// A single-epoch run uses `lr_init`.
pub fn cosine_lr(epoch: usize, epochs: usize, lr_init: f64, lr_final: f64) -> f64 {
    if epochs <= 1 {
        return lr_init;
    }
    let progress = epoch as f64 / (epochs - 1) as f64;
    lr_final + 0.5 * (lr_init - lr_final) * (1.0 + (PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Mlp};

    fn tiny() -> Mlp<f64> {
        Mlp {
            layers: vec![Linear {
                in_dim: 2,
                out_dim: 1,
                weight: vec![0.5, -0.25],
                bias: vec![0.1],
            }],
        }
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 500, 1e-4, 1e-5), 1e-4);
        assert!((cosine_lr(499, 500, 1e-4, 1e-5) - 1e-5).abs() < 1e-20);
        // Exact midpoint of the cosine needs an odd epoch count.
        assert!((cosine_lr(250, 501, 1e-4, 1e-5) - 5.5e-5).abs() < 1e-18);
        assert_eq!(cosine_lr(0, 1, 1e-4, 1e-5), 1e-4);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = tiny();
        let before = p.clone();
        let g = p.zeros_like();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, 1e-3, &AdamConfig::default());
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = tiny();
        let before = p.clone();
        let mut g = p.zeros_like();
        g.layers[0].weight = vec![3.0, -0.002];
        g.layers[0].bias = vec![1e-3];
        let mut state = AdamState::new(&p);
        let lr = 1e-2;
        adam_step(&mut p, &g, &mut state, lr, &AdamConfig::default());
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        let expected = |w: f64, g: f64| w - lr * g / (g.abs() + 1e-8);
        assert!((p.layers[0].weight[0] - expected(before.layers[0].weight[0], 3.0)).abs() < 1e-15);
        assert!((p.layers[0].weight[1] - expected(before.layers[0].weight[1], -0.002)).abs() < 1e-15);
        assert!((p.layers[0].bias[0] - expected(0.1, 1e-3)).abs() < 1e-15);
        assert!(((p.layers[0].weight[0] - before.layers[0].weight[0]) + lr).abs() < 1e-9);
    }

    #[test]
    fn runs_are_reproducible() {
        let run = || {
            let mut p = tiny();
            let mut state = AdamState::new(&p);
            for k in 0..20 {
                let mut g = p.zeros_like();
                g.layers[0].weight = vec![p.layers[0].weight[0] - 1.0, (k as f64).sin()];
                adam_step(&mut p, &g, &mut state, 0.05, &AdamConfig::default());
            }
            p
        };
        assert_eq!(run(), run());
    }
}
