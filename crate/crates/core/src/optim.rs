//! First-order optimizers over flat parameter buffers.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, sizes: &[usize]) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (
                sizes.iter().map(|&n| vec![0.0; n]).collect(),
                sizes.iter().map(|&n| vec![0.0; n]).collect(),
            ),
        };
        Self { kind, step: 0, m, v }
    }

    pub fn for_params(kind: OptimizerKind, params: &[&Tensor]) -> Self {
        let sizes: Vec<usize> = params.iter().map(|t| t.len()).collect();
        Self::new(kind, &sizes)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. With `lr == 0` the parameters are left untouched
    /// bit for bit, whatever the optimizer.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                if lr == 0.0 {
                    return;
                }
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.iter_mut().zip(g) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    for i in 0..g.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        if lr != 0.0 {
                            let m_hat = m[i] / c1;
                            let v_hat = v[i] / c2;
                            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl_grad(x: &[f64]) -> Vec<f64> {
        // f(x) = Σ (x_i - i)²
        x.iter().enumerate().map(|(i, &v)| 2.0 * (v - i as f64)).collect()
    }

    fn dist(x: &[f64]) -> f64 {
        x.iter().enumerate().map(|(i, &v)| (v - i as f64).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn sgd_step_moves_toward_minimum() {
        let mut x = vec![5.0, -3.0, 0.5];
        let before = dist(&x);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, &[3]);
        let g = bowl_grad(&x);
        opt.step(&mut [&mut x], &[g], 0.1);
        assert!(dist(&x) < before);
        // exact: x - 0.1 * 2 (x - i) = 0.8 x + 0.2 i
        assert_eq!(x, vec![4.0, 0.8 * -3.0 + 0.2, 0.8 * 0.5 + 0.4]);
    }

    #[test]
    fn adam_converges_on_bowl() {
        let mut x = vec![5.0, -3.0, 0.5, 9.0];
        let mut opt = Optimizer::new(OptimizerKind::Adam, &[4]);
        for _ in 0..2000 {
            let g = bowl_grad(&x);
            opt.step(&mut [&mut x], &[g], 0.05);
        }
        assert!(dist(&x) < 1e-3, "{x:?}");
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let orig = vec![0.1, -0.2, 0.3];
            let mut x = orig.clone();
            let mut opt = Optimizer::new(kind, &[3]);
            for _ in 0..5 {
                let g = bowl_grad(&x);
                opt.step(&mut [&mut x], &[g], 0.0);
            }
            assert_eq!(x, orig);
        }
    }
}
