//! First-order optimizers over flat parameter slices.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    /// Adam with L2 weight decay folded into the gradient.
    #[default]
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Optimizer {
            kind,
            lr,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Applies one update. `params[k]` and `grads[k]` must keep the same
    /// length from call to call.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.iter_mut().zip(g.iter()) {
                        let grad = gv + self.weight_decay * *pv;
                        *pv -= self.lr * grad;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first.is_empty() {
                    self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.second = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                }
                let bc1 = 1.0 - BETA1.powi(self.step);
                let bc2 = 1.0 - BETA2.powi(self.step);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = &mut self.first[k];
                    let v = &mut self.second[k];
                    for i in 0..p.len() {
                        let grad = g[i] + self.weight_decay * p[i];
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * grad;
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * grad * grad;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= self.lr * m_hat / (v_hat.sqrt() + EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0, -2.0];
        let g = vec![0.5, 1.0];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, 0.0);
        opt.step(&mut [&mut p], &[&g]);
        assert_eq!(p, vec![0.95, -2.1]);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = vec![0.0, 0.0];
        let g = vec![3.0, -0.01];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, 0.0);
        opt.step(&mut [&mut p], &[&g]);
        assert!((p[0] + 0.01).abs() < 1e-8);
        assert!((p[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn zero_lr_is_noop() {
        let mut p = vec![1.0, 2.0];
        let g = vec![5.0, 5.0];
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut opt = Optimizer::new(kind, 0.0, 0.1);
            opt.step(&mut [&mut p], &[&g]);
            assert_eq!(p, vec![1.0, 2.0]);
        }
    }
}
