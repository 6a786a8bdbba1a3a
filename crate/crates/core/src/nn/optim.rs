//! Gradient-descent optimizers over flat parameter vectors.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state: learning rate plus, for adam, per-parameter moment
/// accumulators and a step counter.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_count: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; param_count], vec![0.0; param_count]),
        };
        Self {
            kind,
            learning_rate,
            m,
            v,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update in place: sgd does theta -= alpha * g; adam the
    /// standard bias-corrected update.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape {
                context: "optimizer step",
                expected: params.len(),
                got: grads.len(),
            });
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::Shape {
                        context: "adam moments",
                        expected: self.m.len(),
                        got: params.len(),
                    });
                }
                self.step += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_basic_update() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, 1);
        let mut p = [1.0];
        opt.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude_is_about_alpha() {
        // Closed form: after one step m_hat = g, v_hat = g^2, so the update
        // is alpha * g / (|g| + eps), i.e. alpha up to the tiny eps term.
        for &g in &[1e-3, 0.5, -2.0, 40.0] {
            let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, 1);
            let mut p = [0.0];
            opt.step(&mut p, &[g]).unwrap();
            let mag = p[0].abs();
            assert!(mag <= 0.01 && mag > 0.01 * 0.999, "got {mag}");
            assert_eq!(p[0].signum(), -g.signum());
        }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut sgd = Optimizer::new(OptimizerKind::Sgd, 0.1, 2);
        let mut p = [1.0, -2.0];
        sgd.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.0, -2.0]);

        let mut adam = Optimizer::new(OptimizerKind::Adam, 0.1, 2);
        adam.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, 2);
        let mut p = [1.0, 2.0];
        assert!(matches!(opt.step(&mut p, &[0.0]), Err(Error::Shape { .. })));
    }
}
