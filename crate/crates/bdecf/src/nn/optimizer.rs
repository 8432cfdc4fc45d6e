//! Parameter update rules over named tensor lists.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Stateful optimizer. Moment buffers are aligned by tensor index, so a
/// given optimizer instance must always be stepped with the same model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new<M: Parameterized>(kind: OptimizerKind, learning_rate: f64, model: &M) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        let sizes: Vec<usize> = model.tensors().iter().map(|t| t.data.len()).collect();
        let needs_moments = matches!(kind, OptimizerKind::Adam { .. });
        let m = if needs_moments {
            sizes.iter().map(|&n| vec![0.0; n]).collect()
        } else {
            Vec::new()
        };
        let v = m.clone();
        Self {
            kind,
            learning_rate,
            t: 0,
            m,
            v,
        }
    }

    /// One update: sgd `p -= lr * g`; adam the standard bias-corrected
    /// first/second-moment rule. Rejects non-finite gradients.
    pub fn step<M: Parameterized, G: Parameterized>(
        &mut self,
        model: &mut M,
        grads: &G,
    ) -> Result<()> {
        let g_tensors = grads.tensors();
        let mut p_tensors = model.tensors_mut();
        if g_tensors.len() != p_tensors.len() {
            return Err(Error::ShapeMismatch {
                context: "optimizer step".into(),
                expected: format!("{} tensors", p_tensors.len()),
                got: format!("{} tensors", g_tensors.len()),
            });
        }
        for (p, g) in p_tensors.iter().zip(g_tensors.iter()) {
            if p.data.len() != g.data.len() {
                return Err(Error::ShapeMismatch {
                    context: format!("optimizer step on {}", p.name),
                    expected: format!("{:?}", p.shape),
                    got: format!("{:?}", g.shape),
                });
            }
            if g.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(g.name.clone()));
            }
        }

        self.t += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in p_tensors.iter_mut().zip(g_tensors.iter()) {
                    for (pv, gv) in p.data.iter_mut().zip(g.data.iter()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for ((p, g), (m, v)) in p_tensors
                    .iter_mut()
                    .zip(g_tensors.iter())
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    for i in 0..p.data.len() {
                        let gi = g.data[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
