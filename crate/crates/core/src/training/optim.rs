use serde::{Deserialize, Serialize};

use crate::model::ClozeModel;
use crate::tensor::Matrix;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            other => Err(format!("unknown optimizer {other:?} (adam|sgd)")),
        }
    }
}

/// Optimizer state, saved in checkpoints so training can resume exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd,
    Adam {
        step: u64,
        first: Vec<Matrix>,
        second: Vec<Matrix>,
    },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &ClozeModel) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd,
            OptimizerKind::Adam => {
                let zeros: Vec<Matrix> = model
                    .tensors()
                    .iter()
                    .map(|(_, m)| Matrix::zeros(m.rows(), m.cols()))
                    .collect();
                Self::Adam {
                    step: 0,
                    first: zeros.clone(),
                    second: zeros,
                }
            }
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match self {
            Self::Sgd => OptimizerKind::Sgd,
            Self::Adam { .. } => OptimizerKind::Adam,
        }
    }

    pub fn step(&mut self, model: &mut ClozeModel, grads: &ClozeModel, lr: f64) {
        let grads = grads.tensors();
        match self {
            Self::Sgd => {
                for (p, (_, g)) in model.tensors_mut().into_iter().zip(&grads) {
                    p.add_scaled(g, -lr);
                }
            }
            Self::Adam { step, first, second } => {
                *step += 1;
                let t = *step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for (((p, (_, g)), m), v) in model
                    .tensors_mut()
                    .into_iter()
                    .zip(&grads)
                    .zip(first.iter_mut())
                    .zip(second.iter_mut())
                {
                    let (p, g, m, v) = (p.as_mut_slice(), g.as_slice(), m.as_mut_slice(), v.as_mut_slice());
                    for i in 0..p.len() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Rescale `grads` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut ClozeModel, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .map(|(_, m)| m.sum_squares())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.scale(s);
        }
    }
    norm
}
