use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::HeadError;

/// Beta-distributed interpolation weight, truncated from below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LambdaPolicy {
    pub alpha: f64,
    pub beta: f64,
    pub floor: f64,
    pub max_rejections: u32,
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        Self {
            alpha: 8.0,
            beta: 2.0,
            floor: 0.7,
            max_rejections: 64,
        }
    }
}

impl LambdaPolicy {
    pub fn validate(&self) -> Result<(), HeadError> {
        let ok = self.alpha > 0.0
            && self.beta > 0.0
            && self.alpha.is_finite()
            && self.beta.is_finite()
            && self.floor > 0.0
            && self.floor < 1.0;
        if ok {
            Ok(())
        } else {
            Err(HeadError::InvalidPolicy(format!(
                "alpha={} beta={} floor={}",
                self.alpha, self.beta, self.floor
            )))
        }
    }

    /// E[X | X >= floor] for X ~ Beta(alpha, beta).
    ///
    /// Uses E[X 1{X >= f}] = alpha / (alpha + beta) * (1 - I_f(alpha + 1, beta)).
    pub fn truncated_mean(&self) -> f64 {
        let (a, b, f) = (self.alpha, self.beta, self.floor);
        let tail = 1.0 - beta_reg(a, b, f);
        if tail <= 0.0 {
            return f;
        }
        let mean = a / (a + b) * (1.0 - beta_reg(a + 1.0, b, f)) / tail;
        mean.clamp(f, 1.0)
    }
}

/// Draw from Beta(alpha, beta), redrawing values below the floor up to
/// `max_rejections` times; a draw still below the floor is clamped to it.
pub fn sample_lambda<R: Rng + ?Sized>(policy: &LambdaPolicy, rng: &mut R) -> Result<f64, HeadError> {
    policy.validate()?;
    let dist = Beta::new(policy.alpha, policy.beta)
        .map_err(|e| HeadError::InvalidPolicy(e.to_string()))?;
    let mut draw = dist.sample(rng);
    for _ in 0..policy.max_rejections {
        if draw >= policy.floor {
            break;
        }
        draw = dist.sample(rng);
    }
    Ok(draw.clamp(policy.floor, 1.0))
}
