use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{instance_loss, loss_and_grad, objective_logits, Objective, TrainError, PROB_FLOOR};
use crate::heads::HeadMode;
use crate::corpus::{CandidateInventory, ClozeInstance};
use crate::model::ClozeModel;

/// Below this magnitude a gradient counts as zero and the absolute error is
/// reported instead of the relative one.
pub const ZERO_GRADIENT: f64 = 1e-8;

/// Which parameters the check may perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamScope {
    All,
    /// Idiom embeddings and head parameters; the encoder is held fixed.
    HeadsOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSample {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub samples: Vec<GradCheckSample>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.error.total_cmp(&b.error))
    }
}

/// Gold probability at `plus` and `minus` logits and their difference,
/// formed without subtracting two rounded probabilities.
fn gold_prob_delta(plus: &[f64], minus: &[f64], gold: usize) -> (f64, f64, f64) {
    let mut s_plus = 0.0;
    let mut s_minus = 0.0;
    let mut s_delta = 0.0;
    for (zp, zm) in plus.iter().zip(minus) {
        let a = zm - minus[gold];
        let b = zp - plus[gold];
        let ea = a.exp();
        s_minus += ea;
        s_plus += b.exp();
        // exp(a) - exp(b), with b - a taken from logit differences
        s_delta -= ea * ((zp - zm) - (plus[gold] - minus[gold])).exp_m1();
    }
    (1.0 / s_plus, 1.0 / s_minus, s_delta / (s_plus * s_minus))
}

/// `L(θ+ε) − L(θ−ε)` from the logits at both points. Mathematically the
/// plain difference of losses; evaluated through `ln_1p` so that a loss of
/// order one does not swamp differences near the rounding floor.
fn loss_difference(
    model_plus: (&[f64], &[f64]),
    model_minus: (&[f64], &[f64]),
    gold: usize,
    objective: Objective,
) -> Option<f64> {
    let (w_char, w_ctx) = match objective.mode {
        HeadMode::Char => (1.0, 0.0),
        HeadMode::Embed | HeadMode::Pooling => (0.0, 1.0),
        HeadMode::Dual => (objective.lambda, 1.0 - objective.lambda),
    };
    let mut q_plus = 0.0;
    let mut q_minus = 0.0;
    let mut dq = 0.0;
    for (w, plus, minus) in [
        (w_char, model_plus.0, model_minus.0),
        (w_ctx, model_plus.1, model_minus.1),
    ] {
        if w == 0.0 {
            continue;
        }
        let (pp, pm, d) = gold_prob_delta(plus, minus, gold);
        q_plus += w * pp;
        q_minus += w * pm;
        dq += w * d;
    }
    let usable = q_plus > PROB_FLOOR && q_minus > PROB_FLOOR && dq.is_finite();
    usable.then(|| -(dq / q_minus).ln_1p())
}

/// Compare the analytic gradient of one instance's loss with central
/// differences `(L(θ+ε) − L(θ−ε)) / 2ε` at `sample_count` scalar parameters
/// drawn uniformly from `scope`.
pub fn finite_diff_check(
    model: &ClozeModel,
    inventory: &CandidateInventory,
    instance: &ClozeInstance,
    objective: Objective,
    scope: ParamScope,
    epsilon: f64,
    sample_count: usize,
    seed: u64,
) -> Result<GradCheckReport, TrainError> {
    let train_encoder = scope == ParamScope::All;
    let gold = instance.gold_position().ok_or(TrainError::IndexOutOfRange {
        index: instance.gold,
        len: instance.candidate_ids.len(),
    })?;
    let mut grads = model.zeros_like();
    loss_and_grad(model, inventory, instance, objective, Some(&mut grads), train_encoder)?;

    let first = match scope {
        ParamScope::All => 0,
        ParamScope::HeadsOnly => model.encoder_tensor_count(),
    };
    let sizes: Vec<usize> = model.tensors().iter().map(|(_, m)| m.len()).collect();
    let names: Vec<String> = model.tensors().into_iter().map(|(n, _)| n).collect();
    let total: usize = sizes[first..].iter().sum();
    let grad_tensors = grads.tensors();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = model.clone();
    let mut samples = Vec::with_capacity(sample_count);
    for _ in 0..sample_count {
        let mut flat = rng.random_range(0..total);
        let mut t = first;
        while flat >= sizes[t] {
            flat -= sizes[t];
            t += 1;
        }
        let original = model.tensors()[t].1.as_slice()[flat];

        probe.tensors_mut()[t].as_mut_slice()[flat] = original + epsilon;
        let plus = objective_logits(&probe, inventory, instance, objective.mode)?;
        probe.tensors_mut()[t].as_mut_slice()[flat] = original - epsilon;
        let minus = objective_logits(&probe, inventory, instance, objective.mode)?;
        let delta = match loss_difference((&plus.0, &plus.1), (&minus.0, &minus.1), gold, objective) {
            Some(d) => d,
            None => {
                probe.tensors_mut()[t].as_mut_slice()[flat] = original + epsilon;
                let lp = instance_loss(&probe, inventory, instance, objective)?;
                probe.tensors_mut()[t].as_mut_slice()[flat] = original - epsilon;
                lp - instance_loss(&probe, inventory, instance, objective)?
            }
        };
        probe.tensors_mut()[t].as_mut_slice()[flat] = original;

        let numeric = delta / (2.0 * epsilon);
        let analytic = grad_tensors[t].1.as_slice()[flat];
        let scale = analytic.abs().max(numeric.abs());
        let error = if scale < ZERO_GRADIENT {
            (analytic - numeric).abs()
        } else {
            (analytic - numeric).abs() / scale
        };
        samples.push(GradCheckSample {
            tensor: names[t].clone(),
            index: flat,
            analytic,
            numeric,
            error,
        });
    }
    let max_rel_error = samples.iter().map(|s| s.error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, samples })
}
