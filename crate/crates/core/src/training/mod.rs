//! Cross-entropy training, gradient verification and evaluation.

mod gradcheck;
mod optim;
mod report;

use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::checkpoint::TrainState;
use crate::corpus::{CandidateInventory, ClozeInstance, DatasetSplits};
use crate::encoder::{EncoderError, HiddenStates};
use crate::heads::{
    self, argmax_position, sample_lambda, CandidateDistribution, HeadError, HeadMode, LambdaPolicy,
};
use crate::model::ClozeModel;
use crate::tensor::{softmax, softmax_backward, Matrix};

pub use gradcheck::{finite_diff_check, GradCheckReport, GradCheckSample, ParamScope, ZERO_GRADIENT};
pub use optim::{clip_global_norm, OptimizerKind, OptimizerState};
pub use report::{read_metrics_csv, write_metrics_csv, write_predictions_csv};

/// Probabilities are floored at this value before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Instances per gradient work unit. Fixed so the reduction order, and
/// therefore every bit of the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("index {index} out of range ({len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("training loss became non-finite in epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub head: HeadMode,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub optimizer: OptimizerKind,
    /// Train against the gold plus `k - 1` sampled distractors instead of the
    /// full inventory.
    pub train_candidates: Option<usize>,
    /// Only update the heads and idiom embeddings.
    pub freeze_encoder: bool,
    pub lambda: LambdaPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            head: HeadMode::Dual,
            clip_norm: Some(1.0),
            optimizer: OptimizerKind::Adam,
            train_candidates: None,
            freeze_encoder: false,
            lambda: LambdaPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad("clip_norm must be positive");
            }
        }
        if self.train_candidates == Some(0) {
            return bad("train_candidates must be at least 1");
        }
        self.lambda.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub seconds: f64,
    /// Mean interpolation weight over the epoch's batches (dual mode only).
    pub lambda: Option<f64>,
}

/// What a single loss evaluation optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub mode: HeadMode,
    /// Weight of the character-sequence head in dual mode.
    pub lambda: f64,
}

impl Objective {
    pub fn single(mode: HeadMode) -> Self {
        Self { mode, lambda: 1.0 }
    }
}

/// `-ln(max(p_gold, 1e-12))`, where `gold` is a position in `dist`.
pub fn cross_entropy(dist: &CandidateDistribution, gold: usize) -> Result<f64, TrainError> {
    let p = *dist.probs.get(gold).ok_or(TrainError::IndexOutOfRange {
        index: gold,
        len: dist.probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

struct CharRun {
    hidden: HiddenStates,
    cache: crate::encoder::ForwardCache,
}

/// Loss of one instance and, when `grads` is given, its gradient added into
/// `grads`. With `train_encoder == false` no gradient flows into the
/// encoder.
pub fn loss_and_grad(
    model: &ClozeModel,
    inventory: &CandidateInventory,
    instance: &ClozeInstance,
    objective: Objective,
    grads: Option<&mut ClozeModel>,
    train_encoder: bool,
) -> Result<f64, TrainError> {
    let mode = objective.mode;
    let lambda = objective.lambda;
    let cands = &instance.candidate_ids;
    let gold = instance.gold_position().ok_or(TrainError::IndexOutOfRange {
        index: instance.gold,
        len: cands.len(),
    })?;
    if let Some(&k) = cands.iter().find(|&&k| k >= inventory.len()) {
        return Err(TrainError::IndexOutOfRange { index: k, len: inventory.len() });
    }
    let need_char = matches!(mode, HeadMode::Char | HeadMode::Dual);
    let need_passage = !matches!(mode, HeadMode::Char);

    let mut char_runs = Vec::new();
    let mut char_logits = Vec::new();
    if need_char {
        for &k in cands {
            let (ids, valid) = heads::splice_candidate(instance, &inventory.candidates()[k].padded_ids);
            let (hidden, cache) = model.encoder.forward_cached(&ids, &valid)?;
            char_logits.push(model.cls.score(hidden.row(0)));
            char_runs.push(CharRun { hidden, cache });
        }
    }
    let p_char = if need_char { softmax(&char_logits) } else { Vec::new() };

    let mut passage = None;
    let mut winners = Vec::new();
    let mut p_ctx = Vec::new();
    if need_passage {
        let valid = vec![true; instance.passage_ids.len()];
        let (h, cache) = model.encoder.forward_cached(&instance.passage_ids, &valid)?;
        let logits = if mode == HeadMode::Pooling {
            let (l, w) = heads::pooling_logits(&h, instance.mask_pos, &model.idioms, cands, &valid)?;
            winners = w;
            l
        } else {
            heads::embedding_logits(&h, instance.mask_pos, &model.idioms, &model.matcher, cands)?
        };
        p_ctx = softmax(&logits);
        passage = Some((h, cache));
    }

    let (w_char, w_ctx) = match mode {
        HeadMode::Char => (1.0, 0.0),
        HeadMode::Embed | HeadMode::Pooling => (0.0, 1.0),
        HeadMode::Dual => (lambda, 1.0 - lambda),
    };
    let q_gold = w_char * p_char.get(gold).copied().unwrap_or(0.0)
        + w_ctx * p_ctx.get(gold).copied().unwrap_or(0.0);
    let loss = -q_gold.max(PROB_FLOOR).ln();

    let Some(grads) = grads else {
        return Ok(loss);
    };
    let dq = if q_gold > PROB_FLOOR { -1.0 / q_gold } else { 0.0 };
    let d = model.config().d_model;

    if need_char {
        let mut dp = vec![0.0; cands.len()];
        dp[gold] = w_char * dq;
        let d_logits = softmax_backward(&p_char, &dp);
        for (run, &g) in char_runs.iter().zip(&d_logits) {
            let cls_row = run.hidden.row(0);
            for (o, v) in grads.cls.weight.as_mut_slice().iter_mut().zip(cls_row) {
                *o += g * v;
            }
            grads.cls.bias.as_mut_slice()[0] += g;
            if train_encoder {
                let mut d_hidden = Matrix::zeros(run.hidden.len(), d);
                for (o, w) in d_hidden.row_mut(0).iter_mut().zip(model.cls.weight.as_slice()) {
                    *o = g * w;
                }
                model.encoder.backward(&run.cache, &d_hidden, &mut grads.encoder.params);
            }
        }
    }

    if let Some((h, cache)) = &passage {
        let mut dp = vec![0.0; cands.len()];
        dp[gold] = w_ctx * dq;
        let d_logits = softmax_backward(&p_ctx, &dp);
        let mut d_hidden = Matrix::zeros(h.len(), d);
        if mode == HeadMode::Pooling {
            heads::pooling_logits_backward(
                h,
                instance.mask_pos,
                &model.idioms,
                cands,
                &winners,
                &d_logits,
                &mut grads.idioms.0,
                &mut d_hidden,
            );
        } else {
            let d_hb = heads::embedding_logits_backward(
                h,
                instance.mask_pos,
                &model.idioms,
                &model.matcher,
                cands,
                &d_logits,
                &mut grads.idioms.0,
                &mut grads.matcher,
            );
            d_hidden.row_mut(instance.mask_pos).copy_from_slice(&d_hb);
        }
        if train_encoder {
            model.encoder.backward(cache, &d_hidden, &mut grads.encoder.params);
        }
    }
    Ok(loss)
}

/// Logits behind an objective's loss: character-sequence logits (empty
/// unless the mode uses them) and context-head logits (empty in char mode).
pub fn objective_logits(
    model: &ClozeModel,
    inventory: &CandidateInventory,
    instance: &ClozeInstance,
    mode: HeadMode,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let cands = &instance.candidate_ids;
    let char_logits = match mode {
        HeadMode::Char | HeadMode::Dual => {
            heads::char_sequence_logits(instance, inventory, &model.encoder, &model.cls)?
        }
        _ => Vec::new(),
    };
    let ctx_logits = match mode {
        HeadMode::Char => Vec::new(),
        HeadMode::Pooling => {
            let h = model.encode_passage(instance)?;
            let valid = vec![true; h.len()];
            heads::pooling_logits(&h, instance.mask_pos, &model.idioms, cands, &valid)?.0
        }
        HeadMode::Embed | HeadMode::Dual => {
            let h = model.encode_passage(instance)?;
            heads::embedding_logits(&h, instance.mask_pos, &model.idioms, &model.matcher, cands)?
        }
    };
    Ok((char_logits, ctx_logits))
}

/// Loss only; same forward path as [`loss_and_grad`].
pub fn instance_loss(
    model: &ClozeModel,
    inventory: &CandidateInventory,
    instance: &ClozeInstance,
    objective: Objective,
) -> Result<f64, TrainError> {
    loss_and_grad(model, inventory, instance, objective, None, false)
}

/// Mean loss and mean gradient over `instances`.
pub fn batch_gradient(
    model: &ClozeModel,
    inventory: &CandidateInventory,
    instances: &[ClozeInstance],
    objective: Objective,
    train_encoder: bool,
) -> Result<(f64, ClozeModel), TrainError> {
    let parts: Vec<Result<(f64, ClozeModel), TrainError>> = instances
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = model.zeros_like();
            let mut loss = 0.0;
            for inst in chunk {
                loss += loss_and_grad(model, inventory, inst, objective, Some(&mut g), train_encoder)?;
            }
            Ok((loss, g))
        })
        .collect();
    let mut total_loss = 0.0;
    let mut total: Option<ClozeModel> = None;
    for part in parts {
        let (loss, g) = part?;
        total_loss += loss;
        match &mut total {
            None => total = Some(g),
            Some(acc) => {
                for (a, b) in acc.tensors_mut().into_iter().zip(g.tensors()) {
                    a.add_scaled(b.1, 1.0);
                }
            }
        }
    }
    let mut total = total.unwrap_or_else(|| model.zeros_like());
    let n = instances.len().max(1) as f64;
    for t in total.tensors_mut() {
        t.scale(1.0 / n);
    }
    Ok((total_loss / n, total))
}

/// Longest sequence any head will feed the encoder for these instances.
pub fn longest_sequence(instances: &[ClozeInstance], inventory: &CandidateInventory) -> usize {
    instances
        .iter()
        .map(|i| i.passage_ids.len() - 1 + inventory.pad_len().max(1))
        .max()
        .unwrap_or(0)
}

fn check_lengths(
    model: &ClozeModel,
    inventory: &CandidateInventory,
    instances: &[ClozeInstance],
) -> Result<(), TrainError> {
    let longest = longest_sequence(instances, inventory);
    let max_len = model.config().max_len;
    if longest > max_len {
        return Err(TrainError::SequenceTooLong { len: longest, max_len });
    }
    Ok(())
}

fn with_sampled_candidates(
    instance: &ClozeInstance,
    k: usize,
    t: usize,
    rng: &mut ChaCha8Rng,
) -> ClozeInstance {
    let mut out = instance.clone();
    if k >= t {
        return out;
    }
    let mut ids: Vec<usize> = index::sample(rng, t - 1, k - 1)
        .into_iter()
        .map(|i| if i >= instance.gold { i + 1 } else { i })
        .collect();
    ids.push(instance.gold);
    ids.sort_unstable();
    out.candidate_ids = ids;
    out
}

/// Result of [`train`]; the model is updated in place.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub state: TrainState,
}

/// Train `model` on `splits.train` for epochs `resume.epochs_completed + 1
/// ..= config.epochs`.
///
/// Every epoch draws its shuffle order, candidate subsets and λ values from
/// a generator keyed on `(seed, epoch)`, so a resumed run reproduces an
/// uninterrupted one exactly. On a non-finite loss or parameter the model is
/// rolled back to the start of the failing epoch and
/// [`TrainError::DivergenceDetected`] is returned.
///
/// `on_epoch` sees each epoch's metrics together with the model and state
/// at the end of that epoch; an error from it stops training.
pub fn train<E, F>(
    model: &mut ClozeModel,
    inventory: &CandidateInventory,
    splits: &DatasetSplits,
    config: &TrainConfig,
    resume: Option<TrainState>,
    mut on_epoch: F,
) -> Result<TrainOutcome, E>
where
    E: From<TrainError>,
    F: FnMut(&EpochMetrics, &ClozeModel, &TrainState) -> Result<(), E>,
{
    config.validate()?;
    if splits.train.is_empty() {
        return Err(TrainError::EmptyTrainSet.into());
    }
    check_lengths(model, inventory, &splits.train)?;
    check_lengths(model, inventory, &splits.validation)?;

    let mut state = match resume {
        Some(s) if s.optimizer.kind() == config.optimizer => s,
        Some(s) => TrainState {
            epochs_completed: s.epochs_completed,
            optimizer: OptimizerState::new(config.optimizer, model),
        },
        None => TrainState {
            epochs_completed: 0,
            optimizer: OptimizerState::new(config.optimizer, model),
        },
    };
    let eval_lambda = config.lambda.truncated_mean();
    let train_encoder = !config.freeze_encoder;
    let mut metrics = Vec::new();

    for epoch in state.epochs_completed + 1..=config.epochs {
        let started = Instant::now();
        let snapshot = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);

        let mut order: Vec<usize> = (0..splits.train.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);

        let mut loss_sum = 0.0;
        let mut lambdas = Vec::new();
        for batch_idx in order.chunks(config.batch_size) {
            let lambda = if config.head == HeadMode::Dual {
                let l = sample_lambda(&config.lambda, &mut rng).map_err(TrainError::from)?;
                lambdas.push(l);
                l
            } else {
                1.0
            };
            let batch: Vec<ClozeInstance> = batch_idx
                .iter()
                .map(|&i| match config.train_candidates {
                    Some(k) => with_sampled_candidates(&splits.train[i], k, inventory.len(), &mut rng),
                    None => splits.train[i].clone(),
                })
                .collect();
            let objective = Objective { mode: config.head, lambda };
            let (loss, mut grads) = batch_gradient(model, inventory, &batch, objective, train_encoder)?;
            if !loss.is_finite() {
                *model = snapshot;
                return Err(TrainError::DivergenceDetected { epoch }.into());
            }
            loss_sum += loss * batch.len() as f64;
            if let Some(c) = config.clip_norm {
                clip_global_norm(&mut grads, c);
            }
            state.optimizer.step(model, &grads, config.learning_rate);
            if !model.is_finite() {
                *model = snapshot;
                return Err(TrainError::DivergenceDetected { epoch }.into());
            }
        }
        state.epochs_completed = epoch;

        let val_accuracy = if splits.validation.is_empty() {
            None
        } else {
            Some(evaluate(model, inventory, &splits.validation, config.head, eval_lambda)?.accuracy)
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / splits.train.len() as f64,
            val_accuracy,
            seconds: started.elapsed().as_secs_f64(),
            lambda: (!lambdas.is_empty()).then(|| lambdas.iter().sum::<f64>() / lambdas.len() as f64),
        };
        on_epoch(&m, model, &state)?;
        metrics.push(m);
    }
    Ok(TrainOutcome { metrics, state })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: usize,
    pub gold: usize,
    pub predicted: usize,
    pub prob_gold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub head: HeadMode,
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

/// Accuracy of one head. `lambda` is the dual-mode weight (normally the
/// truncated-Beta mean).
pub fn evaluate(
    model: &ClozeModel,
    inventory: &CandidateInventory,
    instances: &[ClozeInstance],
    head: HeadMode,
    lambda: f64,
) -> Result<Evaluation, TrainError> {
    let mut all = evaluate_heads(model, inventory, instances, &[head], lambda)?;
    Ok(all.remove(0))
}

/// Evaluate several heads at once, sharing encoder passes between them.
pub fn evaluate_heads(
    model: &ClozeModel,
    inventory: &CandidateInventory,
    instances: &[ClozeInstance],
    modes: &[HeadMode],
    lambda: f64,
) -> Result<Vec<Evaluation>, TrainError> {
    if instances.is_empty() {
        return Err(TrainError::EmptyEvalSet);
    }
    check_lengths(model, inventory, instances)?;
    let want = |m: HeadMode| modes.contains(&m);
    let need_char = want(HeadMode::Char) || want(HeadMode::Dual);
    let need_embed = want(HeadMode::Embed) || want(HeadMode::Dual);
    let need_pool = want(HeadMode::Pooling);

    let per_instance: Vec<Result<Vec<CandidateDistribution>, TrainError>> = instances
        .par_iter()
        .map(|inst| {
            let p_char = need_char
                .then(|| heads::score_char_sequence(inst, inventory, &model.encoder, &model.cls))
                .transpose()?;
            let (p_embed, p_pool) = if need_embed || need_pool {
                let h = model.encode_passage(inst)?;
                let valid = vec![true; h.len()];
                let e = need_embed
                    .then(|| {
                        heads::score_embedding(&h, inst.mask_pos, &model.idioms, &model.matcher, &inst.candidate_ids)
                    })
                    .transpose()?;
                let p = need_pool
                    .then(|| heads::score_context_pooling(&h, inst.mask_pos, &model.idioms, &inst.candidate_ids, &valid))
                    .transpose()?;
                (e, p)
            } else {
                (None, None)
            };
            modes
                .iter()
                .map(|m| {
                    Ok(match m {
                        HeadMode::Char => p_char.clone().unwrap(),
                        HeadMode::Embed => p_embed.clone().unwrap(),
                        HeadMode::Pooling => p_pool.clone().unwrap(),
                        HeadMode::Dual => heads::interpolate(
                            p_char.as_ref().unwrap(),
                            p_embed.as_ref().unwrap(),
                            lambda,
                        )?,
                    })
                })
                .collect()
        })
        .collect();
    let per_instance = per_instance.into_iter().collect::<Result<Vec<_>, _>>()?;

    Ok(modes
        .iter()
        .enumerate()
        .map(|(h, &mode)| {
            let predictions: Vec<Prediction> = per_instance
                .iter()
                .zip(instances)
                .enumerate()
                .map(|(id, (dists, inst))| {
                    let dist = &dists[h];
                    Prediction {
                        instance_id: id,
                        gold: inst.gold,
                        predicted: dist.candidates[argmax_position(dist)],
                        prob_gold: dist.prob_of(inst.gold).unwrap_or(0.0),
                    }
                })
                .collect();
            let correct = predictions.iter().filter(|p| p.predicted == p.gold).count();
            Evaluation {
                head: mode,
                accuracy: correct as f64 / predictions.len() as f64,
                predictions,
            }
        })
        .collect())
}
