//! Candidate scoring heads.
//!
//! * character sequence: splice each candidate's padded tokens into the
//!   blank, encode, and score the CLS row with a linear layer;
//! * idiom embedding: `logit_k = w · (d_k ⊙ h_b) + b`;
//! * context-aware pooling: `logit_k = d_k · h_b + max_i d_k · h_i` over
//!   valid positions;
//! * dual: `λ · p_char + (1 − λ) · p_embed`.
//!
//! Every head returns a softmax over the instance's candidate set. The
//! `*_logits` / `*_backward` pairs expose the pre-softmax scores and their
//! gradients for training.

mod lambda;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CandidateInventory, ClozeInstance};
use crate::encoder::{Encoder, EncoderError, HiddenStates};
use crate::tensor::{dot, softmax, Matrix};
use crate::tokenizer::{TokenId, PAD};

pub use lambda::{sample_lambda, LambdaPolicy};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("index {index} out of range ({len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no valid positions to pool over")]
    NoValidPositions,
    #[error("candidate sets differ between distributions")]
    CandidateSetMismatch,
    #[error("interpolation weight {0} outside [0, 1]")]
    InvalidLambda(f64),
    #[error("invalid lambda policy: {0}")]
    InvalidPolicy(String),
    #[error("empty candidate set")]
    EmptyCandidates,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Which scoring path produces the answer distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    Char,
    Embed,
    Pooling,
    Dual,
}

impl HeadMode {
    pub const ALL: [HeadMode; 4] = [HeadMode::Char, HeadMode::Embed, HeadMode::Pooling, HeadMode::Dual];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadMode::Char => "char",
            HeadMode::Embed => "embed",
            HeadMode::Pooling => "pooling",
            HeadMode::Dual => "dual",
        }
    }

    /// Human-readable row label for result tables.
    pub fn label(self) -> &'static str {
        match self {
            HeadMode::Char => "Character-sequence baseline",
            HeadMode::Embed => "Idiom-embedding baseline",
            HeadMode::Pooling => "Context-aware pooling",
            HeadMode::Dual => "Dual interpolation",
        }
    }
}

impl std::str::FromStr for HeadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(HeadMode::Char),
            "embed" => Ok(HeadMode::Embed),
            "pooling" => Ok(HeadMode::Pooling),
            "dual" => Ok(HeadMode::Dual),
            other => Err(format!("unknown head {other:?} (char|embed|pooling|dual)")),
        }
    }
}

impl std::fmt::Display for HeadMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One vector per idiom, `T × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdiomEmbeddingTable(pub Matrix);

impl IdiomEmbeddingTable {
    /// Row k is the mean of the input embeddings of candidate k's tokens.
    pub fn from_token_means(inventory: &CandidateInventory, token_embedding: &Matrix) -> Self {
        let d = token_embedding.cols();
        let mut table = Matrix::zeros(inventory.len(), d);
        for c in inventory.candidates() {
            let real: Vec<TokenId> = c.padded_ids.iter().copied().filter(|&id| id != PAD).collect();
            let row = table.row_mut(c.id);
            for &id in &real {
                for (o, v) in row.iter_mut().zip(token_embedding.row(id as usize)) {
                    *o += v;
                }
            }
            let n = real.len().max(1) as f64;
            row.iter_mut().for_each(|v| *v /= n);
        }
        Self(table)
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.0.row(k)
    }
}

/// `w ∈ R^d`, `b ∈ R` of the idiom-embedding head.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchHeadParams {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Linear map from the CLS row to a scalar score.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsHeadParams {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl MatchHeadParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            weight: Matrix::zeros(1, d),
            bias: Matrix::zeros(1, 1),
        }
    }

    pub fn b(&self) -> f64 {
        self.bias.get(0, 0)
    }
}

impl ClsHeadParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            weight: Matrix::zeros(1, d),
            bias: Matrix::zeros(1, 1),
        }
    }

    pub fn score(&self, cls_row: &[f64]) -> f64 {
        dot(self.weight.as_slice(), cls_row) + self.bias.get(0, 0)
    }
}

/// Probabilities over an instance's candidate set, in that set's order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateDistribution {
    pub candidates: Vec<usize>,
    pub probs: Vec<f64>,
}

impl CandidateDistribution {
    pub fn from_logits(candidates: Vec<usize>, logits: &[f64]) -> Self {
        Self {
            candidates,
            probs: softmax(logits),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability assigned to inventory index `candidate`, if present.
    pub fn prob_of(&self, candidate: usize) -> Option<f64> {
        self.candidates
            .iter()
            .position(|&c| c == candidate)
            .map(|i| self.probs[i])
    }

    /// Entries in [0, 1] summing to 1 within `tol`.
    pub fn is_normalized(&self, tol: f64) -> bool {
        self.probs.iter().all(|p| (0.0..=1.0).contains(p))
            && (self.probs.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

fn check_candidates(d: &[usize], t: usize) -> Result<(), HeadError> {
    if d.is_empty() {
        return Err(HeadError::EmptyCandidates);
    }
    match d.iter().find(|&&k| k >= t) {
        Some(&k) => Err(HeadError::IndexOutOfRange { index: k, len: t }),
        None => Ok(()),
    }
}

fn check_row(h: &HiddenStates, pos: usize) -> Result<(), HeadError> {
    if pos >= h.len() {
        return Err(HeadError::IndexOutOfRange { index: pos, len: h.len() });
    }
    Ok(())
}

/// `w · (d_k ⊙ h_b) + b` for every `k` in `candidates`.
pub fn embedding_logits(
    h: &HiddenStates,
    mask_pos: usize,
    embeddings: &IdiomEmbeddingTable,
    head: &MatchHeadParams,
    candidates: &[usize],
) -> Result<Vec<f64>, HeadError> {
    check_row(h, mask_pos)?;
    check_candidates(candidates, embeddings.len())?;
    let hb = h.row(mask_pos);
    let w = head.weight.as_slice();
    Ok(candidates
        .iter()
        .map(|&k| {
            let dk = embeddings.row(k);
            w.iter()
                .zip(dk)
                .zip(hb)
                .map(|((wi, di), hi)| wi * di * hi)
                .sum::<f64>()
                + head.b()
        })
        .collect())
}

pub fn score_embedding(
    h: &HiddenStates,
    mask_pos: usize,
    embeddings: &IdiomEmbeddingTable,
    head: &MatchHeadParams,
    candidates: &[usize],
) -> Result<CandidateDistribution, HeadError> {
    let logits = embedding_logits(h, mask_pos, embeddings, head, candidates)?;
    Ok(CandidateDistribution::from_logits(candidates.to_vec(), &logits))
}

/// Backward of [`embedding_logits`]. Accumulates into the embedding and
/// head gradients and returns the gradient with respect to `h_b`.
pub fn embedding_logits_backward(
    h: &HiddenStates,
    mask_pos: usize,
    embeddings: &IdiomEmbeddingTable,
    head: &MatchHeadParams,
    candidates: &[usize],
    d_logits: &[f64],
    grad_embeddings: &mut Matrix,
    grad_head: &mut MatchHeadParams,
) -> Vec<f64> {
    let hb = h.row(mask_pos);
    let w = head.weight.as_slice();
    let mut d_hb = vec![0.0; hb.len()];
    for (&k, &g) in candidates.iter().zip(d_logits) {
        let dk = embeddings.row(k);
        {
            let gw = grad_head.weight.as_mut_slice();
            for j in 0..hb.len() {
                gw[j] += g * dk[j] * hb[j];
            }
        }
        let gd = grad_embeddings.row_mut(k);
        for j in 0..hb.len() {
            gd[j] += g * w[j] * hb[j];
            d_hb[j] += g * w[j] * dk[j];
        }
        grad_head.bias.as_mut_slice()[0] += g;
    }
    d_hb
}

/// Logits of the pooling head plus, per candidate, the position that won
/// the max.
pub fn pooling_logits(
    h: &HiddenStates,
    mask_pos: usize,
    embeddings: &IdiomEmbeddingTable,
    candidates: &[usize],
    valid_mask: &[bool],
) -> Result<(Vec<f64>, Vec<usize>), HeadError> {
    check_row(h, mask_pos)?;
    check_candidates(candidates, embeddings.len())?;
    if valid_mask.len() != h.len() {
        return Err(HeadError::IndexOutOfRange {
            index: valid_mask.len(),
            len: h.len(),
        });
    }
    if !valid_mask.iter().any(|&m| m) || !valid_mask[mask_pos] {
        return Err(HeadError::NoValidPositions);
    }
    let hb = h.row(mask_pos);
    let mut logits = Vec::with_capacity(candidates.len());
    let mut winners = Vec::with_capacity(candidates.len());
    for &k in candidates {
        let dk = embeddings.row(k);
        let (best_pos, best) = valid_mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i, dot(dk, h.row(i))))
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
        logits.push(dot(dk, hb) + best);
        winners.push(best_pos);
    }
    Ok((logits, winners))
}

pub fn score_context_pooling(
    h: &HiddenStates,
    mask_pos: usize,
    embeddings: &IdiomEmbeddingTable,
    candidates: &[usize],
    valid_mask: &[bool],
) -> Result<CandidateDistribution, HeadError> {
    let (logits, _) = pooling_logits(h, mask_pos, embeddings, candidates, valid_mask)?;
    Ok(CandidateDistribution::from_logits(candidates.to_vec(), &logits))
}

/// Backward of [`pooling_logits`]; adds the hidden-state gradient into
/// `d_hidden`.
pub fn pooling_logits_backward(
    h: &HiddenStates,
    mask_pos: usize,
    embeddings: &IdiomEmbeddingTable,
    candidates: &[usize],
    winners: &[usize],
    d_logits: &[f64],
    grad_embeddings: &mut Matrix,
    d_hidden: &mut Matrix,
) {
    let hb = h.row(mask_pos).to_vec();
    for ((&k, &win), &g) in candidates.iter().zip(winners).zip(d_logits) {
        let dk = embeddings.row(k);
        let hw = h.row(win);
        let gd = grad_embeddings.row_mut(k);
        for j in 0..hb.len() {
            gd[j] += g * (hb[j] + hw[j]);
        }
        for (o, v) in d_hidden.row_mut(mask_pos).iter_mut().zip(dk) {
            *o += g * v;
        }
        for (o, v) in d_hidden.row_mut(win).iter_mut().zip(dk) {
            *o += g * v;
        }
    }
}

/// The passage with `candidate`'s padded tokens in place of the MASK, and
/// the validity mask that hides the padding.
pub fn splice_candidate(instance: &ClozeInstance, padded_ids: &[TokenId]) -> (Vec<TokenId>, Vec<bool>) {
    let p = &instance.passage_ids;
    let mut ids = Vec::with_capacity(p.len() - 1 + padded_ids.len());
    ids.extend_from_slice(&p[..instance.mask_pos]);
    ids.extend_from_slice(padded_ids);
    ids.extend_from_slice(&p[instance.mask_pos + 1..]);
    let valid = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let in_candidate = i >= instance.mask_pos && i < instance.mask_pos + padded_ids.len();
            !(in_candidate && id == PAD)
        })
        .collect();
    (ids, valid)
}

/// Linear score of the CLS row for each candidate-spliced sequence.
pub fn char_sequence_logits(
    instance: &ClozeInstance,
    inventory: &CandidateInventory,
    encoder: &Encoder,
    head: &ClsHeadParams,
) -> Result<Vec<f64>, HeadError> {
    check_candidates(&instance.candidate_ids, inventory.len())?;
    instance
        .candidate_ids
        .iter()
        .map(|&k| {
            let (ids, valid) = splice_candidate(instance, &inventory.candidates()[k].padded_ids);
            let h = encoder.forward(&ids, &valid)?;
            Ok(head.score(h.row(0)))
        })
        .collect()
}

pub fn score_char_sequence(
    instance: &ClozeInstance,
    inventory: &CandidateInventory,
    encoder: &Encoder,
    head: &ClsHeadParams,
) -> Result<CandidateDistribution, HeadError> {
    let logits = char_sequence_logits(instance, inventory, encoder, head)?;
    Ok(CandidateDistribution::from_logits(instance.candidate_ids.clone(), &logits))
}

/// `λ · p_char + (1 − λ) · p_embed`.
pub fn interpolate(
    p_char: &CandidateDistribution,
    p_embed: &CandidateDistribution,
    lambda: f64,
) -> Result<CandidateDistribution, HeadError> {
    if p_char.candidates != p_embed.candidates || p_char.probs.len() != p_embed.probs.len() {
        return Err(HeadError::CandidateSetMismatch);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(HeadError::InvalidLambda(lambda));
    }
    let probs = p_char
        .probs
        .iter()
        .zip(&p_embed.probs)
        .map(|(c, e)| lambda * c + (1.0 - lambda) * e)
        .collect();
    Ok(CandidateDistribution {
        candidates: p_char.candidates.clone(),
        probs,
    })
}

/// Position of the largest probability within the distribution; ties go
/// to the earliest position.
pub fn argmax_position(dist: &CandidateDistribution) -> usize {
    let mut best = 0;
    for (i, &p) in dist.probs.iter().enumerate() {
        if p > dist.probs[best] {
            best = i;
        }
    }
    best
}

/// Inventory index of the most probable candidate.
pub fn predict(dist: &CandidateDistribution) -> usize {
    dist.candidates[argmax_position(dist)]
}
