//! A small bidirectional pre-norm transformer encoder with hand-written
//! backpropagation.
//!
//! ```text
//! x = token_embedding[ids] + position_embedding[0..n]
//! for each layer:
//!     x = x + MultiHeadAttention(LayerNorm(x), valid_mask) · W_o
//!     x = x + GELU(LayerNorm(x) · W_in + b_in) · W_out + b_out
//! H = LayerNorm(x)
//! ```
//!
//! Positions flagged invalid never act as attention keys, so their rows
//! cannot influence rows at valid positions.

mod attention;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{gemm, matmul, Matrix, Op};
use crate::tokenizer::TokenId;

pub use attention::{attention, attention_with_weights};

const LN_EPS: f64 = 1e-5;
/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    IdOutOfRange { id: TokenId, vocab_size: usize },
    #[error("no valid positions to attend to")]
    NoValidPositions,
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    /// Two layers, four heads, width 64, feed-forward 128, up to 128 positions.
    pub fn desk_scale(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_len: 128,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 {
            return bad("vocab_size, d_model and n_heads must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 || self.max_len == 0 {
            return bad("d_ff and max_len must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Matrix,
    pub shift: Matrix,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        Self {
            gain: Matrix::filled(1, d, 1.0),
            shift: Matrix::zeros(1, d),
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            gain: Matrix::zeros(1, d),
            shift: Matrix::zeros(1, d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attn_norm: LayerNorm,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub output: Matrix,
    pub ff_norm: LayerNorm,
    pub ff_in: Matrix,
    pub ff_in_bias: Matrix,
    pub ff_out: Matrix,
    pub ff_out_bias: Matrix,
}

impl EncoderLayer {
    fn init<R: Rng + ?Sized>(c: &EncoderConfig, rng: &mut R) -> Self {
        let (d, f) = (c.d_model, c.d_ff);
        let mut u = |r, k| Matrix::uniform(r, k, INIT_SCALE, rng);
        Self {
            attn_norm: LayerNorm::new(d),
            query: u(d, d),
            key: u(d, d),
            value: u(d, d),
            output: u(d, d),
            ff_norm: LayerNorm::new(d),
            ff_in: u(d, f),
            ff_in_bias: u(1, f),
            ff_out: u(f, d),
            ff_out_bias: u(1, d),
        }
    }

    fn zeros(c: &EncoderConfig) -> Self {
        let (d, f) = (c.d_model, c.d_ff);
        Self {
            attn_norm: LayerNorm::zeros(d),
            query: Matrix::zeros(d, d),
            key: Matrix::zeros(d, d),
            value: Matrix::zeros(d, d),
            output: Matrix::zeros(d, d),
            ff_norm: LayerNorm::zeros(d),
            ff_in: Matrix::zeros(d, f),
            ff_in_bias: Matrix::zeros(1, f),
            ff_out: Matrix::zeros(f, d),
            ff_out_bias: Matrix::zeros(1, d),
        }
    }
}

/// All encoder weights. [`EncoderParams::tensors`] fixes the serialization
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_embedding: Matrix,
    pub position_embedding: Matrix,
    pub layers: Vec<EncoderLayer>,
    pub final_norm: LayerNorm,
}

impl EncoderParams {
    /// Weights, embeddings and biases uniform in ±[`INIT_SCALE`]; layer-norm
    /// gains 1 and shifts 0.
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Self {
        let d = config.d_model;
        let token_embedding = Matrix::uniform(config.vocab_size, d, INIT_SCALE, rng);
        let position_embedding = Matrix::uniform(config.max_len, d, INIT_SCALE, rng);
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer::init(config, rng))
            .collect();
        Self {
            token_embedding,
            position_embedding,
            layers,
            final_norm: LayerNorm::new(d),
        }
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros(config: &EncoderConfig) -> Self {
        let d = config.d_model;
        Self {
            token_embedding: Matrix::zeros(config.vocab_size, d),
            position_embedding: Matrix::zeros(config.max_len, d),
            layers: (0..config.n_layers).map(|_| EncoderLayer::zeros(config)).collect(),
            final_norm: LayerNorm::zeros(d),
        }
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![
            ("token_embedding".to_string(), &self.token_embedding),
            ("position_embedding".to_string(), &self.position_embedding),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |n: &str| format!("layer{i}.{n}");
            out.extend([
                (p("attn_norm.gain"), &l.attn_norm.gain),
                (p("attn_norm.shift"), &l.attn_norm.shift),
                (p("query"), &l.query),
                (p("key"), &l.key),
                (p("value"), &l.value),
                (p("output"), &l.output),
                (p("ff_norm.gain"), &l.ff_norm.gain),
                (p("ff_norm.shift"), &l.ff_norm.shift),
                (p("ff_in"), &l.ff_in),
                (p("ff_in_bias"), &l.ff_in_bias),
                (p("ff_out"), &l.ff_out),
                (p("ff_out_bias"), &l.ff_out_bias),
            ]);
        }
        out.push(("final_norm.gain".to_string(), &self.final_norm.gain));
        out.push(("final_norm.shift".to_string(), &self.final_norm.shift));
        out
    }

    /// Mutable tensors in the same order as [`EncoderParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.token_embedding, &mut self.position_embedding];
        for l in &mut self.layers {
            out.extend([
                &mut l.attn_norm.gain,
                &mut l.attn_norm.shift,
                &mut l.query,
                &mut l.key,
                &mut l.value,
                &mut l.output,
                &mut l.ff_norm.gain,
                &mut l.ff_norm.shift,
                &mut l.ff_in,
                &mut l.ff_in_bias,
                &mut l.ff_out,
                &mut l.ff_out_bias,
            ]);
        }
        out.push(&mut self.final_norm.gain);
        out.push(&mut self.final_norm.shift);
        out
    }
}

/// Last-layer hidden states, one row per input position; row 0 is CLS.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates(pub Matrix);

impl HiddenStates {
    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

struct NormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

struct LayerCache {
    attn_norm: NormCache,
    attn_in: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    weights: Vec<Matrix>,
    context: Matrix,
    ff_norm: NormCache,
    ff_in: Matrix,
    pre_act: Matrix,
    act: Matrix,
}

/// Activations kept from a forward pass for [`Encoder::backward`].
pub struct ForwardCache {
    ids: Vec<TokenId>,
    layers: Vec<LayerCache>,
    final_norm: NormCache,
}

fn layer_norm(x: &Matrix, ln: &LayerNorm) -> (Matrix, NormCache) {
    let (n, d) = x.shape();
    let mut normalized = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut inv_std = Vec::with_capacity(n);
    let (gain, shift) = (ln.gain.as_slice(), ln.shift.as_slice());
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        let nrow = normalized.row_mut(i);
        for (z, v) in nrow.iter_mut().zip(row) {
            *z = (v - mean) * is;
        }
        let orow = out.row_mut(i);
        for j in 0..d {
            orow[j] = normalized.get(i, j) * gain[j] + shift[j];
        }
    }
    (out, NormCache { normalized, inv_std })
}

fn layer_norm_backward(dy: &Matrix, cache: &NormCache, ln: &LayerNorm, grad: &mut LayerNorm) -> Matrix {
    let (n, d) = dy.shape();
    let gain = ln.gain.as_slice();
    let mut dx = Matrix::zeros(n, d);
    let mut dxhat = vec![0.0; d];
    for i in 0..n {
        let dyr = dy.row(i);
        let xh = cache.normalized.row(i);
        {
            let gg = grad.gain.as_mut_slice();
            for j in 0..d {
                gg[j] += dyr[j] * xh[j];
            }
        }
        {
            let gs = grad.shift.as_mut_slice();
            for j in 0..d {
                gs[j] += dyr[j];
            }
        }
        for j in 0..d {
            dxhat[j] = dyr[j] * gain[j];
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[i];
        for (j, o) in dx.row_mut(i).iter_mut().enumerate() {
            *o = is * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: EncoderParams,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self, EncoderError> {
        config.validate()?;
        Ok(Self {
            params: EncoderParams::init(&config, rng),
            config,
        })
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, ids: &[TokenId], valid_mask: &[bool]) -> Result<HiddenStates, EncoderError> {
        self.forward_cached(ids, valid_mask).map(|(h, _)| h)
    }

    fn check_input(&self, ids: &[TokenId], valid_mask: &[bool]) -> Result<(), EncoderError> {
        if ids.len() > self.config.max_len {
            return Err(EncoderError::SequenceTooLong {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        if ids.len() != valid_mask.len() {
            return Err(EncoderError::ShapeMismatch(format!(
                "{} ids but mask of length {}",
                ids.len(),
                valid_mask.len()
            )));
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(EncoderError::IdOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        if !valid_mask.iter().any(|&m| m) {
            return Err(EncoderError::NoValidPositions);
        }
        Ok(())
    }

    /// Forward pass that keeps what [`Encoder::backward`] needs.
    pub fn forward_cached(
        &self,
        ids: &[TokenId],
        valid_mask: &[bool],
    ) -> Result<(HiddenStates, ForwardCache), EncoderError> {
        self.check_input(ids, valid_mask)?;
        let c = &self.config;
        let p = &self.params;
        let (n, d, dh) = (ids.len(), c.d_model, c.head_dim());

        let mut x = Matrix::zeros(n, d);
        for (i, &id) in ids.iter().enumerate() {
            let tok = p.token_embedding.row(id as usize);
            let pos = p.position_embedding.row(i);
            for ((o, a), b) in x.row_mut(i).iter_mut().zip(tok).zip(pos) {
                *o = a + b;
            }
        }

        let mut caches = Vec::with_capacity(p.layers.len());
        for layer in &p.layers {
            let (attn_in, attn_norm) = layer_norm(&x, &layer.attn_norm);
            let q = matmul(&attn_in, Op::N, &layer.query, Op::N);
            let k = matmul(&attn_in, Op::N, &layer.key, Op::N);
            let v = matmul(&attn_in, Op::N, &layer.value, Op::N);
            let mut context = Matrix::zeros(n, d);
            let mut weights = Vec::with_capacity(c.n_heads);
            for h in 0..c.n_heads {
                let (qh, kh, vh) = (
                    q.column_block(h * dh, dh),
                    k.column_block(h * dh, dh),
                    v.column_block(h * dh, dh),
                );
                let (out, w) = attention_with_weights(&qh, &kh, &vh, valid_mask)?;
                context.set_column_block(h * dh, &out);
                weights.push(w);
            }
            gemm(1.0, &context, Op::N, &layer.output, Op::N, 1.0, &mut x);

            let (ff_in, ff_norm) = layer_norm(&x, &layer.ff_norm);
            let mut pre_act = matmul(&ff_in, Op::N, &layer.ff_in, Op::N);
            pre_act.add_row_vector(layer.ff_in_bias.as_slice());
            let mut act = pre_act.clone();
            act.as_mut_slice().iter_mut().for_each(|z| *z = gelu(*z));
            gemm(1.0, &act, Op::N, &layer.ff_out, Op::N, 1.0, &mut x);
            x.add_row_vector(layer.ff_out_bias.as_slice());

            caches.push(LayerCache {
                attn_norm,
                attn_in,
                q,
                k,
                v,
                weights,
                context,
                ff_norm,
                ff_in,
                pre_act,
                act,
            });
        }
        let (hidden, final_norm) = layer_norm(&x, &p.final_norm);
        Ok((
            HiddenStates(hidden),
            ForwardCache {
                ids: ids.to_vec(),
                layers: caches,
                final_norm,
            },
        ))
    }

    /// Accumulate parameter gradients into `grads` given `d_hidden`, the
    /// gradient of the loss with respect to every hidden-state row.
    pub fn backward(&self, cache: &ForwardCache, d_hidden: &Matrix, grads: &mut EncoderParams) {
        let c = &self.config;
        let p = &self.params;
        let (n, dh) = (cache.ids.len(), c.head_dim());
        assert_eq!(d_hidden.shape(), (n, c.d_model), "d_hidden shape");

        let mut dx = layer_norm_backward(d_hidden, &cache.final_norm, &p.final_norm, &mut grads.final_norm);

        for ((layer, lc), lg) in p
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            // feed-forward block; dx is also the residual gradient
            dx.add_column_sums_to(lg.ff_out_bias.as_mut_slice());
            gemm(1.0, &lc.act, Op::T, &dx, Op::N, 1.0, &mut lg.ff_out);
            let mut d_pre = matmul(&dx, Op::N, &layer.ff_out, Op::T);
            for (g, z) in d_pre.as_mut_slice().iter_mut().zip(lc.pre_act.as_slice()) {
                *g *= gelu_grad(*z);
            }
            d_pre.add_column_sums_to(lg.ff_in_bias.as_mut_slice());
            gemm(1.0, &lc.ff_in, Op::T, &d_pre, Op::N, 1.0, &mut lg.ff_in);
            let d_ff_in = matmul(&d_pre, Op::N, &layer.ff_in, Op::T);
            let d_norm = layer_norm_backward(&d_ff_in, &lc.ff_norm, &layer.ff_norm, &mut lg.ff_norm);
            dx.add_scaled(&d_norm, 1.0);

            // attention block
            gemm(1.0, &lc.context, Op::T, &dx, Op::N, 1.0, &mut lg.output);
            let d_context = matmul(&dx, Op::N, &layer.output, Op::T);
            let mut dq = Matrix::zeros(n, c.d_model);
            let mut dk = Matrix::zeros(n, c.d_model);
            let mut dv = Matrix::zeros(n, c.d_model);
            for h in 0..c.n_heads {
                let (gq, gk, gv) = attention::attention_backward(
                    &lc.q.column_block(h * dh, dh),
                    &lc.k.column_block(h * dh, dh),
                    &lc.v.column_block(h * dh, dh),
                    &lc.weights[h],
                    &d_context.column_block(h * dh, dh),
                );
                dq.set_column_block(h * dh, &gq);
                dk.set_column_block(h * dh, &gk);
                dv.set_column_block(h * dh, &gv);
            }
            gemm(1.0, &lc.attn_in, Op::T, &dq, Op::N, 1.0, &mut lg.query);
            gemm(1.0, &lc.attn_in, Op::T, &dk, Op::N, 1.0, &mut lg.key);
            gemm(1.0, &lc.attn_in, Op::T, &dv, Op::N, 1.0, &mut lg.value);
            let mut d_attn_in = matmul(&dq, Op::N, &layer.query, Op::T);
            gemm(1.0, &dk, Op::N, &layer.key, Op::T, 1.0, &mut d_attn_in);
            gemm(1.0, &dv, Op::N, &layer.value, Op::T, 1.0, &mut d_attn_in);
            let d_norm = layer_norm_backward(&d_attn_in, &lc.attn_norm, &layer.attn_norm, &mut lg.attn_norm);
            dx.add_scaled(&d_norm, 1.0);
        }

        for (i, &id) in cache.ids.iter().enumerate() {
            let g = dx.row(i);
            for (o, v) in grads.token_embedding.row_mut(id as usize).iter_mut().zip(g) {
                *o += v;
            }
            for (o, v) in grads.position_embedding.row_mut(i).iter_mut().zip(g) {
                *o += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(vocab: usize) -> Encoder {
        let config = EncoderConfig {
            vocab_size: vocab,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 12,
            max_len: 16,
        };
        let mut enc = Encoder::new(config, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        // larger weights so the checks are not dominated by near-zero signal
        for t in enc.params.tensors_mut() {
            t.scale(8.0);
        }
        enc
    }

    #[test]
    fn config_validation() {
        let mut c = EncoderConfig::desk_scale(10);
        c.validate().unwrap();
        c.n_heads = 5;
        assert!(matches!(c.validate(), Err(EncoderError::InvalidConfig(_))));
    }

    #[test]
    fn tensor_lists_agree() {
        let c = EncoderConfig::desk_scale(20);
        let mut p = EncoderParams::init(&c, &mut ChaCha8Rng::seed_from_u64(0));
        let shapes: Vec<_> = p.tensors().iter().map(|(_, m)| m.shape()).collect();
        let shapes_mut: Vec<_> = p.tensors_mut().iter().map(|m| m.shape()).collect();
        assert_eq!(shapes, shapes_mut);
        assert_eq!(shapes.len(), 2 + 12 * c.n_layers + 2);
        assert!(p.tensors().iter().all(|(_, m)| m.as_slice().iter().all(|v| v.abs() <= 1.0)));
    }

    #[test]
    fn output_shape() {
        let enc = tiny(10);
        let h = enc.forward(&[2, 5, 6, 3], &[true; 4]).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(h.width(), 8);
        assert!(h.matrix().is_finite());
    }

    #[test]
    fn input_errors() {
        let enc = tiny(10);
        assert!(matches!(
            enc.forward(&[2; 17], &[true; 17]),
            Err(EncoderError::SequenceTooLong { len: 17, max_len: 16 })
        ));
        assert!(matches!(
            enc.forward(&[2, 10], &[true; 2]),
            Err(EncoderError::IdOutOfRange { id: 10, .. })
        ));
        assert!(matches!(
            enc.forward(&[2, 3], &[true]),
            Err(EncoderError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn trailing_padding_leaves_real_rows_unchanged() {
        let enc = tiny(10);
        let ids = [2, 7, 4, 8, 3];
        let base = enc.forward(&ids, &[true; 5]).unwrap();
        let padded_ids = [2, 7, 4, 8, 3, 0, 0, 0];
        let mask = [true, true, true, true, true, false, false, false];
        let padded = enc.forward(&padded_ids, &mask).unwrap();
        for i in 0..5 {
            for (a, b) in base.row(i).iter().zip(padded.row(i)) {
                assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let enc = tiny(10);
        let a = enc.forward(&[2, 5, 9, 3], &[true; 4]).unwrap();
        let b = enc.forward(&[2, 5, 9, 3], &[true; 4]).unwrap();
        let bits = |h: &HiddenStates| h.matrix().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn positions_matter() {
        let enc = tiny(10);
        let a = enc.forward(&[2, 5, 9, 3], &[true; 4]).unwrap();
        let b = enc.forward(&[2, 9, 5, 3], &[true; 4]).unwrap();
        assert!(a.row(0).iter().zip(b.row(0)).any(|(x, y)| (x - y).abs() > 1e-6));
    }

    /// Central differences on a random linear functional of the outputs.
    #[test]
    fn backward_matches_finite_differences() {
        let enc = tiny(10);
        let ids = [2, 5, 9, 4, 0, 3];
        let mask = [true, true, true, true, false, true];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let probe = Matrix::uniform(ids.len(), 8, 1.0, &mut rng);
        let objective = |e: &Encoder| -> f64 {
            let h = e.forward(&ids, &mask).unwrap();
            crate::tensor::dot(h.matrix().as_slice(), probe.as_slice())
        };
        let (_, cache) = enc.forward_cached(&ids, &mask).unwrap();
        let mut grads = EncoderParams::zeros(&enc.config);
        enc.backward(&cache, &probe, &mut grads);

        let analytic: Vec<Matrix> = grads.tensors().into_iter().map(|(_, m)| m.clone()).collect();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        use rand::Rng;
        for (t, grad) in analytic.iter().enumerate() {
            for _ in 0..6 {
                let j = rng.random_range(0..grad.len());
                let mut plus = enc.clone();
                plus.params.tensors_mut()[t].as_mut_slice()[j] += eps;
                let mut minus = enc.clone();
                minus.params.tensors_mut()[t].as_mut_slice()[j] -= eps;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * eps);
                let a = grad.as_slice()[j];
                let scale = a.abs().max(numeric.abs());
                let err = if scale < 1e-8 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }
}
