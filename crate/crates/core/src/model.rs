//! The trainable bundle: encoder, idiom embedding table, and both heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{CandidateInventory, ClozeInstance};
use crate::encoder::{Encoder, EncoderConfig, EncoderError, EncoderParams, HiddenStates, INIT_SCALE};
use crate::heads::{
    self, CandidateDistribution, ClsHeadParams, HeadError, HeadMode, IdiomEmbeddingTable,
    MatchHeadParams,
};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ClozeModel {
    pub encoder: Encoder,
    pub idioms: IdiomEmbeddingTable,
    pub matcher: MatchHeadParams,
    pub cls: ClsHeadParams,
}

impl ClozeModel {
    /// Fresh model. Idiom vectors start at the mean of their tokens' input
    /// embeddings; head weights are uniform in ±0.05 with zero biases.
    pub fn new(config: EncoderConfig, inventory: &CandidateInventory, seed: u64) -> Result<Self, EncoderError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(config, &mut rng)?;
        let idioms = IdiomEmbeddingTable::from_token_means(inventory, &encoder.params.token_embedding);
        let d = config.d_model;
        let matcher = MatchHeadParams {
            weight: Matrix::uniform(1, d, INIT_SCALE, &mut rng),
            bias: Matrix::zeros(1, 1),
        };
        let cls = ClsHeadParams {
            weight: Matrix::uniform(1, d, INIT_SCALE, &mut rng),
            bias: Matrix::zeros(1, 1),
        };
        Ok(Self {
            encoder,
            idioms,
            matcher,
            cls,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn num_candidates(&self) -> usize {
        self.idioms.len()
    }

    /// Zero-valued copy with identical shapes, for gradient accumulation.
    pub fn zeros_like(&self) -> Self {
        let config = self.encoder.config;
        let d = config.d_model;
        Self {
            encoder: Encoder {
                config,
                params: EncoderParams::zeros(&config),
            },
            idioms: IdiomEmbeddingTable(Matrix::zeros(self.idioms.len(), d)),
            matcher: MatchHeadParams::zeros(d),
            cls: ClsHeadParams::zeros(d),
        }
    }

    /// Named tensors in checkpoint order: encoder tensors, then
    /// `idiom_embedding`, `match.weight`, `match.bias`, `cls.weight`,
    /// `cls.bias`.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = self.encoder.params.tensors();
        out.push(("idiom_embedding".into(), &self.idioms.0));
        out.push(("match.weight".into(), &self.matcher.weight));
        out.push(("match.bias".into(), &self.matcher.bias));
        out.push(("cls.weight".into(), &self.cls.weight));
        out.push(("cls.bias".into(), &self.cls.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder.params.tensors_mut();
        out.push(&mut self.idioms.0);
        out.push(&mut self.matcher.weight);
        out.push(&mut self.matcher.bias);
        out.push(&mut self.cls.weight);
        out.push(&mut self.cls.bias);
        out
    }

    /// Number of encoder tensors at the front of [`ClozeModel::tensors`].
    pub fn encoder_tensor_count(&self) -> usize {
        2 + 12 * self.encoder.config.n_layers + 2
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn encode_passage(&self, instance: &ClozeInstance) -> Result<HiddenStates, EncoderError> {
        let valid = vec![true; instance.passage_ids.len()];
        self.encoder.forward(&instance.passage_ids, &valid)
    }

    /// Answer distribution of one head. `lambda` is only read in dual mode.
    pub fn distribution(
        &self,
        instance: &ClozeInstance,
        inventory: &CandidateInventory,
        mode: HeadMode,
        lambda: f64,
    ) -> Result<CandidateDistribution, HeadError> {
        let d = &instance.candidate_ids;
        match mode {
            HeadMode::Char => heads::score_char_sequence(instance, inventory, &self.encoder, &self.cls),
            HeadMode::Embed => {
                let h = self.encode_passage(instance)?;
                heads::score_embedding(&h, instance.mask_pos, &self.idioms, &self.matcher, d)
            }
            HeadMode::Pooling => {
                let h = self.encode_passage(instance)?;
                let valid = vec![true; h.len()];
                heads::score_context_pooling(&h, instance.mask_pos, &self.idioms, d, &valid)
            }
            HeadMode::Dual => {
                let p_char = self.distribution(instance, inventory, HeadMode::Char, lambda)?;
                let p_embed = self.distribution(instance, inventory, HeadMode::Embed, lambda)?;
                heads::interpolate(&p_char, &p_embed, lambda)
            }
        }
    }
}
