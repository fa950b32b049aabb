//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"IDCLOZE\0"            magic, 8 bytes
//! u32                     format version (1)
//! u32                     header length in bytes
//! header                  JSON: encoder config, candidate count, metadata,
//!                         tensor names and shapes, training state summary
//! f64 * Σ rows·cols       parameter tensors in ClozeModel::tensors() order
//! f64 * Σ rows·cols * 2   Adam first then second moments (only when the
//!                         header's optimizer is "adam")
//! [u8; 32]                SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoder::{Encoder, EncoderConfig, EncoderParams};
use crate::heads::{ClsHeadParams, IdiomEmbeddingTable, LambdaPolicy, MatchHeadParams};
use crate::model::ClozeModel;
use crate::tensor::Matrix;
use crate::training::{OptimizerKind, OptimizerState};

const MAGIC: &[u8; 8] = b"IDCLOZE\0";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checksum mismatch: file is corrupted")]
    ChecksumMismatch,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint header is malformed: {0}")]
    BadHeader(String),
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Extra provenance stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub vocab_fingerprint: String,
    pub lambda: LambdaPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epochs_completed: usize,
    pub optimizer: OptimizerState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ClozeModel,
    pub meta: CheckpointMeta,
    pub train_state: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    encoder: EncoderConfig,
    candidates: usize,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
    epochs_completed: Option<usize>,
    optimizer: Option<OptimizerKind>,
    adam_step: Option<u64>,
}

fn put_matrix(buf: &mut Vec<u8>, m: &Matrix) {
    for v in m.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.model.tensors();
        let (epochs_completed, optimizer, adam_step) = match &self.train_state {
            None => (None, None, None),
            Some(ts) => {
                let step = match &ts.optimizer {
                    OptimizerState::Adam { step, .. } => Some(*step),
                    OptimizerState::Sgd => None,
                };
                (Some(ts.epochs_completed), Some(ts.optimizer.kind()), step)
            }
        };
        let header = Header {
            encoder: *self.model.config(),
            candidates: self.model.num_candidates(),
            meta: self.meta.clone(),
            tensors: tensors
                .iter()
                .map(|(name, m)| TensorEntry {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                })
                .collect(),
            epochs_completed,
            optimizer,
            adam_step,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");

        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for (_, m) in &tensors {
            put_matrix(&mut buf, m);
        }
        if let Some(TrainState {
            optimizer: OptimizerState::Adam { first, second, .. },
            ..
        }) = &self.train_state
        {
            for m in first.iter().chain(second) {
                put_matrix(&mut buf, m);
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    /// Parse and verify a checkpoint. With `expected` set, the stored
    /// encoder config must match it exactly.
    pub fn from_bytes(bytes: &[u8], expected: Option<&EncoderConfig>) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 16 + 32 {
            return Err(CheckpointError::Truncated);
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::ChecksumMismatch);
        }
        let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let header_len = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
        let header_end = 16 + header_len;
        if body.len() < header_end {
            return Err(CheckpointError::Truncated);
        }
        let header: Header = serde_json::from_slice(&body[16..header_end])
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
        if let Some(want) = expected {
            if *want != header.encoder {
                return Err(CheckpointError::ConfigMismatch(format!(
                    "checkpoint has {:?}, expected {:?}",
                    header.encoder, want
                )));
            }
        }
        header
            .encoder
            .validate()
            .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;

        let mut model = skeleton(&header.encoder, header.candidates);
        let layout: Vec<(String, (usize, usize))> = model
            .tensors()
            .into_iter()
            .map(|(n, m)| (n, m.shape()))
            .collect();
        if layout.len() != header.tensors.len()
            || layout
                .iter()
                .zip(&header.tensors)
                .any(|((n, s), e)| *n != e.name || *s != (e.rows, e.cols))
        {
            return Err(CheckpointError::ConfigMismatch(
                "tensor layout differs from the one implied by the config".into(),
            ));
        }

        let mut cursor = header_end;
        let mut read_into = |m: &mut Matrix| -> Result<(), CheckpointError> {
            let need = m.len() * 8;
            let chunk = body.get(cursor..cursor + need).ok_or(CheckpointError::Truncated)?;
            for (v, b) in m.as_mut_slice().iter_mut().zip(chunk.chunks_exact(8)) {
                *v = f64::from_le_bytes(b.try_into().unwrap());
            }
            cursor += need;
            Ok(())
        };
        for t in model.tensors_mut() {
            read_into(t)?;
        }
        let train_state = match (header.epochs_completed, header.optimizer) {
            (Some(epochs_completed), Some(kind)) => {
                let mut optimizer = OptimizerState::new(kind, &model);
                if let OptimizerState::Adam { step, first, second } = &mut optimizer {
                    *step = header
                        .adam_step
                        .ok_or_else(|| CheckpointError::BadHeader("adam state without step".into()))?;
                    for m in first.iter_mut().chain(second.iter_mut()) {
                        read_into(m)?;
                    }
                }
                Some(TrainState {
                    epochs_completed,
                    optimizer,
                })
            }
            (None, None) => None,
            _ => return Err(CheckpointError::BadHeader("partial training state".into())),
        };
        if cursor != body.len() {
            return Err(CheckpointError::BadHeader("trailing bytes after tensors".into()));
        }
        Ok(Self {
            model,
            meta: header.meta,
            train_state,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path, expected: Option<&EncoderConfig>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?, expected)
    }
}

fn skeleton(config: &EncoderConfig, candidates: usize) -> ClozeModel {
    let d = config.d_model;
    ClozeModel {
        encoder: Encoder {
            config: *config,
            params: EncoderParams::zeros(config),
        },
        idioms: IdiomEmbeddingTable(Matrix::zeros(candidates, d)),
        matcher: MatchHeadParams::zeros(d),
        cls: ClsHeadParams::zeros(d),
    }
}
