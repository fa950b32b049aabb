//! Whole-word vocabulary with a fixed special-token block.
//!
//! Ids `0..5` are reserved for `[PAD]`, `[UNK]`, `[CLS]`, `[SEP]` and
//! `[MASK]`; corpus tokens start at id 5. PAD is 0 so zero-padding is literal.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::TaggedSentence;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const MASK: TokenId = 4;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";

/// Special tokens in id order.
pub const RESERVED: [&str; 5] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, MASK_TOKEN];

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("min_freq must be at least 1")]
    BadMinFreq,
    #[error("vocabulary file is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
    min_freq: usize,
}

impl Vocabulary {
    fn reserved_only(min_freq: usize) -> Self {
        let id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self {
            token_to_id,
            id_to_token,
            min_freq,
        }
    }

    fn push(&mut self, token: String) {
        let id = self.id_to_token.len() as TokenId;
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    /// Always false: the reserved block is never empty.
    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Tokens in id order, reserved block first.
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// File body: one token per line in id order, reserved entries first.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.id_to_token {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    /// Content hash of the serialized vocabulary (16 hex chars).
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn parse(text: &str) -> Result<Self, TokenizerError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() {
            return Err(TokenizerError::Malformed(format!(
                "expected at least {} reserved entries, found {} lines",
                RESERVED.len(),
                lines.len()
            )));
        }
        for (i, want) in RESERVED.iter().enumerate() {
            if lines[i] != *want {
                return Err(TokenizerError::Malformed(format!(
                    "line {}: expected reserved token {want}, found {:?}",
                    i + 1,
                    lines[i]
                )));
            }
        }
        let mut vocab = Self::reserved_only(1);
        for (i, line) in lines.iter().enumerate().skip(RESERVED.len()) {
            if line.is_empty() || vocab.token_to_id.contains_key(*line) {
                return Err(TokenizerError::Malformed(format!(
                    "line {}: empty or duplicate token {:?}",
                    i + 1,
                    line
                )));
            }
            vocab.push(line.to_string());
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TokenizerError> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Build a vocabulary from every token of `sentences`.
///
/// Tokens seen at least `min_freq` times get ids in order of descending
/// frequency, ties broken lexicographically.
pub fn build_vocab(
    sentences: &[TaggedSentence],
    min_freq: usize,
) -> Result<Vocabulary, TokenizerError> {
    if min_freq == 0 {
        return Err(TokenizerError::BadMinFreq);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        for t in s.tokens() {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && !RESERVED.contains(&t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut vocab = Vocabulary::reserved_only(min_freq);
    for (t, _) in kept {
        vocab.push(t.to_string());
    }
    Ok(vocab)
}

/// Map tokens to ids; unknown tokens become UNK. With `add_frame` the
/// output is wrapped in CLS ... SEP.
pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, add_frame: bool) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(tokens.len() + 2);
    if add_frame {
        out.push(CLS);
    }
    out.extend(tokens.iter().map(|t| vocab.id(t.as_ref()).unwrap_or(UNK)));
    if add_frame {
        out.push(SEP);
    }
    out
}

pub fn decode(ids: &[TokenId], vocab: &Vocabulary) -> Result<Vec<String>, TokenizerError> {
    ids.iter()
        .map(|&id| {
            vocab
                .token(id)
                .map(str::to_string)
                .ok_or(TokenizerError::IdOutOfRange {
                    id,
                    size: vocab.len(),
                })
        })
        .collect()
}
