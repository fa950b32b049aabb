//! BIO-tagged idiom corpora and the cloze instances built from them.
//!
//! A corpus is read as one `<token> <tag>` pair per line with blank lines
//! between sentences. Each sentence carrying exactly one idiom span becomes
//! a [`ClozeInstance`]: the span is cut out, a single `[MASK]` takes its
//! place, and the idiom's index in the candidate inventory is the answer.

mod files;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::{self, TokenId, Vocabulary, MASK, PAD, UNK};

pub use files::{
    read_instances, read_inventory, write_instances, write_inventory, InstanceFileHeader,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: unknown tag {tag:?} (expected O, B-IDIOM or I-IDIOM)")]
    UnknownTag { line: usize, tag: String },
    #[error("line {line}: expected exactly a token and a tag")]
    LengthMismatch { line: usize },
    #[error("tokens and tags differ in length ({tokens} vs {tags})")]
    SentenceShape { tokens: usize, tags: usize },
    #[error("sentence has no B-IDIOM tag")]
    NoIdiom,
    #[error("sentence has {0} B-IDIOM tags")]
    MultipleIdioms(usize),
    #[error("idiom {0:?} is not in the candidate inventory")]
    UnknownIdiom(String),
    #[error("candidate inventory is empty")]
    EmptyInventory,
    #[error("bad split fractions: {0}")]
    BadFractions(String),
    #[error("invalid cloze instance: {0}")]
    InvalidInstance(String),
    #[error("{path}: line {line}: {msg}")]
    Format {
        path: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    BeginIdiom,
    InsideIdiom,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::O => "O",
            Tag::BeginIdiom => "B-IDIOM",
            Tag::InsideIdiom => "I-IDIOM",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tag {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "O" => Ok(Tag::O),
            "B-IDIOM" => Ok(Tag::BeginIdiom),
            "I-IDIOM" => Ok(Tag::InsideIdiom),
            _ => Err(()),
        }
    }
}

/// Tokens paired one-to-one with BIO tags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    tokens: Vec<String>,
    tags: Vec<Tag>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<Tag>) -> Result<Self, CorpusError> {
        if tokens.len() != tags.len() {
            return Err(CorpusError::SentenceShape {
                tokens: tokens.len(),
                tags: tags.len(),
            });
        }
        Ok(Self { tokens, tags })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// True when every I-IDIOM directly follows a B-IDIOM or I-IDIOM.
    pub fn is_well_formed(&self) -> bool {
        self.tags.iter().enumerate().all(|(i, t)| {
            *t != Tag::InsideIdiom || (i > 0 && self.tags[i - 1] != Tag::O)
        })
    }

    /// Render back to corpus format (no trailing blank line).
    pub fn to_corpus_string(&self) -> String {
        let mut s = String::new();
        for (tok, tag) in self.tokens.iter().zip(&self.tags) {
            s.push_str(tok);
            s.push('\t');
            s.push_str(tag.as_str());
            s.push('\n');
        }
        s
    }
}

/// Parse corpus text into sentences. Blank lines separate sentences; runs of
/// blank lines and a missing final blank line are tolerated.
pub fn parse_bio_corpus(text: &str) -> Result<Vec<TaggedSentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            if !tokens.is_empty() {
                sentences.push(TaggedSentence {
                    tokens: std::mem::take(&mut tokens),
                    tags: std::mem::take(&mut tags),
                });
            }
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (Some(token), Some(tag), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(CorpusError::LengthMismatch { line });
        };
        let tag = tag.parse::<Tag>().map_err(|_| CorpusError::UnknownTag {
            line,
            tag: tag.to_string(),
        })?;
        tokens.push(token.to_string());
        tags.push(tag);
    }
    if !tokens.is_empty() {
        sentences.push(TaggedSentence { tokens, tags });
    }
    Ok(sentences)
}

/// An idiom occurrence; `start` and `end` are inclusive token indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdiomSpan {
    pub tokens: Vec<String>,
    pub start: usize,
    pub end: usize,
}

impl IdiomSpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn surface(&self) -> String {
        self.tokens.join(" ")
    }
}

/// The run starting at the single B-IDIOM and extending through the
/// consecutive I-IDIOM tags that follow it.
pub fn extract_idiom_span(sentence: &TaggedSentence) -> Result<IdiomSpan, CorpusError> {
    let begins: Vec<usize> = sentence
        .tags
        .iter()
        .enumerate()
        .filter(|(_, t)| **t == Tag::BeginIdiom)
        .map(|(i, _)| i)
        .collect();
    let start = match begins.as_slice() {
        [] => return Err(CorpusError::NoIdiom),
        [b] => *b,
        many => return Err(CorpusError::MultipleIdioms(many.len())),
    };
    let end = start
        + sentence.tags[start + 1..]
            .iter()
            .take_while(|t| **t == Tag::InsideIdiom)
            .count();
    Ok(IdiomSpan {
        tokens: sentence.tokens[start..=end].to_vec(),
        start,
        end,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdiomCandidate {
    pub id: usize,
    pub surface: Vec<String>,
    /// Token ids right-padded with PAD to the inventory's padding length.
    pub padded_ids: Vec<TokenId>,
}

impl IdiomCandidate {
    pub fn surface_string(&self) -> String {
        self.surface.join(" ")
    }

    /// Number of non-PAD ids.
    pub fn token_len(&self) -> usize {
        self.surface.len()
    }
}

/// The T idioms a blank may be filled with, padded to a shared length P.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateInventory {
    candidates: Vec<IdiomCandidate>,
    pad_len: usize,
    by_surface: BTreeMap<String, usize>,
}

impl CandidateInventory {
    fn from_padded(candidates: Vec<IdiomCandidate>, pad_len: usize) -> Self {
        let by_surface = candidates
            .iter()
            .map(|c| (c.surface_string(), c.id))
            .collect();
        Self {
            candidates,
            pad_len,
            by_surface,
        }
    }

    pub fn candidates(&self) -> &[IdiomCandidate] {
        &self.candidates
    }

    pub fn get(&self, id: usize) -> Option<&IdiomCandidate> {
        self.candidates.get(id)
    }

    /// T
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// P
    pub fn pad_len(&self) -> usize {
        self.pad_len
    }

    pub fn index_of(&self, surface: &str) -> Option<usize> {
        self.by_surface.get(surface).copied()
    }

    pub fn all_ids(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// Unpadded candidates from distinct span surfaces, in lexicographic order
/// of their space-joined surface.
pub fn collect_candidates<'a, I>(spans: I) -> Vec<IdiomCandidate>
where
    I: IntoIterator<Item = &'a IdiomSpan>,
{
    let mut seen: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for span in spans {
        seen.entry(span.surface()).or_insert_with(|| span.tokens.clone());
    }
    seen.into_values()
        .enumerate()
        .map(|(id, surface)| IdiomCandidate {
            id,
            surface,
            padded_ids: Vec::new(),
        })
        .collect()
}

/// Encode every candidate and right-pad with PAD to the longest surface.
pub fn pad_candidates(
    candidates: Vec<IdiomCandidate>,
    vocab: &Vocabulary,
) -> Result<CandidateInventory, CorpusError> {
    let pad_len = candidates
        .iter()
        .map(|c| c.surface.len())
        .max()
        .ok_or(CorpusError::EmptyInventory)?;
    let padded = candidates
        .into_iter()
        .enumerate()
        .map(|(id, mut c)| {
            let mut ids = tokenizer::encode(&c.surface, vocab, false);
            ids.resize(pad_len, PAD);
            c.id = id;
            c.padded_ids = ids;
            c
        })
        .collect();
    Ok(CandidateInventory::from_padded(padded, pad_len))
}

/// A passage with one blank, the gold answer, and the candidate set D.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClozeInstance {
    /// CLS ... MASK ... SEP
    pub passage_ids: Vec<TokenId>,
    pub mask_pos: usize,
    pub gold: usize,
    pub candidate_ids: Vec<usize>,
}

impl ClozeInstance {
    /// Check the structural invariants against an inventory of size `t`.
    pub fn validate(&self, t: usize) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InvalidInstance(m.to_string()));
        if self.passage_ids.first() != Some(&tokenizer::CLS)
            || self.passage_ids.last() != Some(&tokenizer::SEP)
        {
            return bad("passage must start with CLS and end with SEP");
        }
        if self.passage_ids.get(self.mask_pos) != Some(&MASK) {
            return bad("mask_pos does not point at MASK");
        }
        if self.passage_ids.iter().filter(|&&id| id == MASK).count() != 1 {
            return bad("passage must contain exactly one MASK");
        }
        if !self.candidate_ids.contains(&self.gold) {
            return bad("gold is not among the candidates");
        }
        if self.candidate_ids.iter().any(|&c| c >= t) {
            return bad("candidate index outside the inventory");
        }
        Ok(())
    }

    /// Position of `gold` within `candidate_ids`.
    pub fn gold_position(&self) -> Option<usize> {
        self.candidate_ids.iter().position(|&c| c == self.gold)
    }
}

/// Cut the idiom out of `sentence`, leaving a single MASK, and frame the
/// result with CLS/SEP. D defaults to the full inventory.
pub fn make_cloze_instance(
    sentence: &TaggedSentence,
    inventory: &CandidateInventory,
    vocab: &Vocabulary,
) -> Result<ClozeInstance, CorpusError> {
    let span = extract_idiom_span(sentence)?;
    let surface = span.surface();
    let gold = inventory
        .index_of(&surface)
        .ok_or(CorpusError::UnknownIdiom(surface))?;

    let context = |toks: &[String]| -> Vec<TokenId> {
        tokenizer::encode(toks, vocab, false)
            .into_iter()
            // a literal "[MASK]" in the text must not become a second blank
            .map(|id| if id == MASK { UNK } else { id })
            .collect()
    };
    let before = context(&sentence.tokens[..span.start]);
    let after = context(&sentence.tokens[span.end + 1..]);

    let mut passage_ids = Vec::with_capacity(before.len() + after.len() + 3);
    passage_ids.push(tokenizer::CLS);
    passage_ids.extend(before);
    let mask_pos = passage_ids.len();
    passage_ids.push(MASK);
    passage_ids.extend(after);
    passage_ids.push(tokenizer::SEP);

    Ok(ClozeInstance {
        passage_ids,
        mask_pos,
        gold,
        candidate_ids: inventory.all_ids(),
    })
}

/// Counts reported by [`prepare_corpus`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub instances: usize,
    pub skipped_no_idiom: usize,
    pub skipped_multiple_idioms: usize,
    pub candidates: usize,
    pub pad_len: usize,
    pub vocab_size: usize,
}

#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub vocab: Vocabulary,
    pub inventory: CandidateInventory,
    pub instances: Vec<ClozeInstance>,
    pub stats: CorpusStats,
}

/// Vocabulary, padded inventory and one instance per usable sentence.
/// Sentences with zero or several idioms are skipped and counted.
pub fn prepare_corpus(
    sentences: &[TaggedSentence],
    min_freq: usize,
) -> Result<PreparedCorpus, crate::Error> {
    let mut stats = CorpusStats {
        sentences: sentences.len(),
        ..Default::default()
    };
    let mut usable = Vec::new();
    let mut spans = Vec::new();
    for s in sentences {
        match extract_idiom_span(s) {
            Ok(span) => {
                usable.push(s);
                spans.push(span);
            }
            Err(CorpusError::NoIdiom) => stats.skipped_no_idiom += 1,
            Err(CorpusError::MultipleIdioms(_)) => stats.skipped_multiple_idioms += 1,
            Err(e) => return Err(e.into()),
        }
    }
    let vocab = tokenizer::build_vocab(sentences, min_freq)?;
    let inventory = pad_candidates(collect_candidates(&spans), &vocab)?;
    let instances = usable
        .iter()
        .map(|s| make_cloze_instance(s, &inventory, &vocab))
        .collect::<Result<Vec<_>, _>>()?;
    stats.instances = instances.len();
    stats.candidates = inventory.len();
    stats.pad_len = inventory.pad_len();
    stats.vocab_size = vocab.len();
    Ok(PreparedCorpus {
        vocab,
        inventory,
        instances,
        stats,
    })
}

/// Train / validation / test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Self {
        Self {
            train,
            validation,
            test,
        }
    }

    fn check(&self) -> Result<(), CorpusError> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|f| !f.is_finite() || *f < 0.0) {
            return Err(CorpusError::BadFractions(
                "fractions must be finite and non-negative".into(),
            ));
        }
        if self.train <= 0.0 {
            return Err(CorpusError::BadFractions("train fraction must be positive".into()));
        }
        if all.iter().sum::<f64>() > 1.0 + 1e-9 {
            return Err(CorpusError::BadFractions("fractions sum to more than 1".into()));
        }
        Ok(())
    }
}

impl Default for SplitFractions {
    /// 15k / 5k / 2k proportions.
    fn default() -> Self {
        Self::new(15.0 / 22.0, 5.0 / 22.0, 2.0 / 22.0)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: Vec<ClozeInstance>,
    pub validation: Vec<ClozeInstance>,
    pub test: Vec<ClozeInstance>,
}

impl DatasetSplits {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

fn portion(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction) + 1e-9).floor() as usize
}

/// Seeded shuffle, then contiguous partition. Validation and test take
/// `floor(N * fraction)` instances; train keeps the remainder so the three
/// splits always cover every instance.
pub fn split_dataset(
    instances: Vec<ClozeInstance>,
    fractions: SplitFractions,
    seed: u64,
) -> Result<DatasetSplits, CorpusError> {
    fractions.check()?;
    let n = instances.len();
    let n_val = portion(n, fractions.validation);
    let n_test = portion(n, fractions.test);
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut slots: Vec<Option<ClozeInstance>> = instances.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<ClozeInstance> {
        order[range]
            .iter()
            .map(|&i| slots[i].take().expect("each index drawn once"))
            .collect()
    };
    let train = take(0..n_train);
    let validation = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..n);
    Ok(DatasetSplits {
        train,
        validation,
        test,
    })
}
