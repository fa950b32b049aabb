//! Synthetic BIO corpora that a working model can learn almost perfectly.
//!
//! Each idiom owns a few cue words. Every sentence is drawn from a small set
//! of fixed templates and contains two of the idiom's cues, so the blank is
//! always recoverable from context.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{Tag, TaggedSentence};

const CUES_PER_IDIOM: usize = 3;
const FILLERS: usize = 24;
const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("need at least 2 idioms, got {0}")]
    TooFewIdioms(usize),
    #[error("need at least 1 template")]
    NoTemplates,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub idioms: usize,
    pub instances: usize,
    pub templates: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            idioms: 20,
            instances: 2000,
            templates: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Filler(usize),
    Cue,
    Idiom,
}

/// Distinct pronounceable words: `prefix` followed by consonant-vowel
/// syllables enumerating `index`.
fn word(prefix: &str, mut index: usize) -> String {
    let mut s = prefix.to_string();
    loop {
        let syl = index % (ONSETS.len() * VOWELS.len());
        s.push_str(ONSETS[syl / VOWELS.len()]);
        s.push_str(VOWELS[syl % VOWELS.len()]);
        index /= ONSETS.len() * VOWELS.len();
        if index == 0 {
            return s;
        }
        index -= 1;
    }
}

fn make_template(rng: &mut ChaCha8Rng) -> Vec<Slot> {
    let fillers = rng.random_range(3..=6);
    let mut slots: Vec<Slot> = (0..fillers).map(|_| Slot::Filler(rng.random_range(0..FILLERS))).collect();
    slots.push(Slot::Cue);
    slots.push(Slot::Cue);
    slots.shuffle(rng);
    let at = rng.random_range(0..=slots.len());
    slots.insert(at, Slot::Idiom);
    slots
}

/// Generate `config.instances` sentences, idiom `i % idioms` for sentence
/// `i`, each with exactly one well-formed idiom span.
pub fn generate(config: &SynthConfig) -> Result<Vec<TaggedSentence>, SynthError> {
    if config.idioms < 2 {
        return Err(SynthError::TooFewIdioms(config.idioms));
    }
    if config.templates == 0 {
        return Err(SynthError::NoTemplates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fillers: Vec<String> = (0..FILLERS).map(|i| word("", i)).collect();
    let shared = word("q", 0);
    let idioms: Vec<Vec<String>> = (0..config.idioms)
        .map(|k| {
            let len = 2 + k % 3;
            let mut toks: Vec<String> = (0..len).map(|j| word("x", k * 4 + j)).collect();
            if len == 4 {
                toks[2] = shared.clone();
            }
            toks
        })
        .collect();
    let cues: Vec<Vec<String>> = (0..config.idioms)
        .map(|k| (0..CUES_PER_IDIOM).map(|j| word("c", k * CUES_PER_IDIOM + j)).collect())
        .collect();
    let templates: Vec<Vec<Slot>> = (0..config.templates).map(|_| make_template(&mut rng)).collect();

    let mut out = Vec::with_capacity(config.instances);
    for i in 0..config.instances {
        let k = i % config.idioms;
        let template = templates.choose(&mut rng).expect("non-empty");
        let picked: Vec<&String> = cues[k].choose_multiple(&mut rng, 2).collect();
        let mut cue_iter = picked.into_iter();
        let mut tokens = Vec::new();
        let mut tags = Vec::new();
        for slot in template {
            match *slot {
                Slot::Filler(f) => {
                    tokens.push(fillers[f].clone());
                    tags.push(Tag::O);
                }
                Slot::Cue => {
                    tokens.push(cue_iter.next().expect("two cue slots").clone());
                    tags.push(Tag::O);
                }
                Slot::Idiom => {
                    for (j, t) in idioms[k].iter().enumerate() {
                        tokens.push(t.clone());
                        tags.push(if j == 0 { Tag::BeginIdiom } else { Tag::InsideIdiom });
                    }
                }
            }
        }
        tokens.push(".".to_string());
        tags.push(Tag::O);
        out.push(TaggedSentence::new(tokens, tags).expect("lengths match"));
    }
    Ok(out)
}

/// Corpus text: sentences separated by blank lines.
pub fn to_corpus_text(sentences: &[TaggedSentence]) -> String {
    sentences
        .iter()
        .map(TaggedSentence::to_corpus_string)
        .collect::<Vec<_>>()
        .join("\n")
}
