//! Command-line front end: `synth`, `preprocess`, `train`, `eval`, `predict`.
//!
//! Settings come from an optional TOML file (`--config`) with command-line
//! flags taking precedence. Failures print one line, `error[<kind>]: <msg>`,
//! to stderr and exit with 1 (usage), 2 (data) or 3 (divergence).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta, TrainState};
use crate::corpus::{read_instances, read_inventory, write_instances, write_inventory};
use crate::corpus::{
    parse_bio_corpus, prepare_corpus, split_dataset, CandidateInventory, ClozeInstance, CorpusError,
    CorpusStats, DatasetSplits, SplitFractions,
};
use crate::encoder::EncoderConfig;
use crate::heads::{argmax_position, HeadMode};
use crate::model::ClozeModel;
use crate::synth::{self, SynthConfig};
use crate::tokenizer::{self, Vocabulary, CLS, MASK, MASK_TOKEN, SEP};
use crate::training::{
    evaluate_heads, read_metrics_csv, train, write_metrics_csv, write_predictions_csv, EpochMetrics,
    OptimizerKind, OptimizerState, TrainConfig,
};
use crate::Error;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const INVENTORY_FILE: &str = "inventory.tsv";
pub const STATS_FILE: &str = "stats.json";
pub const CORPUS_FILE: &str = "corpus.bio";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Parser)]
#[command(name = "idiom-cloze", version, about = "Idiom cloze reading comprehension")]
pub struct Cli {
    /// Seed for generation, splitting, initialization and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with default settings; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic BIO corpus.
    Synth(SynthArgs),
    /// Build vocabulary, candidate inventory and split instance files.
    Preprocess(PreprocessArgs),
    /// Train a model on a preprocessed directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Fill the `[MASK]` in a sentence.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub idioms: Option<usize>,
    #[arg(long)]
    pub instances: Option<usize>,
    #[arg(long)]
    pub templates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// BIO corpus: one `token<TAB>tag` per line, blank line between sentences.
    pub corpus: PathBuf,
    #[arg(long)]
    pub min_freq: Option<usize>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `preprocess`.
    pub data: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub head: Option<HeadMode>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long, conflicts_with = "no_clip")]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    /// Train against the gold and K-1 sampled distractors.
    #[arg(long)]
    pub train_candidates: Option<usize>,
    #[arg(long)]
    pub freeze_encoder: bool,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub lambda_alpha: Option<f64>,
    #[arg(long)]
    pub lambda_beta: Option<f64>,
    #[arg(long)]
    pub lambda_floor: Option<f64>,
    /// Continue from a checkpoint written by an earlier `train`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Record measured epoch times in the metrics file instead of 0.
    #[arg(long)]
    pub wall_clock: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.tsv",
            Split::Validation => "validation.tsv",
            Split::Test => "test.tsv",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Directory written by `preprocess`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Comma-separated heads to score.
    #[arg(long, value_delimiter = ',', default_value = "char,embed,pooling,dual")]
    pub heads: Vec<HeadMode>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Whitespace-tokenized sentence containing exactly one `[MASK]`.
    #[arg(long)]
    pub sentence: String,
    #[arg(long, default_value = "dual")]
    pub head: HeadMode,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub idioms: usize,
    pub instances: usize,
    pub templates: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self { idioms: d.idioms, instances: d.instances, templates: d.templates }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSection {
    pub min_freq: usize,
    pub fractions: SplitFractions,
}

impl Default for PreprocessSection {
    fn default() -> Self {
        Self { min_freq: 1, fractions: SplitFractions::default() }
    }
}

/// Encoder shape; the vocabulary size always comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = EncoderConfig::desk_scale(0);
        Self { d_model: d.d_model, n_layers: d.n_layers, n_heads: d.n_heads, d_ff: d.d_ff, max_len: d.max_len }
    }
}

/// Contents of a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub synth: SynthSection,
    pub preprocess: PreprocessSection,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            Error::Usage(format!("config {}: {}", path.display(), e.message()))
        })
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return 1;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Error> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let seed = cli.seed.or(file.seed).unwrap_or(0);
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, &file, seed, &out),
        Command::Preprocess(a) => cmd_preprocess(a, &file, seed, &out),
        Command::Train(a) => cmd_train(a, &file, cli.seed, &out),
        Command::Eval(a) => cmd_eval(a, &out),
        Command::Predict(a) => cmd_predict(a),
    }
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))
}

fn cmd_synth(a: &SynthArgs, file: &RunConfig, seed: u64, out: &Path) -> Result<(), Error> {
    let config = SynthConfig {
        idioms: a.idioms.unwrap_or(file.synth.idioms),
        instances: a.instances.unwrap_or(file.synth.instances),
        templates: a.templates.unwrap_or(file.synth.templates),
        seed,
    };
    let sentences = synth::generate(&config).map_err(|e| Error::Usage(e.to_string()))?;
    create_dir(out)?;
    let path = out.join(CORPUS_FILE);
    fs::write(&path, synth::to_corpus_text(&sentences))?;
    println!(
        "wrote {} sentences over {} idioms to {}",
        sentences.len(),
        config.idioms,
        path.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct StatsReport {
    #[serde(flatten)]
    corpus: CorpusStats,
    train: usize,
    validation: usize,
    test: usize,
    seed: u64,
    vocab_fingerprint: String,
}

fn cmd_preprocess(a: &PreprocessArgs, file: &RunConfig, seed: u64, out: &Path) -> Result<(), Error> {
    let text = fs::read_to_string(&a.corpus)
        .map_err(|e| Error::Data(format!("cannot read corpus {}: {e}", a.corpus.display())))?;
    let sentences = parse_bio_corpus(&text)?;
    let prepared = match prepare_corpus(&sentences, a.min_freq.unwrap_or(file.preprocess.min_freq)) {
        Err(Error::Corpus(CorpusError::EmptyInventory)) => {
            return Err(Error::Data("no instances produced".into()))
        }
        other => other?,
    };
    if prepared.instances.is_empty() {
        return Err(Error::Data("no instances produced".into()));
    }
    let defaults = file.preprocess.fractions;
    let fractions = SplitFractions::new(
        a.train_frac.unwrap_or(defaults.train),
        a.val_frac.unwrap_or(defaults.validation),
        a.test_frac.unwrap_or(defaults.test),
    );
    let splits = split_dataset(prepared.instances, fractions, seed)?;

    create_dir(out)?;
    let fp = prepared.vocab.fingerprint();
    prepared.vocab.save(&out.join(VOCAB_FILE))?;
    write_inventory(&out.join(INVENTORY_FILE), &prepared.inventory, &fp)?;
    for (split, instances) in [
        (Split::Train, &splits.train),
        (Split::Validation, &splits.validation),
        (Split::Test, &splits.test),
    ] {
        write_instances(&out.join(split.file_name()), instances, &prepared.inventory, &fp)?;
    }
    let s = &prepared.stats;
    let report = StatsReport {
        corpus: s.clone(),
        train: splits.train.len(),
        validation: splits.validation.len(),
        test: splits.test.len(),
        seed,
        vocab_fingerprint: fp,
    };
    let mut json = serde_json::to_string_pretty(&report).expect("stats serialize");
    json.push('\n');
    fs::write(out.join(STATS_FILE), json)?;

    println!("sentences              {}", s.sentences);
    println!("N (instances)          {}", s.instances);
    println!("T (candidates)         {}", s.candidates);
    println!("P (padding length)     {}", s.pad_len);
    println!("skipped, no idiom      {}", s.skipped_no_idiom);
    println!("skipped, >1 idiom      {}", s.skipped_multiple_idioms);
    println!("vocabulary             {}", s.vocab_size);
    println!(
        "train/validation/test  {}/{}/{}",
        report.train, report.validation, report.test
    );
    Ok(())
}

/// A preprocessed directory whose files all agree on one vocabulary.
struct DataDir {
    dir: PathBuf,
    vocab: Vocabulary,
    inventory: CandidateInventory,
    fingerprint: String,
}

impl DataDir {
    fn open(dir: &Path) -> Result<Self, Error> {
        let vocab_path = dir.join(VOCAB_FILE);
        if !vocab_path.exists() {
            return Err(Error::Data(format!(
                "{} not found; run preprocess first",
                vocab_path.display()
            )));
        }
        let vocab = Vocabulary::load(&vocab_path)?;
        let fingerprint = vocab.fingerprint();
        let (inventory, inv_fp) = read_inventory(&dir.join(INVENTORY_FILE))?;
        if inv_fp != fingerprint {
            return Err(fingerprint_mismatch(INVENTORY_FILE, &inv_fp, &fingerprint));
        }
        Ok(Self { dir: dir.to_path_buf(), vocab, inventory, fingerprint })
    }

    fn split(&self, split: Split) -> Result<Vec<ClozeInstance>, Error> {
        let path = self.dir.join(split.file_name());
        if !path.exists() {
            return Err(Error::Data(format!("split file {} not found", path.display())));
        }
        let (header, instances) = read_instances(&path)?;
        if header.vocab_fingerprint != self.fingerprint {
            return Err(fingerprint_mismatch(split.file_name(), &header.vocab_fingerprint, &self.fingerprint));
        }
        if header.candidates != self.inventory.len() {
            return Err(Error::Data(format!(
                "{} was built for {} candidates, inventory has {}",
                split.file_name(),
                header.candidates,
                self.inventory.len()
            )));
        }
        Ok(instances)
    }

    fn check_checkpoint(&self, ckpt: &Checkpoint) -> Result<(), Error> {
        if ckpt.meta.vocab_fingerprint != self.fingerprint {
            return Err(fingerprint_mismatch("checkpoint", &ckpt.meta.vocab_fingerprint, &self.fingerprint));
        }
        if ckpt.model.num_candidates() != self.inventory.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} candidates, inventory has {}",
                ckpt.model.num_candidates(),
                self.inventory.len()
            )));
        }
        Ok(())
    }
}

fn fingerprint_mismatch(what: &str, found: &str, expected: &str) -> Error {
    Error::Data(format!(
        "fingerprint mismatch: {what} has vocabulary {found}, expected {expected}"
    ))
}

fn train_config(a: &TrainArgs, file: &RunConfig, seed: Option<u64>) -> TrainConfig {
    let mut c = file.train.clone();
    if let Some(s) = seed.or(file.seed) {
        c.seed = s;
    }
    macro_rules! set {
        ($field:ident, $flag:expr) => {
            if let Some(v) = $flag {
                c.$field = v;
            }
        };
    }
    set!(epochs, a.epochs);
    set!(batch_size, a.batch_size);
    set!(learning_rate, a.lr);
    set!(head, a.head);
    set!(optimizer, a.optimizer);
    if a.no_clip {
        c.clip_norm = None;
    } else if let Some(v) = a.clip_norm {
        c.clip_norm = Some(v);
    }
    if a.train_candidates.is_some() {
        c.train_candidates = a.train_candidates;
    }
    c.freeze_encoder |= a.freeze_encoder;
    if let Some(v) = a.lambda_alpha {
        c.lambda.alpha = v;
    }
    if let Some(v) = a.lambda_beta {
        c.lambda.beta = v;
    }
    if let Some(v) = a.lambda_floor {
        c.lambda.floor = v;
    }
    c
}

fn encoder_config(a: &TrainArgs, file: &RunConfig, vocab_size: usize) -> EncoderConfig {
    let m = &file.model;
    EncoderConfig {
        vocab_size,
        d_model: a.d_model.unwrap_or(m.d_model),
        n_layers: a.layers.unwrap_or(m.n_layers),
        n_heads: a.heads.unwrap_or(m.n_heads),
        d_ff: a.d_ff.unwrap_or(m.d_ff),
        max_len: a.max_len.unwrap_or(m.max_len),
    }
}

fn cmd_train(a: &TrainArgs, file: &RunConfig, seed: Option<u64>, out: &Path) -> Result<(), Error> {
    let data = DataDir::open(&a.data)?;
    let splits = DatasetSplits {
        train: data.split(Split::Train)?,
        validation: data.split(Split::Validation)?,
        test: Vec::new(),
    };
    let config = train_config(a, file, seed);
    config.validate()?;
    let enc = encoder_config(a, file, data.vocab.len());
    enc.validate()?;
    create_dir(out)?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let metrics_path = out.join(METRICS_FILE);

    let (mut model, resume, mut history) = match &a.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path, Some(&enc))?;
            data.check_checkpoint(&ckpt)?;
            let state = ckpt.train_state.ok_or_else(|| {
                Error::Data(format!("{} has no training state to resume", path.display()))
            })?;
            let history: Vec<EpochMetrics> = if metrics_path.exists() {
                read_metrics_csv(&metrics_path)
                    .map_err(|e| Error::Data(format!("{}: {e}", metrics_path.display())))?
                    .into_iter()
                    .filter(|m| m.epoch <= state.epochs_completed)
                    .collect()
            } else {
                Vec::new()
            };
            println!("resuming after epoch {}", state.epochs_completed);
            (ckpt.model, Some(state), history)
        }
        None => (ClozeModel::new(enc, &data.inventory, config.seed)?, None, Vec::new()),
    };
    let meta = CheckpointMeta { vocab_fingerprint: data.fingerprint.clone(), lambda: config.lambda };
    if resume.is_none() {
        // Epoch 0, so a run that diverges immediately still leaves a loadable
        // last-good checkpoint behind.
        Checkpoint {
            model: model.clone(),
            meta: meta.clone(),
            train_state: Some(TrainState {
                epochs_completed: 0,
                optimizer: OptimizerState::new(config.optimizer, &model),
            }),
        }
        .save(&ckpt_path)?;
        write_metrics_csv(&metrics_path, &[])
            .map_err(|e| Error::Data(format!("{}: {e}", metrics_path.display())))?;
    }
    println!(
        "training {} head: {} parameters, {} train / {} validation instances",
        config.head,
        model.num_params(),
        splits.train.len(),
        splits.validation.len()
    );

    let started = Instant::now();
    let outcome = train(
        &mut model,
        &data.inventory,
        &splits,
        &config,
        resume,
        |m: &EpochMetrics, model: &ClozeModel, state: &TrainState| -> Result<(), Error> {
            let mut line = format!("epoch {:>3}  loss {:.6}", m.epoch, m.train_loss);
            if let Some(acc) = m.val_accuracy {
                line.push_str(&format!("  val_acc {acc:.4}"));
            }
            if let Some(l) = m.lambda {
                line.push_str(&format!("  lambda {l:.4}"));
            }
            line.push_str(&format!("  {:.1}s", m.seconds));
            println!("{line}");

            let ckpt = Checkpoint {
                model: model.clone(),
                meta: meta.clone(),
                train_state: Some(state.clone()),
            };
            ckpt.save(&ckpt_path)?;
            let mut row = m.clone();
            if !a.wall_clock {
                row.seconds = 0.0;
            }
            history.push(row);
            write_metrics_csv(&metrics_path, &history)
                .map_err(|e| Error::Data(format!("{}: {e}", metrics_path.display())))?;
            Ok(())
        },
    )?;
    if outcome.metrics.is_empty() {
        println!("nothing to do: already trained for {} epochs", config.epochs);
    }
    println!(
        "wrote {} and {} ({:.1}s)",
        ckpt_path.display(),
        metrics_path.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &Path) -> Result<(), Error> {
    let data = DataDir::open(&a.data)?;
    let instances = data.split(a.split)?;
    let ckpt = Checkpoint::load(&a.checkpoint, None)?;
    data.check_checkpoint(&ckpt)?;
    let mut heads = a.heads.clone();
    heads.dedup();
    let lambda = ckpt.meta.lambda.truncated_mean();
    let results = evaluate_heads(&ckpt.model, &data.inventory, &instances, &heads, lambda)?;

    create_dir(out)?;
    println!("{:<30} {:>10}", "Model", "Accuracy(%)");
    for r in &results {
        println!("{:<30} {:>10.2}", r.head.label(), 100.0 * r.accuracy);
        let path = out.join(format!("predictions_{}.csv", r.head));
        write_predictions_csv(&path, &r.predictions)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    println!("{} instances, dual lambda {lambda:.4}", instances.len());
    Ok(())
}

fn cmd_predict(a: &PredictArgs) -> Result<(), Error> {
    let data = DataDir::open(&a.data)?;
    let ckpt = Checkpoint::load(&a.checkpoint, None)?;
    data.check_checkpoint(&ckpt)?;
    let tokens: Vec<&str> = a.sentence.split_whitespace().collect();
    let masks = tokens.iter().filter(|t| **t == MASK_TOKEN).count();
    if masks != 1 {
        return Err(Error::Usage(format!(
            "sentence must contain exactly one {MASK_TOKEN}, found {masks}"
        )));
    }
    let mut passage_ids = vec![CLS];
    let mut mask_pos = 0;
    for t in &tokens {
        if *t == MASK_TOKEN {
            mask_pos = passage_ids.len();
            passage_ids.push(MASK);
        } else {
            passage_ids.extend(tokenizer::encode(&[t], &data.vocab, false));
        }
    }
    passage_ids.push(SEP);
    let instance = ClozeInstance {
        passage_ids,
        mask_pos,
        gold: 0,
        candidate_ids: data.inventory.all_ids(),
    };
    let lambda = ckpt.meta.lambda.truncated_mean();
    let dist = ckpt.model.distribution(&instance, &data.inventory, a.head, lambda)?;
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&x, &y| dist.probs[y].total_cmp(&dist.probs[x]).then(x.cmp(&y)));
    debug_assert_eq!(order[0], argmax_position(&dist));
    for &pos in order.iter().take(a.top) {
        let cand = &data.inventory.candidates()[dist.candidates[pos]];
        println!("{:.4}\t{}", dist.probs[pos], cand.surface.join(" "));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_file_parses() {
        let text = "seed = 4\n[train]\nepochs = 3\nhead = \"embed\"\n[train.lambda]\nfloor = 0.8\n[model]\nd_model = 16\n";
        let c: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(c.seed, Some(4));
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.head, HeadMode::Embed);
        assert_eq!(c.train.lambda.floor, 0.8);
        assert_eq!(c.train.lambda.alpha, 8.0);
        assert_eq!(c.model.d_model, 16);
        assert_eq!(c.model.n_layers, 2);
        assert!(toml::from_str::<RunConfig>("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let cli = Cli::try_parse_from([
            "idiom-cloze", "--seed", "9", "train", "data", "--epochs", "7", "--no-clip", "--head", "char",
        ])
        .unwrap();
        let Command::Train(a) = &cli.command else { panic!() };
        let mut file = RunConfig::default();
        file.seed = Some(1);
        file.train.epochs = 2;
        file.train.batch_size = 5;
        let c = train_config(a, &file, cli.seed);
        assert_eq!(c.seed, 9);
        assert_eq!(c.epochs, 7);
        assert_eq!(c.batch_size, 5);
        assert_eq!(c.clip_norm, None);
        assert_eq!(c.head, HeadMode::Char);
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(main_with(["idiom-cloze", "frobnicate"]), 1);
        assert_eq!(main_with(["idiom-cloze", "train"]), 1);
        assert_eq!(main_with(["idiom-cloze", "--help"]), 0);
    }
}
