//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. An optional argument selects criteria whose
//! number or name contains it, e.g. `cargo test --test acceptance -- 7`.

use std::panic;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use idiom_cloze::corpus::{
    parse_bio_corpus, prepare_corpus, split_dataset, PreparedCorpus, SplitFractions,
};
use idiom_cloze::encoder::{Encoder, EncoderConfig, HiddenStates};
use idiom_cloze::heads::{
    interpolate, sample_lambda, score_char_sequence, score_context_pooling, score_embedding,
    CandidateDistribution, HeadMode, IdiomEmbeddingTable, LambdaPolicy, MatchHeadParams,
};
use idiom_cloze::model::ClozeModel;
use idiom_cloze::synth::{generate, SynthConfig};
use idiom_cloze::tensor::Matrix;
use idiom_cloze::tokenizer::{decode, PAD};
use idiom_cloze::training::{
    evaluate_heads, finite_diff_check, train, EpochMetrics, Objective, OptimizerKind, ParamScope,
    TrainConfig, TrainError, TrainState, ZERO_GRADIENT,
};

const ORACLE_REL_TOL: f64 = 1e-9;
const ORACLE_CASES: usize = 200;
const ORACLE_BUDGET: Duration = Duration::from_secs(5);
const NORM_TOL: f64 = 1e-6;
const NORM_CASES: usize = 1000;
const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-4;
const GRAD_ZERO: f64 = 1e-8;
const GRAD_SAMPLES: usize = 400;
const GRAD_HEAD_SAMPLES: usize = 100;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const LAMBDA_DRAWS: usize = 10_000;
const LAMBDA_MEAN_TOL: f64 = 0.01;
const E2E_LOSS_RATIO: f64 = 0.1;
const E2E_EMBED_ACC: f64 = 0.90;
const E2E_DUAL_MARGIN: f64 = 0.02;
const E2E_BUDGET: Duration = Duration::from_secs(600);
const PAD_TOL: f64 = 1e-9;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
}

fn random_subset(rng: &mut ChaCha8Rng, t: usize, k: usize) -> Vec<usize> {
    index::sample(rng, t, k).into_vec()
}

fn oracle_softmax(logits: &[f64]) -> Vec<f64> {
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    logits.iter().map(|l| l.exp() / z).collect()
}

fn max_rel(dist: &CandidateDistribution, oracle: &[f64]) -> f64 {
    dist.probs.iter().zip(oracle).map(|(g, w)| rel_err(*g, *w)).fold(0.0, f64::max)
}

fn oracle_embedding() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..ORACLE_CASES {
        let d = rng.random_range(1..=8);
        let n = rng.random_range(2..=10);
        let t = rng.random_range(1..=8);
        let k = rng.random_range(1..=t.min(6));
        let h = HiddenStates(random_matrix(&mut rng, n, d));
        let emb = IdiomEmbeddingTable(random_matrix(&mut rng, t, d));
        let head = MatchHeadParams {
            weight: random_matrix(&mut rng, 1, d),
            bias: random_matrix(&mut rng, 1, 1),
        };
        let b = rng.random_range(0..n);
        let cands = random_subset(&mut rng, t, k);
        let dist = score_embedding(&h, b, &emb, &head, &cands).unwrap();
        let mut logits = Vec::new();
        for &c in &cands {
            let mut s = head.bias.get(0, 0);
            for j in 0..d {
                s += head.weight.get(0, j) * emb.0.get(c, j) * h.0.get(b, j);
            }
            logits.push(s);
        }
        worst = worst.max(max_rel(&dist, &oracle_softmax(&logits)));
    }
    let elapsed = started.elapsed();
    outcome(
        worst <= ORACLE_REL_TOL && elapsed < ORACLE_BUDGET,
        format!("max rel err {worst:.2e} (tol {ORACLE_REL_TOL:e}) over {ORACLE_CASES} cases in {elapsed:.2?}"),
    )
}

fn oracle_pooling() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..ORACLE_CASES {
        let d = rng.random_range(1..=8);
        let n = rng.random_range(2..=10);
        let t = rng.random_range(1..=8);
        let k = rng.random_range(1..=t.min(6));
        let h = HiddenStates(random_matrix(&mut rng, n, d));
        let emb = IdiomEmbeddingTable(random_matrix(&mut rng, t, d));
        let b = rng.random_range(0..n);
        let mut valid: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        valid[b] = true;
        let cands = random_subset(&mut rng, t, k);
        let dist = score_context_pooling(&h, b, &emb, &cands, &valid).unwrap();
        let mut logits = Vec::new();
        for &c in &cands {
            let mut at_mask = 0.0;
            for j in 0..d {
                at_mask += emb.0.get(c, j) * h.0.get(b, j);
            }
            let mut best = f64::NEG_INFINITY;
            for i in 0..n {
                if !valid[i] {
                    continue;
                }
                let mut s = 0.0;
                for j in 0..d {
                    s += emb.0.get(c, j) * h.0.get(i, j);
                }
                best = best.max(s);
            }
            logits.push(at_mask + best);
        }
        worst = worst.max(max_rel(&dist, &oracle_softmax(&logits)));
    }
    let elapsed = started.elapsed();
    outcome(
        worst <= ORACLE_REL_TOL && elapsed < ORACLE_BUDGET,
        format!("max rel err {worst:.2e} (tol {ORACLE_REL_TOL:e}) over {ORACLE_CASES} cases in {elapsed:.2?}"),
    )
}

fn synthetic(idioms: usize, instances: usize, seed: u64) -> PreparedCorpus {
    let sentences = generate(&SynthConfig { idioms, instances, templates: 4, seed }).unwrap();
    prepare_corpus(&sentences, 1).unwrap()
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let prep = synthetic(6, 30, 3);
    let config = EncoderConfig {
        vocab_size: prep.vocab.len(),
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        max_len: 32,
    };
    let mut worst = 0.0f64;
    let mut negative = false;
    let mut record = |dist: &CandidateDistribution| {
        let sum: f64 = dist.probs.iter().sum();
        worst = worst.max((sum - 1.0).abs());
        negative |= dist.probs.iter().any(|&p| p < 0.0);
    };
    let mut previous: Option<CandidateDistribution> = None;
    for case in 0..NORM_CASES {
        let scale = [0.1, 1.0, 10.0, 50.0][(case / 4) % 4];
        let dist = match case % 4 {
            0 | 1 => {
                let d = rng.random_range(1..=8);
                let n = rng.random_range(2..=10);
                let t = rng.random_range(1..=12);
                let k = rng.random_range(1..=t);
                let mut h = random_matrix(&mut rng, n, d);
                h.scale(scale);
                let h = HiddenStates(h);
                let emb = IdiomEmbeddingTable(random_matrix(&mut rng, t, d));
                let b = rng.random_range(0..n);
                let cands = random_subset(&mut rng, t, k);
                if case % 4 == 0 {
                    let head = MatchHeadParams {
                        weight: random_matrix(&mut rng, 1, d),
                        bias: random_matrix(&mut rng, 1, 1),
                    };
                    score_embedding(&h, b, &emb, &head, &cands).unwrap()
                } else {
                    score_context_pooling(&h, b, &emb, &cands, &vec![true; n]).unwrap()
                }
            }
            2 => {
                let mut model = ClozeModel::new(config, &prep.inventory, case as u64).unwrap();
                model.cls.weight.scale(scale * 20.0);
                let mut inst = prep.instances[rng.random_range(0..prep.instances.len())].clone();
                let k = rng.random_range(1..=prep.inventory.len());
                inst.candidate_ids = random_subset(&mut rng, prep.inventory.len(), k);
                inst.candidate_ids.sort_unstable();
                if !inst.candidate_ids.contains(&inst.gold) {
                    inst.candidate_ids[0] = inst.gold;
                    inst.candidate_ids.sort_unstable();
                }
                score_char_sequence(&inst, &prep.inventory, &model.encoder, &model.cls).unwrap()
            }
            _ => {
                let p_char = previous.take().unwrap();
                let logits: Vec<f64> = (0..p_char.len()).map(|_| rng.random_range(-scale..scale)).collect();
                let p_embed = CandidateDistribution::from_logits(p_char.candidates.clone(), &logits);
                interpolate(&p_char, &p_embed, rng.random_range(0.0..=1.0)).unwrap()
            }
        };
        record(&dist);
        previous = Some(dist);
    }
    outcome(
        worst <= NORM_TOL && !negative,
        format!("max |sum - 1| {worst:.2e} (tol {NORM_TOL:e}) over {NORM_CASES} distributions"),
    )
}

fn gradient_check() -> Outcome {
    assert_eq!(ZERO_GRADIENT, GRAD_ZERO, "absolute fallback threshold");
    let started = Instant::now();
    let prep = synthetic(5, 20, 4);
    let config = EncoderConfig::desk_scale(prep.vocab.len());
    let model = ClozeModel::new(config, &prep.inventory, 4).unwrap();
    let instance = &prep.instances[2];
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, mode) in HeadMode::ALL.into_iter().enumerate() {
        let lambda = if mode == HeadMode::Dual { LambdaPolicy::default().truncated_mean() } else { 1.0 };
        let objective = Objective { mode, lambda };
        let mut worst = 0.0f64;
        for (scope, samples) in [(ParamScope::All, GRAD_SAMPLES), (ParamScope::HeadsOnly, GRAD_HEAD_SAMPLES)] {
            let report = finite_diff_check(
                &model, &prep.inventory, instance, objective, scope, GRAD_EPS, samples, 40 + i as u64,
            )
            .unwrap();
            worst = worst.max(report.max_rel_error);
        }
        ok &= worst <= GRAD_REL_TOL;
        parts.push(format!("{mode} {worst:.1e}"));
    }
    let elapsed = started.elapsed();
    outcome(
        ok && elapsed < GRAD_BUDGET,
        format!(
            "L={} d={}: {} (tol {GRAD_REL_TOL:e}, eps {GRAD_EPS:e}) in {elapsed:.1?}",
            config.n_layers,
            config.d_model,
            parts.join(", ")
        ),
    )
}

fn bio_fidelity() -> Outcome {
    let text = "Anyway\tO\n,\tO\nthanks\tO\nMKM\tO\nand\tO\nkeep\tB-IDIOM\nup\tI-IDIOM\nthe\tI-IDIOM\ngood\tI-IDIOM\nwork\tI-IDIOM\n!\tO\n";
    let prep = prepare_corpus(&parse_bio_corpus(text).unwrap(), 1).unwrap();
    let inst = &prep.instances[0];
    let candidate = prep.inventory.candidates()[inst.gold].surface.join(" ");
    let passage = decode(&inst.passage_ids, &prep.vocab).unwrap().join(" ");
    let want = "[CLS] Anyway , thanks MKM and [MASK] ! [SEP]";
    outcome(
        candidate == "keep up the good work" && passage == want,
        format!("candidate {candidate:?}, passage {passage:?}"),
    )
}

fn lambda_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let policy = LambdaPolicy::default();
    let draws: Vec<f64> = (0..LAMBDA_DRAWS).map(|_| sample_lambda(&policy, &mut rng).unwrap()).collect();
    let in_range = draws.iter().all(|l| (0.7..=1.0).contains(l));
    let uniform = LambdaPolicy { alpha: 1.0, beta: 1.0, ..policy };
    let mean = (0..LAMBDA_DRAWS).map(|_| sample_lambda(&uniform, &mut rng).unwrap()).sum::<f64>()
        / LAMBDA_DRAWS as f64;
    outcome(
        in_range && (mean - 0.85).abs() <= LAMBDA_MEAN_TOL,
        format!("{LAMBDA_DRAWS} draws in [0.7, 1]: {in_range}; Beta(1,1) mean {mean:.4} (want 0.85 ± {LAMBDA_MEAN_TOL})"),
    )
}

fn no_callback(_: &EpochMetrics, _: &ClozeModel, _: &TrainState) -> Result<(), TrainError> {
    Ok(())
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let prep = synthetic(20, 2500, 7);
    let splits = split_dataset(prep.instances.clone(), SplitFractions::new(0.8, 0.04, 0.16), 7).unwrap();
    assert_eq!((splits.train.len(), splits.test.len()), (2000, 400));
    let config = EncoderConfig::desk_scale(prep.vocab.len());
    let base = TrainConfig {
        epochs: 30,
        batch_size: 32,
        learning_rate: 1e-3,
        seed: 7,
        clip_norm: Some(1.0),
        optimizer: OptimizerKind::Adam,
        ..Default::default()
    };
    let lambda = base.lambda.truncated_mean();
    let run = |head: HeadMode, train_candidates: Option<usize>| {
        let mut model = ClozeModel::new(config, &prep.inventory, 7).unwrap();
        let cfg = TrainConfig { head, train_candidates, ..base.clone() };
        let out = train(&mut model, &prep.inventory, &splits, &cfg, None, no_callback).unwrap();
        let first = out.metrics.first().unwrap().train_loss;
        let last = out.metrics.last().unwrap().train_loss;
        (model, first, last)
    };

    let (embed_model, e_first, e_last) = run(HeadMode::Embed, None);
    let embed_only = evaluate_heads(&embed_model, &prep.inventory, &splits.test, &[HeadMode::Embed], lambda)
        .unwrap()[0]
        .accuracy;
    let (dual_model, d_first, d_last) = run(HeadMode::Dual, Some(5));
    let heads = [HeadMode::Char, HeadMode::Embed, HeadMode::Dual];
    let evals = evaluate_heads(&dual_model, &prep.inventory, &splits.test, &heads, lambda).unwrap();
    let (char_acc, embed_acc, dual_acc) = (evals[0].accuracy, evals[1].accuracy, evals[2].accuracy);
    let elapsed = started.elapsed();

    let loss_ok = e_last < E2E_LOSS_RATIO * e_first && d_last < E2E_LOSS_RATIO * d_first;
    let embed_ok = embed_only >= E2E_EMBED_ACC && embed_acc >= E2E_EMBED_ACC;
    let best_single = char_acc.max(embed_acc).max(embed_only);
    let dual_ok = dual_acc >= best_single - E2E_DUAL_MARGIN;
    outcome(
        loss_ok && embed_ok && dual_ok && elapsed < E2E_BUDGET,
        format!(
            "(a) loss {e_first:.3}->{e_last:.2e} embed, {d_first:.3}->{d_last:.2e} dual; \
             (b) embed acc {embed_only:.4} alone, {embed_acc:.4} in dual; \
             (c) dual {dual_acc:.4} vs char {char_acc:.4}; {elapsed:.0?}"
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_idiom-cloze"))
        .current_dir(dir)
        .args(args)
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "idiom-cloze {args:?} failed");
}

fn pipeline(dir: &Path) {
    run_cli(dir, &["--seed", "13", "--out", "raw", "synth", "--idioms", "5", "--instances", "120", "--templates", "3"]);
    run_cli(dir, &["--seed", "13", "--out", "data", "preprocess", "raw/corpus.bio"]);
    run_cli(
        dir,
        &["--seed", "13", "--out", "run", "train", "data", "--epochs", "3", "--batch-size", "8", "--head", "dual", "--d-model", "16", "--heads", "2", "--d-ff", "32"],
    );
    run_cli(dir, &["--out", "eval", "eval", "run/model.ckpt", "--data", "data"]);
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    let files = [
        "data/vocab.txt",
        "data/inventory.tsv",
        "data/train.tsv",
        "data/test.tsv",
        "run/metrics.csv",
        "run/model.ckpt",
        "eval/predictions_dual.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical across two seeded runs", files.len())
        } else {
            format!("differing: {differing:?}")
        },
    )
}

fn padding_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let config = EncoderConfig::desk_scale(50);
    let encoder = Encoder::new(config, &mut rng).unwrap();
    let emb = IdiomEmbeddingTable(random_matrix(&mut rng, 6, config.d_model));
    let cands: Vec<usize> = (0..6).collect();
    let mut enc_worst = 0.0f64;
    let mut pool_worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(3..=20);
        let pads = rng.random_range(1..=10);
        let ids: Vec<u32> = (0..n).map(|_| rng.random_range(5..50)).collect();
        let mut padded = ids.clone();
        padded.extend(std::iter::repeat_n(PAD, pads));
        let valid = vec![true; n];
        let mut padded_valid = valid.clone();
        padded_valid.extend(std::iter::repeat_n(false, pads));
        let h = encoder.forward(&ids, &valid).unwrap();
        let hp = encoder.forward(&padded, &padded_valid).unwrap();
        for i in 0..n {
            for (x, y) in h.row(i).iter().zip(hp.row(i)) {
                enc_worst = enc_worst.max((x - y).abs());
            }
        }
        let b = rng.random_range(0..n);
        let p = score_context_pooling(&h, b, &emb, &cands, &valid).unwrap();
        let pp = score_context_pooling(&hp, b, &emb, &cands, &padded_valid).unwrap();
        for (x, y) in p.probs.iter().zip(&pp.probs) {
            pool_worst = pool_worst.max((x - y).abs());
        }
    }
    outcome(
        enc_worst <= PAD_TOL && pool_worst <= PAD_TOL,
        format!("max encoder diff {enc_worst:.1e}, max pooling diff {pool_worst:.1e} (tol {PAD_TOL:e})"),
    )
}

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence, embedding head", oracle_embedding),
        ("oracle equivalence, pooling head", oracle_pooling),
        ("normalization", normalization),
        ("gradient check", gradient_check),
        ("BIO fidelity", bio_fidelity),
        ("lambda contract", lambda_contract),
        ("end-to-end learning", end_to_end),
        ("determinism", determinism),
        ("padding invariance", padding_invariance),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let number = (i + 1).to_string();
        if let Some(f) = &filter {
            if *f != number && !name.contains(f.as_str()) {
                continue;
            }
        }
        ran += 1;
        let started = Instant::now();
        let result = panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let tag = if result.passed { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] criterion {number}: {name} ({:.1}s) {}",
            started.elapsed().as_secs_f64(),
            result.detail
        );
        failed += usize::from(!result.passed);
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
