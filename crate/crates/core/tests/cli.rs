use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idiom-cloze"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line of a failing invocation.
fn fails(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = cli(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "stderr should be one line: {stderr:?}");
    assert!(lines[0].starts_with("error["), "{stderr:?}");
    (out.status.code().unwrap(), lines[0].to_string())
}

const TINY: [&str; 6] = ["--d-model", "16", "--heads", "2", "--d-ff", "32"];

fn prepared(idioms: &str, instances: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["--seed", "3", "--out", "raw", "synth", "--idioms", idioms, "--instances", instances, "--templates", "3"]);
    ok(p, &["--seed", "3", "--out", "data", "preprocess", "raw/corpus.bio"]);
    dir
}

fn train_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["--seed", "3", "--out", out, "train", "data", "--batch-size", "8"];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    args
}

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn preprocess_reports_table_shape() {
    let dir = prepared("20", "2000");
    let stdout = ok(dir.path(), &["--seed", "3", "--out", "again", "preprocess", "raw/corpus.bio"]);
    assert!(stdout.contains("N (instances)          2000"), "{stdout}");
    assert!(stdout.contains("T (candidates)         20"), "{stdout}");
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("data/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["instances"], 2000);
    assert_eq!(stats["candidates"], 20);
    assert_eq!(stats["train"].as_u64().unwrap() + stats["validation"].as_u64().unwrap() + stats["test"].as_u64().unwrap(), 2000);
    for f in ["vocab.txt", "inventory.tsv", "train.tsv", "validation.tsv", "test.tsv", "stats.json"] {
        assert_eq!(
            fs::read(dir.path().join("data").join(f)).unwrap(),
            fs::read(dir.path().join("again").join(f)).unwrap(),
            "{f} differs on rerun"
        );
    }
}

#[test]
fn preprocess_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("empty.bio"), "").unwrap();
    let (code, msg) = fails(p, &["preprocess", "empty.bio"]);
    assert_eq!(code, 2);
    assert!(msg.contains("no instances produced"), "{msg}");

    fs::write(p.join("plain.bio"), "a\tO\nb\tO\n").unwrap();
    let (code, msg) = fails(p, &["preprocess", "plain.bio"]);
    assert_eq!(code, 2);
    assert!(msg.contains("no instances produced"), "{msg}");

    fs::write(p.join("bad.bio"), "a\tO\nb\tB-IDIOM\n\nc\tX-IDIOM\n").unwrap();
    let (code, msg) = fails(p, &["preprocess", "bad.bio"]);
    assert_eq!(code, 2);
    assert!(msg.contains("line 4"), "{msg}");

    let (code, _) = fails(p, &["preprocess", "missing.bio"]);
    assert_eq!(code, 2);
}

#[test]
fn train_writes_one_row_per_epoch() {
    let dir = prepared("4", "80");
    let p = dir.path();
    let stdout = ok(p, &train_args("embed", &["--epochs", "10", "--head", "embed"]));
    assert_eq!(stdout.matches("epoch ").count(), 10);
    let rows = csv_rows(&p.join("embed/metrics.csv"));
    assert_eq!(rows[0], "epoch,train_loss,val_accuracy,seconds");
    assert_eq!(rows.len(), 11);
    assert!(rows[10].starts_with("10,"));
    assert!(rows[1..].iter().all(|r| r.ends_with(",0")), "seconds default to 0");

    ok(p, &train_args("dual", &["--epochs", "2", "--head", "dual"]));
    let rows = csv_rows(&p.join("dual/metrics.csv"));
    assert_eq!(rows[0], "epoch,train_loss,val_accuracy,seconds,lambda");
    let lambda: f64 = rows[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!((0.7..=1.0).contains(&lambda));

    ok(p, &train_args("timed", &["--epochs", "1", "--head", "embed", "--wall-clock"]));
    let rows = csv_rows(&p.join("timed/metrics.csv"));
    let seconds: f64 = rows[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!(seconds > 0.0);
}

#[test]
fn resume_continues_numbering_and_matches_straight_run() {
    let dir = prepared("4", "80");
    let p = dir.path();
    ok(p, &train_args("straight", &["--epochs", "4", "--head", "dual"]));
    ok(p, &train_args("split", &["--epochs", "2", "--head", "dual"]));
    let stdout = ok(p, &train_args("split", &["--epochs", "4", "--head", "dual", "--resume", "split/model.ckpt"]));
    assert!(stdout.contains("resuming after epoch 2"));
    assert!(stdout.contains("epoch   3") && stdout.contains("epoch   4"));
    assert!(!stdout.contains("epoch   1"));
    assert_eq!(
        fs::read(p.join("straight/metrics.csv")).unwrap(),
        fs::read(p.join("split/metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(p.join("straight/model.ckpt")).unwrap(),
        fs::read(p.join("split/model.ckpt")).unwrap()
    );
}

#[test]
fn eval_table_predictions_and_errors() {
    let dir = prepared("4", "80");
    let p = dir.path();
    ok(p, &train_args("run", &["--epochs", "2", "--head", "dual"]));
    let first = ok(p, &["--out", "e1", "eval", "run/model.ckpt", "--data", "data"]);
    let second = ok(p, &["--out", "e2", "eval", "run/model.ckpt", "--data", "data"]);
    assert_eq!(first, second);
    for label in ["Character-sequence", "Idiom-embedding", "Context-aware pooling", "Dual interpolation"] {
        assert_eq!(first.lines().filter(|l| l.starts_with(label)).count(), 1, "{first}");
    }
    let test_instances = fs::read_to_string(p.join("data/test.tsv")).unwrap().lines().count() - 1;
    for head in ["char", "embed", "pooling", "dual"] {
        let name = format!("predictions_{head}.csv");
        let rows = csv_rows(&p.join("e1").join(&name));
        assert_eq!(rows[0], "instance_id,gold,predicted,prob_gold");
        assert_eq!(rows.len() - 1, test_instances);
        assert_eq!(fs::read(p.join("e1").join(&name)).unwrap(), fs::read(p.join("e2").join(&name)).unwrap());
    }

    let only = ok(p, &["--out", "e3", "eval", "run/model.ckpt", "--data", "data", "--heads", "embed", "--split", "validation"]);
    assert!(only.contains("Idiom-embedding") && !only.contains("Dual interpolation"));

    let (code, _) = fails(p, &["eval", "run/model.ckpt", "--data", "data", "--split", "dev"]);
    assert_eq!(code, 1);
    fs::remove_file(p.join("data/validation.tsv")).unwrap();
    let (code, msg) = fails(p, &["eval", "run/model.ckpt", "--data", "data", "--split", "validation"]);
    assert_eq!(code, 2);
    assert!(msg.contains("not found"), "{msg}");
    let (code, _) = fails(p, &["eval", "missing.ckpt", "--data", "data"]);
    assert_eq!(code, 2);
}

#[test]
fn mismatches_fail_loudly() {
    let dir = prepared("4", "80");
    let p = dir.path();
    ok(p, &train_args("run", &["--epochs", "1", "--head", "embed"]));

    ok(p, &["--seed", "4", "--out", "raw2", "synth", "--idioms", "5", "--instances", "50"]);
    ok(p, &["--out", "data2", "preprocess", "raw2/corpus.bio"]);
    let (code, msg) = fails(p, &["eval", "run/model.ckpt", "--data", "data2"]);
    assert_eq!(code, 2);
    assert!(msg.contains("mismatch"), "{msg}");

    let (code, msg) = fails(p, &["--out", "run", "train", "data", "--epochs", "2", "--resume", "run/model.ckpt", "--d-model", "32"]);
    assert_eq!(code, 2);
    assert!(msg.contains("config mismatch"), "{msg}");

    let mut vocab = fs::read_to_string(p.join("data/vocab.txt")).unwrap();
    vocab.push_str("extra\n");
    fs::write(p.join("data/vocab.txt"), vocab).unwrap();
    let mut args = train_args("run2", &["--epochs", "1"]);
    args.push("--head");
    args.push("embed");
    let (code, msg) = fails(p, &args);
    assert_eq!(code, 2);
    assert!(msg.contains("fingerprint mismatch"), "{msg}");

    let mut bytes = fs::read(p.join("run/model.ckpt")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    fs::write(p.join("run/model.ckpt"), bytes).unwrap();
    let (code, msg) = fails(p, &["eval", "run/model.ckpt", "--data", "data2"]);
    assert_eq!(code, 2);
    assert!(msg.starts_with("error[checkpoint]"), "{msg}");
}

#[test]
fn divergence_exits_3_and_keeps_last_good_checkpoint() {
    let dir = prepared("4", "80");
    let p = dir.path();
    let mut args = vec!["--seed", "3", "--out", "run", "train", "data", "--batch-size", "2", "--epochs", "3"];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(&["--head", "embed", "--optimizer", "sgd", "--no-clip", "--lr", "1e300"]);
    let (code, msg) = fails(p, &args);
    assert_eq!(code, 3);
    assert!(msg.starts_with("error[divergence]"), "{msg}");
    ok(p, &["--out", "eval", "eval", "run/model.ckpt", "--data", "data", "--heads", "embed"]);
}

#[test]
fn config_file_with_flag_override() {
    let dir = prepared("4", "80");
    let p = dir.path();
    fs::write(
        p.join("run.toml"),
        "seed = 3\n[model]\nd_model = 16\nn_heads = 2\nd_ff = 32\n[train]\nepochs = 2\nbatch_size = 8\nhead = \"embed\"\n",
    )
    .unwrap();
    ok(p, &["--config", "run.toml", "--out", "a", "train", "data"]);
    assert_eq!(csv_rows(&p.join("a/metrics.csv")).len(), 3);
    ok(p, &["--config", "run.toml", "--out", "b", "train", "data", "--epochs", "3"]);
    assert_eq!(csv_rows(&p.join("b/metrics.csv")).len(), 4);

    fs::write(p.join("bad.toml"), "[train]\nepoch = 2\n").unwrap();
    let (code, _) = fails(p, &["--config", "bad.toml", "train", "data"]);
    assert_eq!(code, 1);
}

#[test]
fn predict_ranks_candidates() {
    let dir = prepared("4", "80");
    let p = dir.path();
    ok(p, &train_args("run", &["--epochs", "1", "--head", "dual"]));
    let corpus = fs::read_to_string(p.join("raw/corpus.bio")).unwrap();
    let first: Vec<&str> = corpus
        .split("\n\n")
        .next()
        .unwrap()
        .lines()
        .filter(|l| l.ends_with("\tO"))
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    let sentence = format!("{} [MASK] {}", first[0], first[1..].join(" "));
    let stdout = ok(p, &["predict", "run/model.ckpt", "--data", "data", "--sentence", &sentence, "--top", "3"]);
    let probs: Vec<f64> = stdout.lines().map(|l| l.split('\t').next().unwrap().parse().unwrap()).collect();
    assert_eq!(probs.len(), 3);
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));

    let (code, _) = fails(p, &["predict", "run/model.ckpt", "--data", "data", "--sentence", "no blank here"]);
    assert_eq!(code, 1);
}

#[test]
fn synth_rejects_single_idiom() {
    let dir = tempfile::tempdir().unwrap();
    let (code, msg) = fails(dir.path(), &["synth", "--idioms", "1"]);
    assert_eq!(code, 1);
    assert!(msg.contains("at least 2"), "{msg}");
}
