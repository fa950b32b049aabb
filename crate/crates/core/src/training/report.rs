//! CSV outputs: per-epoch metrics and per-instance predictions.

use std::fs::File;
use std::path::Path;

use super::{EpochMetrics, Prediction};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Header `epoch,train_loss,val_accuracy,seconds`, plus `lambda` when any
/// row carries one.
pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> csv::Result<()> {
    let with_lambda = rows.iter().any(|r| r.lambda.is_some());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["epoch", "train_loss", "val_accuracy", "seconds"];
    if with_lambda {
        header.push("lambda");
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.epoch.to_string(),
            r.train_loss.to_string(),
            opt(r.val_accuracy),
            r.seconds.to_string(),
        ];
        if with_lambda {
            rec.push(opt(r.lambda));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> csv::Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    let has_lambda = r.headers()?.iter().any(|h| h == "lambda");
    let parse_opt = |s: &str| -> Option<f64> { (!s.is_empty()).then(|| s.parse().ok()).flatten() };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        out.push(EpochMetrics {
            epoch: field(0).parse().unwrap_or(0),
            train_loss: field(1).parse().unwrap_or(f64::NAN),
            val_accuracy: parse_opt(field(2)),
            seconds: field(3).parse().unwrap_or(0.0),
            lambda: if has_lambda { parse_opt(field(4)) } else { None },
        });
    }
    Ok(out)
}

/// `instance_id,gold,predicted,prob_gold`
pub fn write_predictions_csv(path: &Path, rows: &[Prediction]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    for p in rows {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
