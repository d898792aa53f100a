//! Run directory layout:
//!
//! ```text
//! metrics.jsonl                     one IterationMetrics object per line
//! summary.csv                       one row per iteration
//! outcome.json                      initial/final test accuracy, split indices
//! checkpoints/iter_<t>/h0.json      view-0 model after iteration t
//! checkpoints/iter_<t>/h1.json      view-1 head trained in iteration t
//! confident/iter_<t>_view<v>.csv    confident sets (dataset index, label)
//! predictions/h0_initial.csv        per-example probabilities, full dataset
//! predictions/h0.csv, h1.csv        same for the final models
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{CoTrainOutcome, IterationMetrics, ViewHypothesis, ViewZeroModel};
use crate::data::{ConfidentSet, Dataset, ViewMatrix};
use crate::{Error, Result};

/// Paths of the main files of a written run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub outcome: PathBuf,
    pub checkpoints: PathBuf,
    pub confident: PathBuf,
    pub predictions: PathBuf,
}

#[derive(Serialize)]
struct OutcomeRecord<'a> {
    initial_test_accuracy: Option<f64>,
    final_h0_test_accuracy: Option<f64>,
    final_h1_test_accuracy: Option<f64>,
    pool_indices: &'a [usize],
    val_indices: &'a [usize],
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        format: "csv",
        message: e.to_string(),
    }
}

fn write_rows(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn summary_row(m: &IterationMetrics) -> Vec<String> {
    let acc = |v: &super::ViewMetrics| opt(v.confident.as_ref().map(|c| c.accuracy));
    let tvd = |v: &super::ViewMetrics| opt(v.confident.as_ref().map(|c| c.balance_tvd));
    let noise = |v: &super::ViewMetrics| opt(v.confident.as_ref().and_then(|c| c.total_noise));
    vec![
        m.iteration.to_string(),
        m.coverage.to_string(),
        m.view0.confident_size.to_string(),
        acc(&m.view0),
        tvd(&m.view0),
        noise(&m.view0),
        opt(m.view0.test_accuracy),
        m.view1.confident_size.to_string(),
        acc(&m.view1),
        tvd(&m.view1),
        noise(&m.view1),
        opt(m.view1.test_accuracy),
    ]
}

const SUMMARY_HEADER: [&str; 12] = [
    "iteration",
    "coverage",
    "view0_confident_size",
    "view0_confident_accuracy",
    "view0_balance_tvd",
    "view0_total_noise",
    "h0_test_accuracy",
    "view1_confident_size",
    "view1_confident_accuracy",
    "view1_balance_tvd",
    "view1_total_noise",
    "h1_test_accuracy",
];

fn write_confident(path: &Path, set: &ConfidentSet, pool_indices: &[usize]) -> Result<()> {
    write_rows(
        path,
        &["index".into(), "pseudo_label".into()],
        set.entries()
            .iter()
            .map(|&(i, y)| vec![pool_indices[i].to_string(), y.to_string()]),
    )
}

/// Per-example probabilities with the argmax and, if known, the gold label.
pub fn write_predictions(path: &Path, probs: &ViewMatrix, gold: Option<&[usize]>) -> Result<()> {
    let mut header = vec!["index".to_string(), "predicted".into(), "gold".into()];
    header.extend((0..probs.cols()).map(|j| format!("p{j}")));
    let predicted = probs.row_argmax();
    write_rows(
        path,
        &header,
        probs.row_iter().enumerate().map(|(n, row)| {
            let mut r = vec![
                n.to_string(),
                predicted[n].to_string(),
                gold.map(|g| g[n].to_string()).unwrap_or_default(),
            ];
            r.extend(row.iter().map(f64::to_string));
            r
        }),
    )
}

/// Write every artifact of `outcome` under `dir`. `dataset` is the one the
/// run was trained on; predictions are dumped for all of its examples.
pub fn write_run(
    dir: impl AsRef<Path>,
    outcome: &CoTrainOutcome,
    initial_h0: &ViewZeroModel,
    dataset: &Dataset,
) -> Result<RunFiles> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    let files = RunFiles {
        metrics: dir.join("metrics.jsonl"),
        summary: dir.join("summary.csv"),
        outcome: dir.join("outcome.json"),
        checkpoints: dir.join("checkpoints"),
        confident: dir.join("confident"),
        predictions: dir.join("predictions"),
    };

    let mut lines = String::new();
    for m in &outcome.history {
        lines.push_str(&serde_json::to_string(m)?);
        lines.push('\n');
    }
    write_text(&files.metrics, &lines)?;
    write_rows(
        &files.summary,
        &SUMMARY_HEADER.map(String::from),
        outcome.history.iter().map(summary_row),
    )?;

    create_dir(&files.checkpoints)?;
    create_dir(&files.confident)?;
    for (t, state) in outcome.iterations.iter().enumerate() {
        let iter_dir = files.checkpoints.join(format!("iter_{t:03}"));
        create_dir(&iter_dir)?;
        write_json(&iter_dir.join("h0.json"), &state.h0)?;
        write_json(&iter_dir.join("h1.json"), &state.h1)?;
        for (v, set) in [(0, &state.confident_view0), (1, &state.confident_view1)] {
            write_confident(
                &files.confident.join(format!("iter_{t:03}_view{v}.csv")),
                set,
                &outcome.pool_indices,
            )?;
        }
    }

    create_dir(&files.predictions)?;
    let gold = dataset.gold();
    write_predictions(
        &files.predictions.join("h0_initial.csv"),
        &initial_h0.predict_proba(dataset.view0())?,
        gold,
    )?;
    write_predictions(
        &files.predictions.join("h0.csv"),
        &outcome.h0.predict_proba(dataset.view0())?,
        gold,
    )?;
    write_predictions(
        &files.predictions.join("h1.csv"),
        &outcome.h1.predict_proba(dataset.view1())?,
        gold,
    )?;

    let last = outcome.history.last();
    write_json(
        &files.outcome,
        &OutcomeRecord {
            initial_test_accuracy: outcome.initial_test_accuracy,
            final_h0_test_accuracy: last.and_then(|m| m.view0.test_accuracy),
            final_h1_test_accuracy: last.and_then(|m| m.view1.test_accuracy),
            pool_indices: &outcome.pool_indices,
            val_indices: &outcome.val_indices,
        },
    )?;
    Ok(files)
}
