//! The `run`, `simulate` and `eval` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context};
use cotrain_core::cotrain::{
    classification_report, cotrain_run, write_predictions, write_run, ClassificationReport,
    CoTrainOutcome, RunFiles, ViewHypothesis, ViewZeroModel,
};
use cotrain_core::data::{load_dataset, Dataset, MatrixFormat, View0, ViewMatrix};
use cotrain_core::labelmodel::cbu_init;
use cotrain_core::learners::HeadClassifier;
use cotrain_core::synth::{generate, write_corpus, SynthConfig};
use serde::Serialize;

use crate::config::{parse_json, read_json_file, AccessMode, DatasetSource, RunConfigFile};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const SYNTH_CONFIG: &str = "synth_config.json";
pub const EVAL_REPORT: &str = "eval.json";
pub const EVAL_PREDICTIONS: &str = "predictions.csv";

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Command-line overrides of a run config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

#[derive(Debug)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub config: RunConfigFile,
    pub outcome: CoTrainOutcome,
    pub files: RunFiles,
}

struct RunData {
    dataset: Dataset,
    test: Option<Dataset>,
    content_free: Option<Vec<Vec<Vec<f64>>>>,
}

fn load_run_data(source: &DatasetSource) -> anyhow::Result<RunData> {
    Ok(match source {
        DatasetSource::Synth(s) => {
            let corpus = generate(s)?;
            RunData {
                dataset: corpus.train,
                test: corpus.test,
                content_free: Some(corpus.content_free),
            }
        }
        DatasetSource::Manifest { path, test } => {
            let loaded = load_dataset(path)
                .with_context(|| format!("cannot load dataset {}", path.display()))?;
            let test = test
                .as_ref()
                .map(|p| {
                    load_dataset(p)
                        .map(|d| d.dataset)
                        .with_context(|| format!("cannot load test set {}", p.display()))
                })
                .transpose()?;
            RunData {
                dataset: loaded.dataset,
                test,
                content_free: loaded.content_free,
            }
        }
    })
}

fn initial_view_zero(config: &RunConfigFile, data: &RunData) -> anyhow::Result<ViewZeroModel> {
    if let Some(path) = &config.init_checkpoint {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        return parse_json(&text).with_context(|| format!("invalid checkpoint {}", path.display()));
    }
    let prompts = match data.dataset.view0() {
        View0::Prompts(t) => t,
        View0::Features(_) => bail!(
            "field `init_checkpoint`: view 0 is a feature matrix, so an initial model must be given"
        ),
    };
    Ok(match config.mode {
        AccessMode::PartialAccess => {
            let content_free = data.content_free.as_ref().ok_or_else(|| {
                anyhow!("partial access needs content-free outputs in the dataset manifest")
            })?;
            ViewZeroModel::LabelModel(cbu_init(
                content_free,
                prompts.num_labels(),
                prompts.vocab_size(),
            )?)
        }
        AccessMode::FullAccessGeneric => ViewZeroModel::prompt_vote_head(prompts)?,
    })
}

/// Load, validate and execute a run config.
///
/// Nothing is written before the config passes validation. The resolved
/// snapshot goes to the output directory before training starts.
pub fn cmd_run(config_path: &Path, options: &RunOptions) -> anyhow::Result<RunReport> {
    let mut config = RunConfigFile::load(config_path)?;
    if let Some(seed) = options.seed {
        config.cotrain.seed = seed;
    }
    if let Some(out) = &options.out {
        config.output_dir = Some(out.clone());
    }
    config.validate()?;
    let output_dir = config.output_dir.clone().expect("validated");

    let data = load_run_data(&config.dataset)?;
    let l = data.dataset.num_labels();
    config.cotrain.validate_for(l).context("field `cotrain`")?;
    if config.mode == AccessMode::PartialAccess {
        ensure!(
            matches!(data.dataset.view0(), View0::Prompts(_)),
            "field `mode`: partial access needs a prompt view 0"
        );
    }
    let init = initial_view_zero(&config, &data)?;

    fs::create_dir_all(&output_dir)
        .with_context(|| format!("cannot create {}", output_dir.display()))?;
    write_json(&output_dir.join(RESOLVED_CONFIG), &config)?;

    let outcome = cotrain_run(&config.cotrain, &data.dataset, &init, data.test.as_ref())?;
    ensure!(
        outcome.history.len() == config.cotrain.iterations,
        "run stopped after {} of {} iterations",
        outcome.history.len(),
        config.cotrain.iterations
    );
    let files = write_run(&output_dir, &outcome, &init, &data.dataset)?;

    if !options.quiet {
        if let Some(acc) = outcome.initial_test_accuracy {
            eprintln!("initial h0 test accuracy {acc:.4}");
        }
        for m in &outcome.history {
            let fmt = |a: Option<f64>| a.map_or("-".to_string(), |a| format!("{a:.4}"));
            eprintln!(
                "iteration {} coverage {:.3}: |L0| {} |L1| {} h0 {} h1 {}",
                m.iteration,
                m.coverage,
                m.view0.confident_size,
                m.view1.confident_size,
                fmt(m.view0.test_accuracy),
                fmt(m.view1.test_accuracy),
            );
        }
        eprintln!("wrote {}", output_dir.display());
    }
    Ok(RunReport {
        output_dir,
        config,
        outcome,
        files,
    })
}

/// Generate a synthetic corpus and write it under `out_dir`, returning the
/// path of the pool's dataset manifest.
pub fn cmd_simulate(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    format: MatrixFormat,
) -> anyhow::Result<PathBuf> {
    let mut config: SynthConfig = read_json_file(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.balance = Some(config.balance());
    let corpus = generate(&config)?;
    let manifest = write_corpus(out_dir, &corpus, format)?;
    write_json(&out_dir.join(SYNTH_CONFIG), &config)?;
    Ok(manifest)
}

/// A saved model: a view-0 model (tagged with `kind`) or a bare head.
#[derive(Debug, Clone)]
pub enum Checkpoint {
    ViewZero(ViewZeroModel),
    Head(HeadClassifier),
}

pub fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("invalid checkpoint {}", path.display()))?;
    let parsed = if raw.get("kind").is_some() {
        parse_json(&text).map(Checkpoint::ViewZero)
    } else {
        parse_json(&text).map(Checkpoint::Head)
    };
    parsed.with_context(|| format!("invalid checkpoint {}", path.display()))
}

fn checkpoint_proba(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    view: u8,
) -> anyhow::Result<ViewMatrix> {
    Ok(match (checkpoint, view) {
        (Checkpoint::ViewZero(m), 0) => m.predict_proba(dataset.view0())?,
        (Checkpoint::Head(h), 0) => {
            ViewZeroModel::Head(h.clone()).predict_proba(dataset.view0())?
        }
        (Checkpoint::ViewZero(ViewZeroModel::LabelModel(m)), 1) => {
            let d = dataset.view1().cols();
            bail!(
                "dimension mismatch: the label model reads {} prompt-view features per example, \
                 view 1 has {d}",
                m.num_prompts() * m.vocab_size()
            )
        }
        (Checkpoint::ViewZero(ViewZeroModel::Head(h)) | Checkpoint::Head(h), 1) => {
            h.predict_proba(dataset.view1())?
        }
        (_, v) => bail!("view must be 0 or 1, got {v}"),
    })
}

/// Score a checkpoint on one view of a dataset with gold labels. With `out`,
/// the report and per-example predictions are written there.
pub fn cmd_eval(
    checkpoint_path: &Path,
    dataset_path: &Path,
    view: u8,
    out: Option<&Path>,
) -> anyhow::Result<ClassificationReport> {
    let checkpoint = load_checkpoint(checkpoint_path)?;
    let dataset = load_dataset(dataset_path)
        .with_context(|| format!("cannot load dataset {}", dataset_path.display()))?
        .dataset;
    let gold = dataset
        .gold()
        .ok_or_else(|| anyhow!("dataset {} has no gold labels", dataset_path.display()))?;
    let probs = checkpoint_proba(&checkpoint, &dataset, view)?;
    ensure!(
        probs.cols() == dataset.num_labels(),
        "dimension mismatch: checkpoint has {} labels, dataset {}",
        probs.cols(),
        dataset.num_labels()
    );
    let report = classification_report(&probs.row_argmax(), gold, dataset.num_labels())?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        write_json(&dir.join(EVAL_REPORT), &report)?;
        write_predictions(&dir.join(EVAL_PREDICTIONS), &probs, Some(gold))?;
    }
    Ok(report)
}
