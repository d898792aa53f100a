//! Run configuration files.
//!
//! A run config is a JSON object:
//!
//! ```json
//! {
//!   "mode": "partial_access",
//!   "dataset": { "synth": { ... } },
//!   "init_checkpoint": "h0.json",
//!   "cotrain": { "beta": 0.5, ... },
//!   "output_dir": "runs/example"
//! }
//! ```
//!
//! `dataset` is either `{"manifest": {"path": ..., "test": ...}}` or
//! `{"synth": <SynthConfig>}`. Relative paths are taken relative to the
//! config file's directory. Every omitted field takes its default, and the
//! resolved form (all defaults filled in, paths absolute) is what a run
//! writes as its snapshot.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cotrain_core::cotrain::CoTrainConfig;
use cotrain_core::selection::SelectionStrategy;
use cotrain_core::synth::SynthConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// How much of the prompted model is accessible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    /// Only output probabilities: view 0 is the calibrated label model.
    #[default]
    PartialAccess,
    /// View 0 is a generic trainable head over its features.
    FullAccessGeneric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Manifest {
        path: PathBuf,
        /// Held-out test set manifest.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test: Option<PathBuf>,
    },
    Synth(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub mode: AccessMode,
    pub dataset: DatasetSource,
    /// Starting view-0 model; derived from the data when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub cotrain: CoTrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

/// Deserialize JSON text, naming the offending field path on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> anyhow::Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    match serde_path_to_error::deserialize(&mut de) {
        Ok(v) => {
            de.end()?;
            Ok(v)
        }
        Err(e) => {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                bail!("{inner}")
            }
            bail!("field `{path}`: {inner}")
        }
    }
}

pub fn read_json_file<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_json(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn absolute(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfigFile {
    /// Parse `text` and resolve it against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> anyhow::Result<Self> {
        let mut config: RunConfigFile = parse_json(text)?;
        // selection strategies default by mode, so we need to know which
        // ones were spelled out
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let explicit = |key: &str| raw.get("cotrain").and_then(|c| c.get(key)).is_some();
        if config.mode == AccessMode::FullAccessGeneric {
            if !explicit("selection_view0") {
                config.cotrain.selection_view0 = SelectionStrategy::CutStatistic;
            }
            if !explicit("selection_view1") {
                config.cotrain.selection_view1 = SelectionStrategy::CutStatistic;
            }
        }
        config.resolve_paths(base_dir);
        if let DatasetSource::Synth(s) = &mut config.dataset {
            s.balance = Some(s.balance());
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).with_context(|| format!("invalid config {}", path.display()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSource::Manifest { path, test } = &mut self.dataset {
            *path = absolute(base, path);
            if let Some(t) = test {
                *t = absolute(base, t);
            }
        }
        if let Some(p) = &mut self.init_checkpoint {
            *p = absolute(base, p);
        }
        if let Some(p) = &mut self.output_dir {
            *p = absolute(base, p);
        }
    }

    /// Everything that can be checked without touching the data.
    pub fn validate(&self) -> anyhow::Result<()> {
        self.cotrain.validate().context("field `cotrain`")?;
        match &self.dataset {
            DatasetSource::Synth(s) => {
                s.validate().context("field `dataset.synth`")?;
                self.cotrain
                    .validate_for(s.num_labels)
                    .context("field `cotrain`")?;
            }
            DatasetSource::Manifest { path, test } => {
                for p in std::iter::once(path).chain(test) {
                    if !p.exists() {
                        bail!("field `dataset.manifest`: {} does not exist", p.display());
                    }
                }
            }
        }
        if let Some(p) = &self.init_checkpoint {
            if !p.exists() {
                bail!("field `init_checkpoint`: {} does not exist", p.display());
            }
        }
        if self.output_dir.is_none() {
            bail!("field `output_dir`: missing, set it in the config or pass --out");
        }
        Ok(())
    }
}
