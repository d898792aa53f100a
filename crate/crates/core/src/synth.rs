//! Synthetic two-view corpora with gold labels.
//!
//! View 0 is produced by simulated prompt emitters: each picks a token (the
//! gold label with a per-prompt accuracy, otherwise a uniformly random wrong
//! label), emits a point mass mixed with uniform mass, then distorts it by a
//! per-prompt positive bias and renormalizes. View 1 is a Gaussian blob
//! around a per-class mean. The two views use independent random streams, so
//! they are conditionally independent given the label.

use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::{Distribution, Uniform};
use rand::Rng as _;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::data::{
    save_gold_labels, save_prompt_view, save_view_matrix, Dataset, DatasetManifest, MatrixFormat,
    PromptViewTensor, View0, View0Source, ViewMatrix,
};
use crate::rng::{derive_seed, rng_for, stream};
use crate::{Error, Result};

const BALANCE_TOLERANCE: f64 = 1e-6;

/// I.i.d. labels drawn from `balance`.
pub fn gen_labels(num_examples: usize, balance: &[f64], seed: u64) -> Result<Vec<usize>> {
    check_balance(balance)?;
    let dist = WeightedIndex::new(balance).map_err(|e| Error::invalid("balance", e.to_string()))?;
    let mut rng = rng_for(seed, &[stream::LABELS]);
    Ok((0..num_examples).map(|_| dist.sample(&mut rng)).collect())
}

fn check_balance(balance: &[f64]) -> Result<()> {
    if balance.len() < 2 {
        return Err(Error::invalid("balance", "need at least two classes"));
    }
    if balance.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid(
            "balance",
            "entries must be finite and nonnegative",
        ));
    }
    let sum: f64 = balance.iter().sum();
    if (sum - 1.0).abs() > BALANCE_TOLERANCE {
        return Err(Error::invalid("balance", format!("sums to {sum}, not 1")));
    }
    Ok(())
}

/// Serde helper: concentration may be a positive number or the string `"inf"`.
mod concentration_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!(
                "concentration must be a number or \"inf\", got `{t}`"
            ))),
        }
    }
}

/// Simulated prompt emitters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSpec {
    pub num_prompts: usize,
    pub num_labels: usize,
    pub vocab_size: usize,
    /// Per prompt, probability that the chosen token is the gold label.
    pub accuracy: Vec<f64>,
    /// Per prompt, a positive multiplier for every verbalizer token.
    pub bias: Vec<Vec<f64>>,
    /// Odds of the point mass against the uniform component; `inf` emits
    /// one-hot vectors.
    #[serde(with = "concentration_serde")]
    pub concentration: f64,
    pub seed: u64,
}

impl EmitterSpec {
    pub fn validate(&self) -> Result<()> {
        let (k, l, v) = (self.num_prompts, self.num_labels, self.vocab_size);
        if k == 0 {
            return Err(Error::invalid("num_prompts", "need at least one prompt"));
        }
        if l < 2 || v < l {
            return Err(Error::invalid(
                "vocab_size",
                format!("need 2 <= num_labels <= vocab_size, got {l} and {v}"),
            ));
        }
        if self.accuracy.len() != k {
            return Err(Error::mismatch(
                "emitter accuracy entries",
                k,
                self.accuracy.len(),
            ));
        }
        let chance = 1.0 / l as f64;
        if let Some(a) = self.accuracy.iter().find(|&&a| !(a > chance && a <= 1.0)) {
            return Err(Error::invalid(
                "accuracy",
                format!("{a} is not in (1/{l}, 1]"),
            ));
        }
        if self.bias.len() != k {
            return Err(Error::mismatch("emitter bias vectors", k, self.bias.len()));
        }
        for b in &self.bias {
            if b.len() != v {
                return Err(Error::mismatch("emitter bias length", v, b.len()));
            }
            if b.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::invalid(
                    "bias",
                    "entries must be finite and positive",
                ));
            }
        }
        if self.concentration.is_nan() || self.concentration <= 0.0 {
            return Err(Error::invalid("concentration", "must be positive"));
        }
        Ok(())
    }

    /// Weight of the point mass, `c / (1 + c)`.
    fn point_mass(&self) -> f64 {
        if self.concentration.is_infinite() {
            1.0
        } else {
            self.concentration / (1.0 + self.concentration)
        }
    }
}

/// All-ones bias for `num_prompts` emitters.
pub fn neutral_bias(num_prompts: usize, vocab_size: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0; vocab_size]; num_prompts]
}

/// Bias entries drawn log-uniformly from `[low, high]`.
pub fn log_uniform_bias(
    num_prompts: usize,
    vocab_size: usize,
    low: f64,
    high: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if !(low > 0.0 && high >= low && high.is_finite()) {
        return Err(Error::invalid(
            "bias",
            format!("bad log-uniform range [{low}, {high}]"),
        ));
    }
    let dist = Uniform::new_inclusive(low.ln(), high.ln())
        .map_err(|e| Error::invalid("bias", e.to_string()))?;
    let mut rng = rng_for(seed, &[stream::BIAS]);
    Ok((0..num_prompts)
        .map(|_| {
            (0..vocab_size)
                .map(|_| dist.sample(&mut rng).exp())
                .collect()
        })
        .collect())
}

/// Label tokens `label_0..` followed by filler tokens `token_<j>`.
pub fn synthetic_verbalizer(num_labels: usize, vocab_size: usize) -> Vec<String> {
    (0..vocab_size)
        .map(|j| {
            if j < num_labels {
                format!("label_{j}")
            } else {
                format!("token_{j}")
            }
        })
        .collect()
}

/// Emitted prompt view plus, per prompt, its single content-free output.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptDraw {
    pub tensor: PromptViewTensor,
    pub content_free: Vec<Vec<Vec<f64>>>,
}

pub fn gen_prompt_view(labels: &[usize], spec: &EmitterSpec) -> Result<PromptDraw> {
    spec.validate()?;
    let (k, l, v) = (spec.num_prompts, spec.num_labels, spec.vocab_size);
    if let Some(&y) = labels.iter().find(|&&y| y >= l) {
        return Err(Error::InvalidData(format!(
            "label {y} out of range for {l} labels"
        )));
    }
    let lambda = spec.point_mass();
    let floor = (1.0 - lambda) / v as f64;
    let mut rng = rng_for(spec.seed, &[stream::EMITTER]);
    let mut values = Vec::with_capacity(labels.len() * k * v);
    let mut slice = vec![0.0; v];
    for &y in labels {
        for i in 0..k {
            let token = if rng.random::<f64>() < spec.accuracy[i] {
                y
            } else {
                // uniform over the l - 1 wrong labels
                let r = rng.random_range(0..l - 1);
                if r >= y {
                    r + 1
                } else {
                    r
                }
            };
            for (j, s) in slice.iter_mut().enumerate() {
                let base = if j == token { lambda + floor } else { floor };
                *s = base * spec.bias[i][j];
            }
            let z: f64 = slice.iter().sum();
            values.extend(slice.iter().map(|s| s / z));
        }
    }
    let tensor = PromptViewTensor::new(labels.len(), k, synthetic_verbalizer(l, v), l, values)?;
    let content_free = spec
        .bias
        .iter()
        .map(|b| {
            let z: f64 = b[..l].iter().sum();
            vec![b[..l].iter().map(|x| x / z).collect()]
        })
        .collect();
    Ok(PromptDraw {
        tensor,
        content_free,
    })
}

/// Gaussian blobs with class `j` centred at `separation * e_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub num_labels: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_labels < 2 || self.dim < self.num_labels {
            return Err(Error::invalid(
                "dim",
                format!(
                    "need 2 <= num_labels <= dim, got {} and {}",
                    self.num_labels, self.dim
                ),
            ));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid(
                "separation",
                "must be finite and nonnegative",
            ));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise_scale", "must be finite and positive"));
        }
        Ok(())
    }
}

pub fn gen_blob_view(labels: &[usize], spec: &BlobSpec) -> Result<ViewMatrix> {
    spec.validate()?;
    if let Some(&y) = labels.iter().find(|&&y| y >= spec.num_labels) {
        return Err(Error::InvalidData(format!(
            "label {y} out of range for {} labels",
            spec.num_labels
        )));
    }
    let noise = Normal::new(0.0, spec.noise_scale)
        .map_err(|e| Error::invalid("noise_scale", e.to_string()))?;
    let mut rng = rng_for(spec.seed, &[stream::BLOBS]);
    let d = spec.dim;
    let mut values = Vec::with_capacity(labels.len() * d);
    for &y in labels {
        for j in 0..d {
            let mean = if j == y { spec.separation } else { 0.0 };
            values.push(mean + noise.sample(&mut rng));
        }
    }
    ViewMatrix::new(labels.len(), d, values)
}

/// How emitter bias is produced in a [`SynthConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasConfig {
    Neutral,
    LogUniform { low: f64, high: f64 },
    Explicit { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSynthConfig {
    pub num_prompts: usize,
    pub vocab_size: usize,
    pub accuracy: Vec<f64>,
    pub bias: BiasConfig,
    #[serde(with = "concentration_serde")]
    pub concentration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSynthConfig {
    pub dim: usize,
    pub separation: f64,
    pub noise_scale: f64,
}

/// A complete synthetic corpus description. Every random stream is derived
/// from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_examples: usize,
    /// Size of an additional held-out test set drawn from the same
    /// distribution; 0 for none.
    #[serde(default)]
    pub test_examples: usize,
    pub num_labels: usize,
    /// Class prior; uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balance: Option<Vec<f64>>,
    pub prompts: PromptSynthConfig,
    pub blobs: BlobSynthConfig,
    #[serde(default)]
    pub seed: u64,
}

impl SynthConfig {
    pub fn balance(&self) -> Vec<f64> {
        self.balance
            .clone()
            .unwrap_or_else(|| vec![1.0 / self.num_labels as f64; self.num_labels])
    }

    pub fn emitter_spec(&self) -> Result<EmitterSpec> {
        let p = &self.prompts;
        let bias = match &p.bias {
            BiasConfig::Neutral => neutral_bias(p.num_prompts, p.vocab_size),
            BiasConfig::LogUniform { low, high } => log_uniform_bias(
                p.num_prompts,
                p.vocab_size,
                *low,
                *high,
                derive_seed(self.seed, &[stream::BIAS]),
            )?,
            BiasConfig::Explicit { values } => values.clone(),
        };
        let spec = EmitterSpec {
            num_prompts: p.num_prompts,
            num_labels: self.num_labels,
            vocab_size: p.vocab_size,
            accuracy: p.accuracy.clone(),
            bias,
            concentration: p.concentration,
            seed: derive_seed(self.seed, &[stream::EMITTER]),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn blob_spec(&self) -> BlobSpec {
        BlobSpec {
            num_labels: self.num_labels,
            dim: self.blobs.dim,
            separation: self.blobs.separation,
            noise_scale: self.blobs.noise_scale,
            seed: derive_seed(self.seed, &[stream::BLOBS]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_examples < 2 {
            return Err(Error::invalid("num_examples", "need at least two examples"));
        }
        if self.balance().len() != self.num_labels {
            return Err(Error::mismatch(
                "balance entries",
                self.num_labels,
                self.balance().len(),
            ));
        }
        check_balance(&self.balance())?;
        self.emitter_spec()?;
        self.blob_spec().validate()
    }
}

/// Generated training pool (gold attached for evaluation) and optional test set.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Dataset,
    pub test: Option<Dataset>,
    /// Per prompt, its content-free outputs over the label tokens.
    pub content_free: Vec<Vec<Vec<f64>>>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let total = config.num_examples + config.test_examples;
    let labels = gen_labels(
        total,
        &config.balance(),
        derive_seed(config.seed, &[stream::LABELS]),
    )?;
    let prompts = gen_prompt_view(&labels, &config.emitter_spec()?)?;
    let blobs = gen_blob_view(&labels, &config.blob_spec())?;
    let full = Dataset::new(
        View0::Prompts(prompts.tensor),
        blobs,
        Some(labels),
        config.num_labels,
    )?;
    let train_idx: Vec<usize> = (0..config.num_examples).collect();
    let test = if config.test_examples > 0 {
        let idx: Vec<usize> = (config.num_examples..total).collect();
        Some(full.subset(&idx)?)
    } else {
        None
    };
    let train = if test.is_some() {
        full.subset(&train_idx)?
    } else {
        full
    };
    Ok(SynthCorpus {
        train,
        test,
        content_free: prompts.content_free,
    })
}

/// Name of the dataset manifest inside a written corpus directory.
pub const DATASET_MANIFEST: &str = "dataset.json";
/// Subdirectory holding the test set, when present.
pub const TEST_DIR: &str = "test";

/// Write `dataset` (with gold labels if present) as a manifest directory.
pub fn write_dataset(
    dir: impl AsRef<Path>,
    dataset: &Dataset,
    content_free: Option<&[Vec<Vec<f64>>]>,
    format: MatrixFormat,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = format.extension();
    let view0 = match dataset.view0() {
        View0::Prompts(t) => {
            save_prompt_view(dir, "prompts.json", t, format)?;
            View0Source::Prompts("prompts.json".into())
        }
        View0::Features(m) => {
            let name = PathBuf::from(format!("view0.{ext}"));
            save_view_matrix(dir.join(&name), m, format)?;
            View0Source::Features(name)
        }
    };
    let view1 = PathBuf::from(format!("view1.{ext}"));
    save_view_matrix(dir.join(&view1), dataset.view1(), format)?;
    let gold_labels = match dataset.gold() {
        Some(gold) => {
            save_gold_labels(dir.join("gold.txt"), gold)?;
            Some(PathBuf::from("gold.txt"))
        }
        None => None,
    };
    let manifest = DatasetManifest {
        num_labels: dataset.num_labels(),
        format,
        view0,
        view1,
        gold_labels,
        content_free: content_free.map(<[_]>::to_vec),
    };
    let path = dir.join(DATASET_MANIFEST);
    manifest.save(&path)?;
    Ok(path)
}

/// Write a corpus: the pool at `dir`, the test set (if any) under `dir/test`.
pub fn write_corpus(
    dir: impl AsRef<Path>,
    corpus: &SynthCorpus,
    format: MatrixFormat,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let path = write_dataset(dir, &corpus.train, Some(&corpus.content_free), format)?;
    if let Some(test) = &corpus.test {
        write_dataset(dir.join(TEST_DIR), test, Some(&corpus.content_free), format)?;
    }
    Ok(path)
}
