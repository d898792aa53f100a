//! Dataset containers, ingestion and train/validation splitting.

mod io;
mod split;

pub use io::{
    load_dataset, load_gold_labels, load_prompt_view, load_view_matrix, save_gold_labels,
    save_prompt_view, save_view_matrix, DatasetManifest, LoadedDataset, MatrixFormat,
    PromptManifest, View0Source,
};
pub use split::{split_train_val, Split};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Slices within this distance of summing to one are renormalized on ingestion.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-3;

/// Dense row-major matrix with one row per example.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl ViewMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidData(format!(
                "matrix must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::mismatch("matrix payload", rows * cols, values.len()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::mismatch(format!("row {r} length"), cols, row.len()));
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// New matrix made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.cols, values)
    }

    /// Index of the largest entry of each row; ties go to the lower column.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.row_iter().map(argmax).collect()
    }
}

/// Index of the maximum, first occurrence on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Per-example stack of `k` probability vectors over the verbalizer tokens.
///
/// Stored as `[example][prompt][token]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptViewTensor {
    num_examples: usize,
    num_prompts: usize,
    verbalizer: Vec<String>,
    num_labels: usize,
    values: Vec<f64>,
}

impl PromptViewTensor {
    /// Build from raw values, renormalizing slices that are within
    /// [`NORMALIZATION_TOLERANCE`] of summing to one.
    pub fn new(
        num_examples: usize,
        num_prompts: usize,
        verbalizer: Vec<String>,
        num_labels: usize,
        mut values: Vec<f64>,
    ) -> Result<Self> {
        let vocab = verbalizer.len();
        if num_examples == 0 || num_prompts == 0 {
            return Err(Error::InvalidData(
                "prompt view needs at least one example and one prompt".into(),
            ));
        }
        if num_labels < 2 || num_labels > vocab {
            return Err(Error::InvalidData(format!(
                "num_labels {num_labels} must be in [2, |V| = {vocab}]"
            )));
        }
        if values.len() != num_examples * num_prompts * vocab {
            return Err(Error::mismatch(
                "prompt view payload",
                num_examples * num_prompts * vocab,
                values.len(),
            ));
        }
        for (s, slice) in values.chunks_exact_mut(vocab).enumerate() {
            let (example, prompt) = (s / num_prompts, s % num_prompts);
            if let Some(col) = slice
                .iter()
                .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
            {
                if !slice[col].is_finite() {
                    return Err(Error::NonFinite { row: example, col });
                }
                return Err(Error::InvalidData(format!(
                    "probability {} out of [0,1] at example {example}, prompt {prompt}, token {col}",
                    slice[col]
                )));
            }
            let sum: f64 = slice.iter().sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
                return Err(Error::Unnormalized {
                    example,
                    prompt,
                    sum,
                });
            }
            // already-normalized slices are left untouched so that reloading
            // saved data is bit-exact
            if (sum - 1.0).abs() > 1e-12 {
                slice.iter_mut().for_each(|v| *v /= sum);
            }
        }
        Ok(Self {
            num_examples,
            num_prompts,
            verbalizer,
            num_labels,
            values,
        })
    }

    /// Assemble from one `U x |V|` matrix per prompt.
    pub fn from_prompt_matrices(
        matrices: &[ViewMatrix],
        verbalizer: Vec<String>,
        num_labels: usize,
    ) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| Error::InvalidData("no prompt matrices".into()))?;
        let (u, vocab) = (first.rows(), first.cols());
        if vocab != verbalizer.len() {
            return Err(Error::mismatch(
                "verbalizer length",
                vocab,
                verbalizer.len(),
            ));
        }
        for (i, m) in matrices.iter().enumerate() {
            if m.rows() != u || m.cols() != vocab {
                return Err(Error::InvalidData(format!(
                    "prompt {i} matrix is {}x{}, expected {u}x{vocab}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        let mut values = Vec::with_capacity(u * matrices.len() * vocab);
        for n in 0..u {
            for m in matrices {
                values.extend_from_slice(m.row(n));
            }
        }
        Self::new(u, matrices.len(), verbalizer, num_labels, values)
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn vocab_size(&self) -> usize {
        self.verbalizer.len()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn verbalizer(&self) -> &[String] {
        &self.verbalizer
    }

    /// The `k x |V|` block of one example.
    pub fn example(&self, n: usize) -> &[f64] {
        let width = self.num_prompts * self.vocab_size();
        &self.values[n * width..(n + 1) * width]
    }

    pub fn prompt_slice(&self, n: usize, prompt: usize) -> &[f64] {
        let vocab = self.vocab_size();
        &self.example(n)[prompt * vocab..(prompt + 1) * vocab]
    }

    /// One `U x |V|` matrix per prompt.
    pub fn prompt_matrices(&self) -> Vec<ViewMatrix> {
        (0..self.num_prompts)
            .map(|i| {
                let values = (0..self.num_examples)
                    .flat_map(|n| self.prompt_slice(n, i).iter().copied())
                    .collect();
                ViewMatrix::new(self.num_examples, self.vocab_size(), values)
                    .expect("tensor slices are valid matrices")
            })
            .collect()
    }

    pub fn select_examples(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.example(0).len());
        for &n in indices {
            values.extend_from_slice(self.example(n));
        }
        Self::new(
            indices.len(),
            self.num_prompts,
            self.verbalizer.clone(),
            self.num_labels,
            values,
        )
    }

    /// Flatten each example's `k x |V|` block into one feature row.
    pub fn flatten(&self) -> ViewMatrix {
        ViewMatrix::new(
            self.num_examples,
            self.num_prompts * self.vocab_size(),
            self.values.clone(),
        )
        .expect("tensor values are finite")
    }
}

/// The first view: prompt outputs (partial access) or a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum View0 {
    Prompts(PromptViewTensor),
    Features(ViewMatrix),
}

impl View0 {
    pub fn num_examples(&self) -> usize {
        match self {
            View0::Prompts(t) => t.num_examples(),
            View0::Features(m) => m.rows(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(match self {
            View0::Prompts(t) => View0::Prompts(t.select_examples(indices)?),
            View0::Features(m) => View0::Features(m.select_rows(indices)?),
        })
    }
}

/// Two views over the same `U` examples plus optional gold labels.
///
/// Gold labels are only ever read by evaluation code.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    view0: View0,
    view1: ViewMatrix,
    gold: Option<Vec<usize>>,
    num_labels: usize,
}

impl Dataset {
    pub fn new(
        view0: View0,
        view1: ViewMatrix,
        gold: Option<Vec<usize>>,
        num_labels: usize,
    ) -> Result<Self> {
        let u = view0.num_examples();
        if view1.rows() != u {
            return Err(Error::mismatch("view 1 example count", u, view1.rows()));
        }
        if num_labels < 2 {
            return Err(Error::invalid("num_labels", "need at least two labels"));
        }
        if let View0::Prompts(t) = &view0 {
            if t.num_labels() != num_labels {
                return Err(Error::mismatch(
                    "prompt view num_labels",
                    num_labels,
                    t.num_labels(),
                ));
            }
        }
        if let Some(gold) = &gold {
            if gold.len() != u {
                return Err(Error::mismatch("gold label count", u, gold.len()));
            }
            if let Some(pos) = gold.iter().position(|&y| y >= num_labels) {
                return Err(Error::InvalidData(format!(
                    "gold label {} at example {pos} out of range for {num_labels} labels",
                    gold[pos]
                )));
            }
        }
        Ok(Self {
            view0,
            view1,
            gold,
            num_labels,
        })
    }

    pub fn num_examples(&self) -> usize {
        self.view1.rows()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn view0(&self) -> &View0 {
        &self.view0
    }

    pub fn view1(&self) -> &ViewMatrix {
        &self.view1
    }

    pub fn gold(&self) -> Option<&[usize]> {
        self.gold.as_deref()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.view0.select(indices)?,
            self.view1.select_rows(indices)?,
            self.gold
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
            self.num_labels,
        )
    }

    /// Same views, gold labels dropped.
    pub fn without_gold(&self) -> Self {
        Self {
            gold: None,
            ..self.clone()
        }
    }
}

/// Pseudo-labeled subset of the unlabeled pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidentSet {
    entries: Vec<(usize, usize)>,
    pub iteration: usize,
    pub view_of_origin: usize,
}

impl ConfidentSet {
    /// Validates uniqueness and ranges of `(index, pseudo_label)` entries.
    pub fn new(
        entries: Vec<(usize, usize)>,
        num_examples: usize,
        num_labels: usize,
    ) -> Result<Self> {
        let mut seen = vec![false; num_examples];
        for &(index, label) in &entries {
            if index >= num_examples {
                return Err(Error::InvalidData(format!(
                    "confident index {index} out of range for {num_examples} examples"
                )));
            }
            if label >= num_labels {
                return Err(Error::InvalidData(format!(
                    "pseudo-label {label} out of range for {num_labels} labels"
                )));
            }
            if std::mem::replace(&mut seen[index], true) {
                return Err(Error::InvalidData(format!(
                    "confident index {index} appears twice"
                )));
            }
        }
        Ok(Self {
            entries,
            iteration: 0,
            view_of_origin: 0,
        })
    }

    pub fn with_origin(mut self, iteration: usize, view: usize) -> Self {
        self.iteration = iteration;
        self.view_of_origin = view;
        self
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn labels(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.1)
    }
}
