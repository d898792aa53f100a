//! Calibrated ensemble over `k` prompt probability vectors.
//!
//! For one example with prompt outputs `phi_i` (each of length `|V|`):
//!
//! ```text
//! l_i = relu(W_i phi_i)            W_i is l x |V|
//! h0  = softmax(sum_i alpha_i l_i)
//! ```

mod cbu;
mod verbalizer;

pub use cbu::cbu_init;
pub use verbalizer::{select_verbalizer, VERBALIZER_KEEP_FRACTION};

use serde::{Deserialize, Serialize};

use crate::data::{argmax, ConfidentSet, PromptViewTensor, ViewMatrix};
use crate::train::{fit, fit_with_report, TrainConfig, TrainReport, Trainable};
use crate::{Error, Result};

/// Calibration matrices `W_i` and ensembling weights `alpha`.
///
/// Parameters live in one flat vector: the `k` matrices (row-major
/// `l x |V|` each) followed by the `k` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LabelModelCheckpoint", into = "LabelModelCheckpoint")]
pub struct LabelModelParams {
    num_prompts: usize,
    num_labels: usize,
    vocab_size: usize,
    params: Vec<f64>,
}

impl LabelModelParams {
    pub fn new(
        num_labels: usize,
        vocab_size: usize,
        weights: Vec<Vec<f64>>,
        alpha: Vec<f64>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("weights", "need at least one prompt"));
        }
        if num_labels < 2 || vocab_size < num_labels {
            return Err(Error::invalid(
                "num_labels",
                format!("need 2 <= l <= |V|, got l={num_labels}, |V|={vocab_size}"),
            ));
        }
        if alpha.len() != k {
            return Err(Error::mismatch("alpha length", k, alpha.len()));
        }
        let mut params = Vec::with_capacity(k * num_labels * vocab_size + k);
        for (i, w) in weights.iter().enumerate() {
            if w.len() != num_labels * vocab_size {
                return Err(Error::mismatch(
                    format!("calibration matrix {i}"),
                    num_labels * vocab_size,
                    w.len(),
                ));
            }
            params.extend_from_slice(w);
        }
        params.extend_from_slice(&alpha);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidData(
                "label model parameters must be finite".into(),
            ));
        }
        Ok(Self {
            num_prompts: k,
            num_labels,
            vocab_size,
            params,
        })
    }

    pub fn num_prompts(&self) -> usize {
        self.num_prompts
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn block(&self) -> usize {
        self.num_labels * self.vocab_size
    }

    /// Row-major `l x |V|` calibration matrix of prompt `i`.
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.params[i * self.block()..(i + 1) * self.block()]
    }

    pub fn weights_mut(&mut self, i: usize) -> &mut [f64] {
        let b = self.block();
        &mut self.params[i * b..(i + 1) * b]
    }

    pub fn alpha(&self) -> &[f64] {
        &self.params[self.num_prompts * self.block()..]
    }

    pub fn alpha_mut(&mut self) -> &mut [f64] {
        let start = self.num_prompts * self.block();
        &mut self.params[start..]
    }

    fn check_slice(&self, features: &[f64]) -> Result<()> {
        let expected = self.num_prompts * self.vocab_size;
        if features.len() != expected {
            return Err(Error::mismatch(
                "label model input slice",
                expected,
                features.len(),
            ));
        }
        Ok(())
    }

    /// `relu(W_i phi_i)` for one prompt.
    fn prompt_activation(&self, i: usize, phi: &[f64], out: &mut [f64]) {
        let w = self.weights(i);
        for (j, o) in out.iter_mut().enumerate() {
            let row = &w[j * self.vocab_size..(j + 1) * self.vocab_size];
            let a: f64 = row.iter().zip(phi).map(|(w, x)| w * x).sum();
            *o = a.max(0.0);
        }
    }

    /// Per-prompt activations `l_i = relu(W_i phi_i)`, one row per prompt.
    pub fn prompt_activations(&self, features: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_slice(features)?;
        Ok((0..self.num_prompts)
            .map(|i| {
                let mut l = vec![0.0; self.num_labels];
                self.prompt_activation(
                    i,
                    &features[i * self.vocab_size..][..self.vocab_size],
                    &mut l,
                );
                l
            })
            .collect())
    }

    /// The ensembled pre-softmax vector `sum_i alpha_i l_i`.
    pub fn pre_activation(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_slice(features)?;
        Ok(self.pre_activation_unchecked(features))
    }

    fn pre_activation_unchecked(&self, features: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.num_labels];
        let mut l = vec![0.0; self.num_labels];
        for (i, &a) in self.alpha().iter().enumerate() {
            self.prompt_activation(
                i,
                &features[i * self.vocab_size..][..self.vocab_size],
                &mut l,
            );
            for (z, l) in z.iter_mut().zip(&l) {
                *z += a * l;
            }
        }
        z
    }

    /// Label distribution for one example's `k x |V|` block.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.pre_activation(features).map(|z| softmax(&z))
    }

    fn check_tensor(&self, view: &PromptViewTensor) -> Result<()> {
        if view.num_prompts() != self.num_prompts {
            return Err(Error::mismatch(
                "number of prompts",
                self.num_prompts,
                view.num_prompts(),
            ));
        }
        if view.vocab_size() != self.vocab_size {
            return Err(Error::mismatch(
                "verbalizer size",
                self.vocab_size,
                view.vocab_size(),
            ));
        }
        if view.num_labels() != self.num_labels {
            return Err(Error::mismatch(
                "number of labels",
                self.num_labels,
                view.num_labels(),
            ));
        }
        Ok(())
    }

    /// `U x l` probability matrix.
    pub fn predict_proba(&self, view: &PromptViewTensor) -> Result<ViewMatrix> {
        self.check_tensor(view)?;
        let values = (0..view.num_examples())
            .flat_map(|n| softmax(&self.pre_activation_unchecked(view.example(n))))
            .collect();
        ViewMatrix::new(view.num_examples(), self.num_labels, values)
    }

    /// `U x l` matrix of ensembled pre-softmax vectors, used as the
    /// neighbor-graph embedding for view 0.
    pub fn embed(&self, view: &PromptViewTensor) -> Result<ViewMatrix> {
        self.check_tensor(view)?;
        let values = (0..view.num_examples())
            .flat_map(|n| self.pre_activation_unchecked(view.example(n)))
            .collect();
        ViewMatrix::new(view.num_examples(), self.num_labels, values)
    }

    /// Accumulate the gradient of `-log p_label` for one example into `grad`
    /// scaled by `scale`, returning the loss.
    fn accumulate_grad(&self, features: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let (k, l, v) = (self.num_prompts, self.num_labels, self.vocab_size);
        let mut pre = vec![0.0; k * l];
        let mut act = vec![0.0; k * l];
        let mut z = vec![0.0; l];
        for i in 0..k {
            let w = self.weights(i);
            let phi = &features[i * v..(i + 1) * v];
            for j in 0..l {
                let a: f64 = w[j * v..(j + 1) * v]
                    .iter()
                    .zip(phi)
                    .map(|(w, x)| w * x)
                    .sum();
                pre[i * l + j] = a;
                act[i * l + j] = a.max(0.0);
                z[j] += self.alpha()[i] * act[i * l + j];
            }
        }
        let (p, log_z) = softmax_with_log_norm(&z);
        let loss = log_z - z[label];
        // dL/dz = p - onehot(label)
        let dz: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| if j == label { pj - 1.0 } else { pj })
            .collect();
        let alpha_offset = k * l * v;
        for i in 0..k {
            let phi = &features[i * v..(i + 1) * v];
            let alpha = self.alpha()[i];
            let mut d_alpha = 0.0;
            for j in 0..l {
                d_alpha += dz[j] * act[i * l + j];
                // relu subgradient at 0 is 0
                if pre[i * l + j] > 0.0 {
                    let d_pre = scale * alpha * dz[j];
                    let row = &mut grad[i * l * v + j * v..i * l * v + (j + 1) * v];
                    for (g, x) in row.iter_mut().zip(phi) {
                        *g += d_pre * x;
                    }
                }
            }
            grad[alpha_offset + i] += scale * d_alpha;
        }
        loss
    }

    /// Mean cross-entropy over `(example, label)` pairs of `view` and its
    /// gradient with respect to the flat parameter vector.
    pub fn loss_and_gradient(
        &self,
        view: &PromptViewTensor,
        batch: &[(usize, usize)],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_tensor(view)?;
        let mut grad = vec![0.0; self.params.len()];
        let loss = Trainable::loss_and_grad(self, view, batch, &mut grad);
        Ok((loss, grad))
    }

    pub fn flat_params(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

impl Trainable for LabelModelParams {
    type Input = PromptViewTensor;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, input: &PromptViewTensor) -> Result<()> {
        self.check_tensor(input)
    }

    fn input_len(input: &PromptViewTensor) -> usize {
        input.num_examples()
    }

    fn loss_and_grad(
        &self,
        input: &PromptViewTensor,
        batch: &[(usize, usize)],
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch.len() as f64;
        batch
            .iter()
            .map(|&(n, y)| self.accumulate_grad(input.example(n), y, scale, grad))
            .sum::<f64>()
            * scale
    }

    fn predict_labels(&self, input: &PromptViewTensor, indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .map(|&n| argmax(&self.pre_activation_unchecked(input.example(n))))
            .collect()
    }

    fn num_labels(&self) -> usize {
        self.num_labels
    }
}

/// Train the label model on pseudo-labeled data starting from `init`.
pub fn train_label_model(
    init: &LabelModelParams,
    view0: &PromptViewTensor,
    confident: &ConfidentSet,
    val_view0: &PromptViewTensor,
    val_confident: &ConfidentSet,
    config: &TrainConfig,
) -> Result<LabelModelParams> {
    fit(
        init.clone(),
        view0,
        confident,
        val_view0,
        val_confident,
        config,
    )
}

/// Like [`train_label_model`], also returning the per-epoch trace.
pub fn train_label_model_with_report(
    init: &LabelModelParams,
    view0: &PromptViewTensor,
    confident: &ConfidentSet,
    val_view0: &PromptViewTensor,
    val_confident: &ConfidentSet,
    config: &TrainConfig,
) -> Result<(LabelModelParams, TrainReport)> {
    fit_with_report(
        init.clone(),
        view0,
        confident,
        val_view0,
        val_confident,
        config,
    )
}

/// Uncalibrated baseline: argmax of the label-token probabilities averaged
/// uniformly over prompts.
pub fn uniform_average_predict(view: &PromptViewTensor) -> Vec<usize> {
    let (k, l) = (view.num_prompts(), view.num_labels());
    (0..view.num_examples())
        .map(|n| {
            let mut mean = vec![0.0; l];
            for i in 0..k {
                for (m, p) in mean.iter_mut().zip(view.prompt_slice(n, i)) {
                    *m += p / k as f64;
                }
            }
            argmax(&mean)
        })
        .collect()
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    softmax_with_log_norm(z).0
}

/// Softmax plus `log(sum(exp(z)))`.
pub(crate) fn softmax_with_log_norm(z: &[f64]) -> (Vec<f64>, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    (exp.iter().map(|e| e / sum).collect(), max + sum.ln())
}

/// On-disk form of [`LabelModelParams`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelModelCheckpoint {
    pub num_prompts: usize,
    pub num_labels: usize,
    pub vocab_size: usize,
    /// One row-major `l x |V|` matrix per prompt.
    pub weights: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
}

impl From<LabelModelParams> for LabelModelCheckpoint {
    fn from(p: LabelModelParams) -> Self {
        Self {
            num_prompts: p.num_prompts,
            num_labels: p.num_labels,
            vocab_size: p.vocab_size,
            weights: (0..p.num_prompts).map(|i| p.weights(i).to_vec()).collect(),
            alpha: p.alpha().to_vec(),
        }
    }
}

impl TryFrom<LabelModelCheckpoint> for LabelModelParams {
    type Error = Error;

    fn try_from(c: LabelModelCheckpoint) -> Result<Self> {
        if c.weights.len() != c.num_prompts {
            return Err(Error::mismatch(
                "checkpoint prompt count",
                c.num_prompts,
                c.weights.len(),
            ));
        }
        LabelModelParams::new(c.num_labels, c.vocab_size, c.weights, c.alpha)
    }
}
