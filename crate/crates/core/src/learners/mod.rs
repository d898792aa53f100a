//! Trainable heads over a frozen feature view.

mod metrics;

pub use metrics::balanced_accuracy;

use rand::distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{argmax, ConfidentSet, ViewMatrix};
use crate::labelmodel::{softmax, softmax_with_log_norm};
use crate::rng::{rng_for, stream};
use crate::train::{fit, fit_with_report, TrainConfig, TrainReport, Trainable};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Linear,
    OneHiddenLayer { hidden_dim: usize },
}

impl Architecture {
    fn num_params(self, input_dim: usize, num_labels: usize) -> usize {
        match self {
            Architecture::Linear => num_labels * input_dim + num_labels,
            Architecture::OneHiddenLayer { hidden_dim } => {
                hidden_dim * input_dim + hidden_dim + num_labels * hidden_dim + num_labels
            }
        }
    }
}

/// Linear or one-hidden-layer ReLU classifier with a softmax output.
///
/// Flat parameter layout: linear is `W (l x d), b (l)`; one-hidden-layer is
/// `W1 (h x d), b1 (h), W2 (l x h), b2 (l)`, all row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HeadCheckpoint", into = "HeadCheckpoint")]
pub struct HeadClassifier {
    architecture: Architecture,
    input_dim: usize,
    num_labels: usize,
    params: Vec<f64>,
}

impl HeadClassifier {
    pub fn from_params(
        architecture: Architecture,
        input_dim: usize,
        num_labels: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        if num_labels < 2 {
            return Err(Error::invalid("num_labels", "need at least two labels"));
        }
        if let Architecture::OneHiddenLayer { hidden_dim: 0 } = architecture {
            return Err(Error::invalid("hidden_dim", "must be at least 1"));
        }
        let expected = architecture.num_params(input_dim, num_labels);
        if params.len() != expected {
            return Err(Error::mismatch(
                "head parameter count",
                expected,
                params.len(),
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidData("head parameters must be finite".into()));
        }
        Ok(Self {
            architecture,
            input_dim,
            num_labels,
            params,
        })
    }

    pub fn zeros(architecture: Architecture, input_dim: usize, num_labels: usize) -> Result<Self> {
        let n = architecture.num_params(input_dim, num_labels);
        Self::from_params(architecture, input_dim, num_labels, vec![0.0; n])
    }

    /// Fresh parameters: weights uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init(
        architecture: Architecture,
        input_dim: usize,
        num_labels: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut head = Self::zeros(architecture, input_dim, num_labels)?;
        let mut rng = rng_for(seed, &[stream::INIT]);
        let mut fill = |w: &mut [f64], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            w.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
        };
        let (d, l) = (input_dim, num_labels);
        match architecture {
            Architecture::Linear => fill(&mut head.params[..l * d], d),
            Architecture::OneHiddenLayer { hidden_dim: h } => {
                fill(&mut head.params[..h * d], d);
                let w2 = h * d + h;
                fill(&mut head.params[w2..w2 + l * h], h);
            }
        }
        Ok(head)
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn flat_params(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_features(&self, features: &ViewMatrix) -> Result<()> {
        if features.cols() != self.input_dim {
            return Err(Error::mismatch(
                "head input dimension",
                self.input_dim,
                features.cols(),
            ));
        }
        Ok(())
    }

    /// Hidden activations (empty for linear heads) and logits of one row.
    fn forward_row(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, l) = (self.input_dim, self.num_labels);
        match self.architecture {
            Architecture::Linear => (
                Vec::new(),
                affine(&self.params[..l * d], &self.params[l * d..], x),
            ),
            Architecture::OneHiddenLayer { hidden_dim: h } => {
                let (w1, rest) = self.params.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(l * h);
                let mut hidden = affine(w1, b1, x);
                hidden.iter_mut().for_each(|v| *v = v.max(0.0));
                let logits = affine(w2, b2, &hidden);
                (hidden, logits)
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::mismatch(
                "head input dimension",
                self.input_dim,
                x.len(),
            ));
        }
        Ok(self.forward_row(x).1)
    }

    /// `U x l` matrix of class probabilities.
    pub fn predict_proba(&self, features: &ViewMatrix) -> Result<ViewMatrix> {
        self.check_features(features)?;
        let rows: Vec<Vec<f64>> = (0..features.rows())
            .into_par_iter()
            .map(|n| softmax(&self.forward_row(features.row(n)).1))
            .collect();
        ViewMatrix::new(features.rows(), self.num_labels, rows.concat())
    }

    /// Representation used for neighbor graphs: the input itself for linear
    /// heads, the hidden ReLU activations otherwise.
    pub fn embed_for_selection(&self, features: &ViewMatrix) -> Result<ViewMatrix> {
        self.check_features(features)?;
        match self.architecture {
            Architecture::Linear => Ok(features.clone()),
            Architecture::OneHiddenLayer { hidden_dim } => {
                let rows: Vec<Vec<f64>> = (0..features.rows())
                    .into_par_iter()
                    .map(|n| self.forward_row(features.row(n)).0)
                    .collect();
                ViewMatrix::new(features.rows(), hidden_dim, rows.concat())
            }
        }
    }

    fn accumulate_grad(&self, x: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let (d, l) = (self.input_dim, self.num_labels);
        let (hidden, logits) = self.forward_row(x);
        let (p, log_norm) = softmax_with_log_norm(&logits);
        let loss = log_norm - logits[label];
        let dz: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| scale * if j == label { pj - 1.0 } else { pj })
            .collect();
        match self.architecture {
            Architecture::Linear => {
                outer_add(&mut grad[..l * d], &dz, x);
                add(&mut grad[l * d..], &dz);
            }
            Architecture::OneHiddenLayer { hidden_dim: h } => {
                let w2 = &self.params[h * d + h..h * d + h + l * h];
                let (g1, rest) = grad.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (g2, gb2) = rest.split_at_mut(l * h);
                outer_add(g2, &dz, &hidden);
                add(gb2, &dz);
                // back through W2 and the ReLU (subgradient 0 at 0)
                let dh: Vec<f64> = (0..h)
                    .map(|c| {
                        if hidden[c] > 0.0 {
                            (0..l).map(|j| w2[j * h + c] * dz[j]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
                outer_add(g1, &dh, x);
                add(gb1, &dh);
            }
        }
        loss
    }

    /// Mean cross-entropy over `(row, label)` pairs and its gradient with
    /// respect to the flat parameter vector.
    pub fn loss_and_gradient(
        &self,
        features: &ViewMatrix,
        batch: &[(usize, usize)],
    ) -> Result<(f64, Vec<f64>)> {
        self.check_features(features)?;
        let mut grad = vec![0.0; self.params.len()];
        let loss = Trainable::loss_and_grad(self, features, batch, &mut grad);
        Ok((loss, grad))
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.chunks_exact(x.len())
        .zip(b)
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

fn outer_add(g: &mut [f64], left: &[f64], right: &[f64]) {
    for (row, &a) in g.chunks_exact_mut(right.len()).zip(left) {
        for (g, &b) in row.iter_mut().zip(right) {
            *g += a * b;
        }
    }
}

fn add(g: &mut [f64], v: &[f64]) {
    g.iter_mut().zip(v).for_each(|(g, v)| *g += v);
}

impl Trainable for HeadClassifier {
    type Input = ViewMatrix;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_input(&self, input: &ViewMatrix) -> Result<()> {
        self.check_features(input)
    }

    fn input_len(input: &ViewMatrix) -> usize {
        input.rows()
    }

    fn loss_and_grad(&self, input: &ViewMatrix, batch: &[(usize, usize)], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let scale = 1.0 / batch.len() as f64;
        batch
            .iter()
            .map(|&(n, y)| self.accumulate_grad(input.row(n), y, scale, grad))
            .sum::<f64>()
            * scale
    }

    fn predict_labels(&self, input: &ViewMatrix, indices: &[usize]) -> Vec<usize> {
        indices
            .iter()
            .map(|&n| argmax(&self.forward_row(input.row(n)).1))
            .collect()
    }

    fn num_labels(&self) -> usize {
        self.num_labels
    }
}

/// Train a freshly initialized head (seeded from `config.seed`).
pub fn train_head(
    architecture: Architecture,
    features: &ViewMatrix,
    confident: &ConfidentSet,
    val_features: &ViewMatrix,
    val_confident: &ConfidentSet,
    num_labels: usize,
    config: &TrainConfig,
) -> Result<HeadClassifier> {
    train_head_with_report(
        architecture,
        features,
        confident,
        val_features,
        val_confident,
        num_labels,
        config,
    )
    .map(|(h, _)| h)
}

pub fn train_head_with_report(
    architecture: Architecture,
    features: &ViewMatrix,
    confident: &ConfidentSet,
    val_features: &ViewMatrix,
    val_confident: &ConfidentSet,
    num_labels: usize,
    config: &TrainConfig,
) -> Result<(HeadClassifier, TrainReport)> {
    let init = HeadClassifier::init(architecture, features.cols(), num_labels, config.seed)?;
    fit_with_report(
        init,
        features,
        confident,
        val_features,
        val_confident,
        config,
    )
}

/// Continue training an existing head (used for view-0 heads, whose
/// starting point is the initial hypothesis rather than a random draw).
pub fn train_head_from(
    init: &HeadClassifier,
    features: &ViewMatrix,
    confident: &ConfidentSet,
    val_features: &ViewMatrix,
    val_confident: &ConfidentSet,
    config: &TrainConfig,
) -> Result<HeadClassifier> {
    fit(
        init.clone(),
        features,
        confident,
        val_features,
        val_confident,
        config,
    )
}

/// On-disk form of [`HeadClassifier`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadCheckpoint {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub num_labels: usize,
    pub params: Vec<f64>,
}

impl From<HeadClassifier> for HeadCheckpoint {
    fn from(h: HeadClassifier) -> Self {
        Self {
            architecture: h.architecture,
            input_dim: h.input_dim,
            num_labels: h.num_labels,
            params: h.params,
        }
    }
}

impl TryFrom<HeadCheckpoint> for HeadClassifier {
    type Error = Error;

    fn try_from(c: HeadCheckpoint) -> Result<Self> {
        HeadClassifier::from_params(c.architecture, c.input_dim, c.num_labels, c.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HIDDEN: Architecture = Architecture::OneHiddenLayer { hidden_dim: 3 };

    #[test]
    fn zero_model_is_uniform() {
        let x = ViewMatrix::new(2, 3, vec![1.0, -2.0, 0.5, 3.0, 0.0, 1.0]).unwrap();
        for arch in [Architecture::Linear, HIDDEN] {
            let p = HeadClassifier::zeros(arch, 3, 4)
                .unwrap()
                .predict_proba(&x)
                .unwrap();
            assert!(p.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        }
    }

    #[test]
    fn sign_case() {
        // W = [[0], [5]], b = 0: positive inputs go to class 1
        let h = HeadClassifier::from_params(Architecture::Linear, 1, 2, vec![0.0, 5.0, 0.0, 0.0])
            .unwrap();
        let x = ViewMatrix::new(3, 1, vec![0.1, 1.0, 7.0]).unwrap();
        assert_eq!(h.predict_proba(&x).unwrap().row_argmax(), vec![1, 1, 1]);
    }

    #[test]
    fn rows_sum_to_one() {
        let x = ViewMatrix::new(4, 3, (0..12).map(|i| (i as f64).sin() * 3.0).collect()).unwrap();
        for (seed, arch) in [(1, Architecture::Linear), (2, HIDDEN)] {
            let p = HeadClassifier::init(arch, 3, 3, seed)
                .unwrap()
                .predict_proba(&x)
                .unwrap();
            for row in p.row_iter() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn init_respects_fan_in_bound_and_zero_bias() {
        let h = HeadClassifier::init(HIDDEN, 4, 2, 9).unwrap();
        let p = h.flat_params();
        assert!(p[..12].iter().all(|v| v.abs() <= 0.5));
        assert!(p[12..15].iter().all(|&v| v == 0.0));
        let bound = 1.0 / 3f64.sqrt();
        assert!(p[15..21].iter().all(|v| v.abs() <= bound));
        assert!(p[21..].iter().all(|&v| v == 0.0));
        assert_eq!(h, HeadClassifier::init(HIDDEN, 4, 2, 9).unwrap());
        assert_ne!(h, HeadClassifier::init(HIDDEN, 4, 2, 10).unwrap());
    }

    #[test]
    fn linear_embedding_is_identity() {
        let x = ViewMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let h = HeadClassifier::init(Architecture::Linear, 2, 2, 0).unwrap();
        assert_eq!(h.embed_for_selection(&x).unwrap(), x);
    }

    #[test]
    fn zero_hidden_embedding_is_zero() {
        let x = ViewMatrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let h = HeadClassifier::zeros(HIDDEN, 2, 2).unwrap();
        let e = h.embed_for_selection(&x).unwrap();
        assert_eq!((e.rows(), e.cols()), (2, 3));
        assert!(e.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hidden_embedding_matches_direct_evaluation() {
        let x = ViewMatrix::new(3, 2, vec![0.5, -1.0, 2.0, 0.25, -3.0, 1.5]).unwrap();
        let h = HeadClassifier::init(HIDDEN, 2, 2, 4).unwrap();
        let e = h.embed_for_selection(&x).unwrap();
        let p = h.flat_params();
        for n in 0..3 {
            for c in 0..3 {
                let a = p[c * 2] * x.get(n, 0) + p[c * 2 + 1] * x.get(n, 1) + p[6 + c];
                assert!((e.get(n, c) - a.max(0.0)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let x = ViewMatrix::new(1, 3, vec![0.0; 3]).unwrap();
        let h = HeadClassifier::zeros(Architecture::Linear, 2, 2).unwrap();
        assert!(h.predict_proba(&x).is_err());
        assert!(h.embed_for_selection(&x).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let h = HeadClassifier::init(HIDDEN, 2, 3, 1).unwrap();
        let json = serde_json::to_string(&h).unwrap();
        assert!(json.contains("\"type\":\"one_hidden_layer\""));
        let back: HeadClassifier = serde_json::from_str(&json).unwrap();
        assert_eq!(back, h);
        let bad = json.replace("\"input_dim\":2", "\"input_dim\":5");
        assert!(serde_json::from_str::<HeadClassifier>(&bad).is_err());
    }
}
