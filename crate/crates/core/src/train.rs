//! Cross-entropy training shared by the label model and the heads.
//!
//! Mini-batch AdamW with bias correction and decoupled weight decay. After
//! every epoch the model is scored by balanced accuracy against the
//! pseudo-labels of a confident validation set and the best snapshot is
//! kept (earliest epoch on ties).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::ConfidentSet;
use crate::learners::balanced_accuracy;
use crate::rng::{rng_for, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    /// Label-model defaults: lr 1e-4, weight decay 5e-3, batch 64, 40 epochs.
    pub fn label_model() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 5e-3,
            batch_size: 64,
            epochs: 40,
            seed: 0,
        }
    }

    /// Head defaults: lr 1e-5, weight decay 0.01, batch 16, 20 epochs.
    pub fn head() -> Self {
        Self {
            learning_rate: 1e-5,
            weight_decay: 0.01,
            batch_size: 16,
            epochs: 20,
            seed: 0,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(
                "learning_rate",
                "must be finite and non-negative",
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(
                "weight_decay",
                "must be finite and non-negative",
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        Ok(())
    }
}

/// A model with a flat parameter vector and a differentiable
/// cross-entropy objective over indexed examples of `Input`.
pub trait Trainable: Clone {
    type Input: ?Sized;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Error unless `input` has the shape the model expects.
    fn check_input(&self, input: &Self::Input) -> Result<()>;

    /// Number of examples in `input`.
    fn input_len(input: &Self::Input) -> usize;

    /// Mean cross-entropy over `(index, label)` pairs; the gradient of that
    /// mean is written into `grad` (overwriting it).
    fn loss_and_grad(&self, input: &Self::Input, batch: &[(usize, usize)], grad: &mut [f64])
        -> f64;

    /// Argmax predictions for the given example indices.
    fn predict_labels(&self, input: &Self::Input, indices: &[usize]) -> Vec<usize>;

    fn num_labels(&self) -> usize;
}

/// AdamW state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl AdamW {
    pub fn new(num_params: usize, learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: vec![0.0; num_params],
            second: vec![0.0; num_params],
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps);
        let bc2 = 1.0 - self.beta2.powi(self.steps);
        let decay = 1.0 - self.learning_rate * self.weight_decay;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p * decay - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Per-epoch trace of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the whole confident set after each epoch.
    pub epoch_loss: Vec<f64>,
    /// Balanced accuracy on the validation pseudo-labels after each epoch.
    pub val_balanced_accuracy: Vec<f64>,
    /// Zero-based epoch whose snapshot was returned.
    pub best_epoch: usize,
}

fn check_set(name: &'static str, set: &ConfidentSet, len: usize) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyConfidentSet(format!("{name} has no entries")));
    }
    if let Some(i) = set.indices().find(|&i| i >= len) {
        return Err(Error::InvalidData(format!(
            "{name} index {i} out of range for {len} examples"
        )));
    }
    Ok(())
}

pub fn fit<M: Trainable>(
    init: M,
    input: &M::Input,
    confident: &ConfidentSet,
    val_input: &M::Input,
    val_confident: &ConfidentSet,
    config: &TrainConfig,
) -> Result<M> {
    fit_with_report(init, input, confident, val_input, val_confident, config).map(|(m, _)| m)
}

/// Train from `init` on `confident` and return the best snapshot by
/// validation balanced accuracy along with the epoch trace.
pub fn fit_with_report<M: Trainable>(
    init: M,
    input: &M::Input,
    confident: &ConfidentSet,
    val_input: &M::Input,
    val_confident: &ConfidentSet,
    config: &TrainConfig,
) -> Result<(M, TrainReport)> {
    config.validate()?;
    init.check_input(input)?;
    init.check_input(val_input)?;
    check_set("confident set", confident, M::input_len(input))?;
    check_set(
        "validation confident set",
        val_confident,
        M::input_len(val_input),
    )?;

    let labels = init.num_labels();
    let val_indices: Vec<usize> = val_confident.indices().collect();
    let val_reference: Vec<usize> = val_confident.labels().collect();

    let mut model = init;
    let mut optimizer = AdamW::new(
        model.params().len(),
        config.learning_rate,
        config.weight_decay,
    );
    let mut grad = vec![0.0; model.params().len()];
    let mut order: Vec<(usize, usize)> = confident.entries().to_vec();
    let mut rng = rng_for(config.seed, &[stream::SHUFFLE]);

    let mut report = TrainReport::default();
    let mut best: Option<(f64, M)> = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            model.loss_and_grad(input, batch, &mut grad);
            optimizer.step(model.params_mut(), &grad);
        }
        if let Some(i) = model.params().iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidData(format!(
                "parameter {i} diverged to a non-finite value in epoch {epoch}"
            )));
        }
        report
            .epoch_loss
            .push(model.loss_and_grad(input, confident.entries(), &mut grad));
        let predicted = model.predict_labels(val_input, &val_indices);
        let score = balanced_accuracy(&predicted, &val_reference, labels)?;
        report.val_balanced_accuracy.push(score);
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            report.best_epoch = epoch;
            best = Some((score, model.clone()));
        }
    }
    let (_, best) = best.expect("at least one epoch ran");
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut opt = AdamW::new(2, 0.1, 0.0);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[0.5, -2.0]);
        // bias-corrected first step is lr * sign(g)
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let mut opt = AdamW::new(1, 0.1, 0.5);
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.0]);
        assert!((p[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::label_model().validate().is_ok());
        assert!(TrainConfig {
            epochs: 0,
            ..TrainConfig::head()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::head()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::head()
        }
        .validate()
        .is_err());
    }
}
