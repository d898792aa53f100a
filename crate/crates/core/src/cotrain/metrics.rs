use serde::{Deserialize, Serialize};

use crate::data::ConfidentSet;
use crate::learners::balanced_accuracy;
use crate::{Error, Result};

/// Quality of a confident set against gold labels of the pool it was drawn
/// from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidentSetMetrics {
    pub size: usize,
    /// Fraction of entries whose pseudo-label equals gold.
    pub accuracy: f64,
    /// Per label: correct entries with that pseudo-label over all entries
    /// with that pseudo-label (0 when there are none).
    pub precision: Vec<f64>,
    /// Per label: correct entries with that pseudo-label over pool examples
    /// with that gold label.
    pub recall: Vec<f64>,
    /// Per label: entries with that pseudo-label over pool examples with that
    /// gold label. Not clamped, so it can exceed 1.
    pub normalized_coverage: Vec<f64>,
    /// Total variation distance between the pseudo-label balance of the set
    /// and the gold balance of the pool.
    pub balance_tvd: f64,
    /// `noise_rates[a][b]` is `P[pseudo = a | gold = b]` within the set.
    pub noise_rates: Vec<Vec<f64>>,
    /// `P[pseudo = 1 | gold = 0] + P[pseudo = 0 | gold = 1]`, binary tasks only.
    pub total_noise: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Evaluate `confident` against `gold`, the labels of all `num_examples`
/// pool examples.
pub fn iteration_metrics(
    confident: &ConfidentSet,
    gold: &[usize],
    num_labels: usize,
    num_examples: usize,
) -> Result<ConfidentSetMetrics> {
    if gold.len() != num_examples {
        return Err(Error::mismatch(
            "gold label count",
            num_examples,
            gold.len(),
        ));
    }
    if let Some(&y) = gold.iter().find(|&&y| y >= num_labels) {
        return Err(Error::InvalidData(format!(
            "gold label {y} out of range for {num_labels} labels"
        )));
    }
    let l = num_labels;
    // confusion[a][b]: pseudo a, gold b
    let mut confusion = vec![vec![0usize; l]; l];
    for &(i, y) in confident.entries() {
        if i >= num_examples || y >= l {
            return Err(Error::InvalidData(format!(
                "confident entry ({i}, {y}) out of range"
            )));
        }
        confusion[y][gold[i]] += 1;
    }
    let mut gold_count = vec![0usize; l];
    for &y in gold {
        gold_count[y] += 1;
    }
    let size = confident.len();
    let predicted: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
    let in_set_gold: Vec<usize> = (0..l)
        .map(|b| (0..l).map(|a| confusion[a][b]).sum())
        .collect();
    let correct: usize = (0..l).map(|j| confusion[j][j]).sum();

    let tvd = 0.5
        * (0..l)
            .map(|j| (ratio(predicted[j], size) - ratio(gold_count[j], num_examples)).abs())
            .sum::<f64>();
    let noise_rates: Vec<Vec<f64>> = (0..l)
        .map(|a| {
            (0..l)
                .map(|b| ratio(confusion[a][b], in_set_gold[b]))
                .collect()
        })
        .collect();
    let total_noise = (l == 2).then(|| noise_rates[1][0] + noise_rates[0][1]);

    Ok(ConfidentSetMetrics {
        size,
        accuracy: ratio(correct, size),
        precision: (0..l)
            .map(|j| ratio(confusion[j][j], predicted[j]))
            .collect(),
        recall: (0..l)
            .map(|j| ratio(confusion[j][j], gold_count[j]))
            .collect(),
        normalized_coverage: (0..l).map(|j| ratio(predicted[j], gold_count[j])).collect(),
        balance_tvd: tvd,
        noise_rates,
        total_noise,
    })
}

/// Fraction of positions where `predicted` equals `gold`.
pub fn accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::mismatch(
            "prediction count",
            gold.len(),
            predicted.len(),
        ));
    }
    if gold.is_empty() {
        return Err(Error::invalid("gold", "no examples to score"));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Predictions scored against gold labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub num_examples: usize,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    /// Per label, 0 when the label is never predicted.
    pub precision: Vec<f64>,
    /// Per label, 0 when the label never occurs in gold.
    pub recall: Vec<f64>,
}

pub fn classification_report(
    predicted: &[usize],
    gold: &[usize],
    num_labels: usize,
) -> Result<ClassificationReport> {
    let acc = accuracy(predicted, gold)?;
    let balanced = balanced_accuracy(predicted, gold, num_labels)?;
    let mut tp = vec![0usize; num_labels];
    let mut pred_count = vec![0usize; num_labels];
    let mut gold_count = vec![0usize; num_labels];
    for (&p, &g) in predicted.iter().zip(gold) {
        pred_count[p] += 1;
        gold_count[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    Ok(ClassificationReport {
        num_examples: gold.len(),
        accuracy: acc,
        balanced_accuracy: balanced,
        precision: (0..num_labels)
            .map(|j| ratio(tp[j], pred_count[j]))
            .collect(),
        recall: (0..num_labels)
            .map(|j| ratio(tp[j], gold_count[j]))
            .collect(),
    })
}
