//! Independent oracles and instance builders shared by the integration
//! tests. Nothing here calls into the code under test for the quantity it
//! checks.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random embeddings: continuous coordinates, or small integers when
/// `grid` is set so that distance ties are common.
pub fn random_embeddings(rng: &mut ChaCha8Rng, u: usize, dim: usize, grid: bool) -> Vec<Vec<f64>> {
    (0..u)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    if grid {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random_range(-3.0..3.0)
                    }
                })
                .collect()
        })
        .collect()
}

/// Cut statistic evaluated straight from its definition: full pairwise
/// distances, neighbors by (distance, index), then J, mu, sigma^2.
pub fn brute_force_cut_scores(
    emb: &[Vec<f64>],
    labels: &[usize],
    num_labels: usize,
    k: usize,
) -> Vec<f64> {
    let u = emb.len();
    let mut freq = vec![0.0; num_labels];
    for &y in labels {
        freq[y] += 1.0 / u as f64;
    }
    (0..u)
        .map(|a| {
            let mut others: Vec<(f64, usize)> = (0..u)
                .filter(|&b| b != a)
                .map(|b| {
                    let d2: f64 = emb[a]
                        .iter()
                        .zip(&emb[b])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    (d2.sqrt(), b)
                })
                .collect();
            others.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
            let mut j = 0.0;
            let mut sum_w = 0.0;
            let mut sum_w2 = 0.0;
            for &(d, b) in others.iter().take(k) {
                let w = 1.0 / (1.0 + d);
                if labels[b] != labels[a] {
                    j += w;
                }
                sum_w += w;
                sum_w2 += w * w;
            }
            let p = freq[labels[a]];
            let mu = (1.0 - p) * sum_w;
            let var = p * (1.0 - p) * sum_w2;
            if var == 0.0 {
                0.0
            } else {
                (j - mu) / var.sqrt()
            }
        })
        .collect()
}

/// Confident-set metrics from raw `(index, pseudo)` pairs and pool gold
/// labels, counted with hash maps rather than a dense confusion matrix.
#[derive(Debug)]
pub struct MetricsOracle {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub normalized_coverage: Vec<f64>,
    pub tvd: f64,
    /// `[a][b]` = P(pseudo a | gold b) within the set.
    pub noise: Vec<Vec<f64>>,
}

pub fn metrics_oracle(entries: &[(usize, usize)], gold: &[usize], l: usize) -> MetricsOracle {
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut pair: HashMap<(usize, usize), usize> = HashMap::new();
    for &(i, y) in entries {
        *pair.entry((y, gold[i])).or_default() += 1;
    }
    let get = |a: usize, b: usize| pair.get(&(a, b)).copied().unwrap_or(0);
    let gold_total = |b: usize| gold.iter().filter(|&&g| g == b).count();
    let pseudo_total = |a: usize| entries.iter().filter(|e| e.1 == a).count();
    let in_set_gold = |b: usize| entries.iter().filter(|e| gold[e.0] == b).count();
    let n = entries.len();
    MetricsOracle {
        accuracy: div((0..l).map(|j| get(j, j)).sum(), n),
        precision: (0..l).map(|j| div(get(j, j), pseudo_total(j))).collect(),
        recall: (0..l).map(|j| div(get(j, j), gold_total(j))).collect(),
        normalized_coverage: (0..l)
            .map(|j| div(pseudo_total(j), gold_total(j)))
            .collect(),
        tvd: (0..l)
            .map(|j| (div(pseudo_total(j), n) - div(gold_total(j), gold.len())).abs())
            .sum::<f64>()
            / 2.0,
        noise: (0..l)
            .map(|a| (0..l).map(|b| div(get(a, b), in_set_gold(b))).collect())
            .collect(),
    }
}

/// Central finite difference of `f` at `x` along every coordinate.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Relative error `|a - n| / max(|a|, |n|)`, taken as 0 when both are
/// below `floor` in magnitude.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// A random probability vector with entries bounded away from zero.
pub fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}
