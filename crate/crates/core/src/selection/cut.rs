use super::NeighborGraph;
use crate::data::ConfidentSet;
use crate::{floor_count, Error, Result};

/// Per-example ranking score (lower is more confident) and pseudo-label.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionScore {
    pub scores: Vec<f64>,
    pub pseudo_labels: Vec<usize>,
    pub num_labels: usize,
}

impl SelectionScore {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Standardized cut statistic of every vertex.
///
/// With `P_y` the empirical frequency of pseudo-label `y`:
///
/// ```text
/// J_u     = sum_{v in N(u)} w_uv [y_u != y_v]
/// mu_u    = (1 - P_{y_u}) sum w_uv
/// sigma_u = sqrt(P_{y_u} (1 - P_{y_u}) sum w_uv^2)
/// s_u     = (J_u - mu_u) / sigma_u        (0 when sigma_u = 0)
/// ```
pub fn cut_statistic_scores(
    pseudo_labels: &[usize],
    graph: &NeighborGraph,
    num_labels: usize,
) -> Result<SelectionScore> {
    let u = pseudo_labels.len();
    if graph.num_vertices() != u {
        return Err(Error::mismatch(
            "neighbor graph vertices",
            u,
            graph.num_vertices(),
        ));
    }
    let mut counts = vec![0usize; num_labels];
    for &y in pseudo_labels {
        if y >= num_labels {
            return Err(Error::InvalidData(format!(
                "pseudo-label {y} out of range for {num_labels} labels"
            )));
        }
        counts[y] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / u as f64).collect();

    let scores = (0..u)
        .map(|v| {
            let y = pseudo_labels[v];
            let p = freq[y];
            let (mut cut, mut total, mut total_sq) = (0.0, 0.0, 0.0);
            for (&n, &w) in graph.neighbors(v).iter().zip(graph.weights(v)) {
                if pseudo_labels[n] != y {
                    cut += w;
                }
                total += w;
                total_sq += w * w;
            }
            let mean = (1.0 - p) * total;
            let sd = (p * (1.0 - p) * total_sq).sqrt();
            if sd > 0.0 {
                (cut - mean) / sd
            } else {
                0.0
            }
        })
        .collect();
    Ok(SelectionScore {
        scores,
        pseudo_labels: pseudo_labels.to_vec(),
        num_labels,
    })
}

pub(crate) fn check_coverage(coverage: f64) -> Result<()> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::invalid(
            "coverage",
            format!("{coverage} is not in (0, 1]"),
        ));
    }
    Ok(())
}

/// The `floor(coverage * U)` lowest-scoring examples with their pseudo-labels.
pub fn select_confident_cs(scores: &SelectionScore, coverage: f64) -> Result<ConfidentSet> {
    check_coverage(coverage)?;
    let u = scores.len();
    let n = floor_count(coverage, u);
    if n == 0 {
        return Err(Error::EmptyConfidentSet(format!(
            "coverage {coverage} of {u} examples selects nothing"
        )));
    }
    let mut order: Vec<usize> = (0..u).collect();
    order.sort_by(|&a, &b| {
        scores.scores[a]
            .total_cmp(&scores.scores[b])
            .then(a.cmp(&b))
    });
    ConfidentSet::new(
        order[..n]
            .iter()
            .map(|&i| (i, scores.pseudo_labels[i]))
            .collect(),
        u,
        scores.num_labels,
    )
}
