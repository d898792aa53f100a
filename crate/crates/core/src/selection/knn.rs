use rayon::prelude::*;

use crate::data::ViewMatrix;
use crate::{Error, Result};

/// Exact K-nearest-neighbor graph with weights `1 / (1 + distance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    degree: usize,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
}

impl NeighborGraph {
    pub fn num_vertices(&self) -> usize {
        self.neighbors.len().checked_div(self.degree).unwrap_or(0)
    }

    /// Neighbors per vertex, `min(K, U - 1)`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Neighbors of `u`, nearest first.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[u * self.degree..(u + 1) * self.degree]
    }

    pub fn weights(&self, u: usize) -> &[f64] {
        &self.weights[u * self.degree..(u + 1) * self.degree]
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Brute-force K-NN over the rows of `embeddings`; self is excluded and
/// distance ties go to the lower index.
pub fn knn_graph(embeddings: &ViewMatrix, k: usize) -> Result<NeighborGraph> {
    let u = embeddings.rows();
    if u < 2 {
        return Err(Error::invalid(
            "embeddings",
            format!("need at least 2 rows, got {u}"),
        ));
    }
    if k == 0 {
        return Err(Error::invalid("neighbors", "K must be at least 1"));
    }
    let degree = k.min(u - 1);
    let per_vertex: Vec<Vec<(f64, usize)>> = (0..u)
        .into_par_iter()
        .map(|i| {
            let x = embeddings.row(i);
            let mut cand: Vec<(f64, usize)> = (0..u)
                .filter(|&j| j != i)
                .map(|j| (euclidean(x, embeddings.row(j)), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if degree < cand.len() {
                cand.select_nth_unstable_by(degree - 1, cmp);
                cand.truncate(degree);
            }
            cand.sort_unstable_by(cmp);
            cand
        })
        .collect();
    let mut neighbors = Vec::with_capacity(u * degree);
    let mut weights = Vec::with_capacity(u * degree);
    for cand in per_vertex {
        for (d, j) in cand {
            neighbors.push(j);
            weights.push(1.0 / (1.0 + d));
        }
    }
    Ok(NeighborGraph {
        degree,
        neighbors,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn points(xs: &[f64]) -> ViewMatrix {
        ViewMatrix::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    #[test]
    fn collinear_points() {
        let g = knn_graph(&points(&[0.0, 1.0, 10.0]), 1).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.neighbors(2), &[1]);
        assert_eq!(g.weights(2), &[1.0 / 10.0]);
    }

    #[test]
    fn identical_points_have_unit_weight() {
        let g = knn_graph(&points(&[3.0, 3.0]), 1).unwrap();
        assert_eq!(g.weights(0), &[1.0]);
    }

    #[test]
    fn saturated_degree() {
        let g = knn_graph(&points(&[0.0, 5.0, 1.0, 2.0]), 10).unwrap();
        assert_eq!(g.degree(), 3);
        let mut n = g.neighbors(0).to_vec();
        n.sort_unstable();
        assert_eq!(n, vec![1, 2, 3]);
        assert_eq!(g.neighbors(0), &[2, 3, 1]);
    }

    #[test]
    fn distance_ties_go_to_lower_index() {
        // 0 is equidistant from 1 and 2
        let g = knn_graph(&points(&[0.0, 1.0, -1.0]), 1).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
    }

    #[test]
    fn errors() {
        assert!(knn_graph(&points(&[1.0]), 1).is_err());
        assert!(knn_graph(&points(&[1.0, 2.0]), 0).is_err());
    }

    proptest! {
        #[test]
        fn matches_full_sort(
            xs in proptest::collection::vec(-3i32..3, 2..25),
            k in 1usize..8,
        ) {
            // small integer grid forces plenty of distance ties
            let m = points(&xs.iter().map(|&x| x as f64).collect::<Vec<_>>());
            let g = knn_graph(&m, k).unwrap();
            for i in 0..xs.len() {
                let mut all: Vec<(f64, usize)> = (0..xs.len())
                    .filter(|&j| j != i)
                    .map(|j| (((xs[i] - xs[j]) as f64).abs(), j))
                    .collect();
                all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let expect: Vec<usize> = all.iter().take(k.min(xs.len() - 1)).map(|p| p.1).collect();
                prop_assert_eq!(g.neighbors(i), &expect[..]);
                prop_assert!(!g.neighbors(i).contains(&i));
                prop_assert!(g.weights(i).iter().all(|&w| w > 0.0 && w <= 1.0));
            }
        }
    }
}
