//! Confident-data selection.
//!
//! Two rankings are provided: model confidence with a per-class floor, and
//! the cut statistic over a weighted k-nearest-neighbor graph. All ties
//! (scores and distances) are broken by ascending example index.

mod confidence;
mod cut;
mod knn;

pub use confidence::select_confident_mc;
pub use cut::{cut_statistic_scores, select_confident_cs, SelectionScore};
pub use knn::{knn_graph, NeighborGraph};

use serde::{Deserialize, Serialize};

/// Default neighbor count for the cut statistic.
pub const DEFAULT_NEIGHBORS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    ModelConfidence,
    CutStatistic,
}

impl std::fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionStrategy::ModelConfidence => "model_confidence",
            SelectionStrategy::CutStatistic => "cut_statistic",
        })
    }
}
