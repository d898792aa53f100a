//! Co-training of prompt-derived label models against feature-based heads.
//!
//! The crate is organised around the pieces of a co-training run:
//!
//! * [`data`]: view containers, file formats and train/validation splits.
//! * [`labelmodel`]: the calibrated, ensembled aggregator over `k` prompt
//!   probability vectors, its content-free initialization and verbalizer
//!   selection.
//! * [`learners`]: small trainable heads over frozen features.
//! * [`train`]: the shared cross-entropy training loop (AdamW, best-epoch
//!   snapshotting by balanced accuracy).
//! * [`selection`]: confident-data selection by model confidence or by the
//!   cut statistic over a weighted k-NN graph.
//! * [`cotrain`]: the alternating driver, metrics and run output.
//! * [`synth`]: synthetic two-view generators with gold labels.

pub mod cotrain;
pub mod data;
mod error;
pub mod labelmodel;
pub mod learners;
pub mod rng;
pub mod selection;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Number of items covered by a fraction of `n`, rounded down.
///
/// Products such as `0.7 * 100` are not exact in binary floating point, so a
/// small slack is applied before rounding.
pub fn floor_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + COUNT_SLACK).floor().max(0.0) as usize
}

/// Number of items covered by a fraction of `n`, rounded up.
pub fn ceil_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 - COUNT_SLACK).ceil().max(0.0) as usize
}

const COUNT_SLACK: f64 = 1e-9;
