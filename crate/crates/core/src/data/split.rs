use rand::seq::SliceRandom;

use super::Dataset;
use crate::rng::{rng_for, stream};
use crate::{floor_count, Error, Result};

/// A train/validation partition together with the original indices of
/// each side (kept in ascending order).
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub val: Dataset,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Uniform random split without replacement; the validation side gets
/// `floor(val_fraction * U)` examples.
pub fn split_train_val(dataset: &Dataset, val_fraction: f64, seed: u64) -> Result<Split> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::invalid(
            "val_fraction",
            format!("{val_fraction} is not in (0, 1)"),
        ));
    }
    let u = dataset.num_examples();
    let n_val = floor_count(val_fraction, u);
    if u < 2 || n_val == 0 {
        return Err(Error::invalid(
            "val_fraction",
            format!("{u} examples leave an empty validation split at fraction {val_fraction}"),
        ));
    }
    let mut order: Vec<usize> = (0..u).collect();
    order.shuffle(&mut rng_for(seed, &[stream::SPLIT]));
    let mut val_indices = order[..n_val].to_vec();
    let mut train_indices = order[n_val..].to_vec();
    val_indices.sort_unstable();
    train_indices.sort_unstable();
    Ok(Split {
        train: dataset.subset(&train_indices)?,
        val: dataset.subset(&val_indices)?,
        train_indices,
        val_indices,
    })
}
