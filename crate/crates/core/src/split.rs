//! Deterministic user-level train/validation split.
//!
//! Splitting by user rather than by row keeps every window of a user on the
//! same side, so the validation score is not inflated by adjacent windows of
//! users seen in training.

use crate::featurize::FeatureMatrix;
use crate::util::{fnv1a64, hash_fraction, splitmix64};

/// True when the user lands in the training part for this ratio and seed.
/// Stable across runs and insertion orders: depends only on the id bytes.
pub fn user_is_train(user_id: &str, train_ratio: f64, seed: u64) -> bool {
    hash_fraction(splitmix64(fnv1a64(user_id.as_bytes()) ^ seed)) < train_ratio
}

pub fn split_matrix(
    matrix: FeatureMatrix,
    train_ratio: f64,
    seed: u64,
) -> (FeatureMatrix, FeatureMatrix) {
    let columns = matrix.columns;
    let (train, valid): (Vec<_>, Vec<_>) = matrix
        .rows
        .into_iter()
        .partition(|row| user_is_train(&row.user_id, train_ratio, seed));
    (
        FeatureMatrix { columns: columns.clone(), rows: train },
        FeatureMatrix { columns, rows: valid },
    )
}
