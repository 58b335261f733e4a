use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    /// Subset of `train_ids` with voxel labels, used to train the box corrector.
    pub pixel_labeled_ids: Vec<String>,
}

/// Seeded shuffle into train/validation, then a seeded draw of
/// `pixel_labeled_count` training ids.
pub fn split_dataset(
    ids: &[String],
    train_fraction: f64,
    pixel_labeled_count: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut rng);
    let n_train = (ids.len() as f64 * train_fraction).round() as usize;
    let val_ids = shuffled.split_off(n_train);
    let train_ids = shuffled;
    if pixel_labeled_count > train_ids.len() {
        return Err(Error::invalid(format!(
            "{pixel_labeled_count} pixel-labeled ids requested from a training set of {}",
            train_ids.len()
        )));
    }
    let mut pool = train_ids.clone();
    pool.shuffle(&mut rng);
    pool.truncate(pixel_labeled_count);
    Ok(DatasetSplit {
        train_ids,
        val_ids,
        pixel_labeled_ids: pool,
    })
}

/// Percentage protocol: `fraction` of the training set, at least one volume.
pub fn pixel_labeled_count_from_fraction(train_len: usize, fraction: f64) -> usize {
    ((train_len as f64 * fraction).round() as usize).clamp(1, train_len.max(1))
}
