use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::mean_std;
use crate::error::{Error, Result};

/// Fold index of each of `n` items: a seeded permutation dealt round-robin,
/// so fold sizes differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::field("folds", "must be >= 2"));
    }
    if n < folds {
        return Err(Error::invalid(format!("{n} volumes cannot fill {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold = vec![0; n];
    for (k, &i) in order.iter().enumerate() {
        fold[i] = k % folds;
    }
    Ok(fold)
}

/// Train and validation indices for `fold`.
pub fn fold_split(assignment: &[usize], fold: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&i| assignment[i] != fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the per-fold values.
    pub std: f64,
}

impl CvSummary {
    pub fn from_folds(per_fold: Vec<f64>) -> Result<Self> {
        let (mean, std) = mean_std(&per_fold).ok_or_else(|| Error::invalid("no folds"))?;
        Ok(Self { per_fold, mean, std })
    }
}

/// Runs `evaluate(fold, train, val)` for each fold and aggregates the scores.
pub fn run_cross_validation<F>(n: usize, folds: usize, seed: u64, mut evaluate: F) -> Result<CvSummary>
where
    F: FnMut(usize, &[usize], &[usize]) -> Result<f64>,
{
    let assignment = fold_assignment(n, folds, seed)?;
    let mut scores = Vec::with_capacity(folds);
    for f in 0..folds {
        let (train, val) = fold_split(&assignment, f);
        scores.push(evaluate(f, &train, &val)?);
    }
    CvSummary::from_folds(scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_into_three() {
        let a = fold_assignment(9, 3, 4).unwrap();
        for f in 0..3 {
            let (train, val) = fold_split(&a, f);
            assert_eq!((train.len(), val.len()), (6, 3));
        }
        assert_eq!(a, fold_assignment(9, 3, 4).unwrap());
        assert!(fold_assignment(2, 3, 0).is_err());
    }

    #[test]
    fn every_item_validated_once() {
        let mut seen = vec![0; 10];
        run_cross_validation(10, 3, 1, |_, train, val| {
            assert!(val.iter().all(|v| !train.contains(v)));
            val.iter().for_each(|&v| seen[v] += 1);
            Ok(0.0)
        })
        .unwrap();
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn std_is_population_std_of_fold_values() {
        let s = run_cross_validation(9, 3, 0, |f, _, _| Ok([0.8, 0.9, 1.0][f])).unwrap();
        assert!((s.mean - 0.9).abs() < 1e-12);
        let oracle = ((0.01 + 0.0 + 0.01) / 3.0f64).sqrt();
        assert!((s.std - oracle).abs() < 1e-12);
    }
}
