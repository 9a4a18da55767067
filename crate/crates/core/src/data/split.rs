use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub folds: Vec<Vec<String>>,
}

impl DatasetSplit {
    /// Training ids outside fold `k`.
    pub fn fold_train(&self, k: usize) -> Vec<String> {
        self.folds.iter().enumerate().filter(|&(i, _)| i != k).flat_map(|(_, f)| f.iter().cloned()).collect()
    }
}

/// Splits match ids by a seeded shuffle of their sorted order: the last
/// `ceil(test_fraction * n)` become the test set and the rest are dealt into
/// contiguous folds, earlier folds taking the remainder.
pub fn split_dataset(match_ids: &[String], test_fraction: f64, folds: usize, seed: u64) -> Result<DatasetSplit> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction must lie in [0, 1), got {test_fraction}")));
    }
    if folds == 0 {
        return Err(Error::Config("at least one fold is required".into()));
    }
    let mut ids: Vec<String> = match_ids.to_vec();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n = ids.len();
    let n_test = ((test_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let n_train = n - n_test;
    if n_train < folds {
        return Err(Error::Config(format!("{n_train} training matches cannot fill {folds} folds")));
    }
    let test = ids.split_off(n_train);
    let (base, extra) = (n_train / folds, n_train % folds);
    let mut fold_ids = Vec::with_capacity(folds);
    let mut start = 0;
    for k in 0..folds {
        let size = base + usize::from(k < extra);
        fold_ids.push(ids[start..start + size].to_vec());
        start += size;
    }
    Ok(DatasetSplit { train: ids, test, folds: fold_ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i:03}")).collect()
    }

    #[test]
    fn ten_matches() {
        let s = split_dataset(&ids(10), 0.2, 5, 1).unwrap();
        assert_eq!(s.test.len(), 2);
        let sizes: Vec<usize> = s.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2, 2, 1, 1]);
        let train: HashSet<_> = s.train.iter().collect();
        assert!(s.test.iter().all(|t| !train.contains(t)));
        let folded: Vec<String> = s.folds.concat();
        assert_eq!(folded, s.train);
        assert_eq!(s.fold_train(0).len(), 6);
    }

    #[test]
    fn deterministic_and_order_insensitive() {
        let mut rev = ids(23);
        rev.reverse();
        assert_eq!(split_dataset(&ids(23), 0.2, 5, 9).unwrap(), split_dataset(&rev, 0.2, 5, 9).unwrap());
    }

    #[test]
    fn too_few_matches() {
        assert!(matches!(split_dataset(&ids(5), 0.2, 5, 0), Err(Error::Config(_))));
    }
}
