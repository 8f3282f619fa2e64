use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::synthdata::Dataset;

/// Repetition-wise k-fold split. Fold `f` tests on `test[f]` and trains on the
/// remaining repetitions of the target motions; novel motions are tested in
/// every fold and never trained on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub test: Vec<Vec<u32>>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.test.len()
    }

    /// Every repetition index, ascending.
    pub fn repetitions(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.test.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }

    pub fn train(&self, fold: usize) -> Vec<u32> {
        self.repetitions().into_iter().filter(|r| !self.test[fold].contains(r)).collect()
    }
}

/// Shuffles the target repetition indices with `seed` and deals them round-robin.
pub fn kfold_by_repetition(dataset: &Dataset, k: usize, seed: u64) -> Result<FoldSplit> {
    let targets = dataset.target_ids();
    let mut reps: Vec<u32> =
        dataset.recordings.iter().filter(|r| targets.contains(&r.motion_id)).map(|r| r.repetition).collect();
    reps.sort_unstable();
    reps.dedup();
    split_repetitions(&reps, k, seed)
}

pub fn split_repetitions(reps: &[u32], k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    if reps.len() < k {
        return Err(Error::InvalidConfig(format!("{} repetitions cannot fill {k} folds", reps.len())));
    }
    let mut order = reps.to_vec();
    Rng::new(seed).shuffle(&mut order);
    let mut test = vec![Vec::new(); k];
    for (i, r) in order.into_iter().enumerate() {
        test[i % k].push(r);
    }
    test.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldSplit { test })
}
