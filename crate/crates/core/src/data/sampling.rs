use rand::seq::SliceRandom;
use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Target indices divided into the labelled set `T` and its complement `U`,
/// which doubles as the test set. Both lists are ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub labelled: Vec<usize>,
    pub unlabelled: Vec<usize>,
}

/// Draws `labels_per_class` samples of every class into `T`.
pub fn make_splits(target: &Dataset, labels_per_class: usize, seed: u64) -> Result<Split> {
    if labels_per_class == 0 {
        return Err(Error::Config("label budget must be at least 1 per class".into()));
    }
    let mut rng = stream_rng(seed, &[0x5350_4c54]);
    let mut in_t = vec![false; target.len()];
    for (class, mut members) in target.indices_by_class().into_iter().enumerate() {
        if members.len() < labels_per_class {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} samples, budget needs {labels_per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for &i in &members[..labels_per_class] {
            in_t[i] = true;
        }
    }
    let (labelled, unlabelled) = (0..target.len()).partition(|&i| in_t[i]);
    Ok(Split {
        labelled,
        unlabelled,
    })
}

/// One training iteration's worth of indices. `source` indexes `S`;
/// `labelled` and `unlabelled` are positions within the `T` and `U` lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedBatch {
    pub source: Vec<usize>,
    pub labelled: Vec<usize>,
    pub unlabelled: Vec<usize>,
}

/// Per-epoch schedule: `S` is shuffled and walked sequentially with the
/// incomplete tail dropped; each source batch is paired with same-size
/// batches drawn uniformly with replacement from `T` and `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochPlan {
    source_len: usize,
    labelled_len: usize,
    unlabelled_len: usize,
    batch_size: usize,
    seed: u64,
}

impl EpochPlan {
    pub fn new(
        source_len: usize,
        labelled_len: usize,
        unlabelled_len: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        for (name, len) in [
            ("source", source_len),
            ("labelled target", labelled_len),
            ("unlabelled target", unlabelled_len),
        ] {
            if len == 0 {
                return Err(Error::InsufficientData(format!("{name} set is empty")));
            }
        }
        if source_len < batch_size {
            return Err(Error::InsufficientData(format!(
                "source set has {source_len} samples, fewer than one batch of {batch_size}"
            )));
        }
        Ok(Self {
            source_len,
            labelled_len,
            unlabelled_len,
            batch_size,
            seed,
        })
    }

    pub fn iterations(&self) -> usize {
        self.source_len / self.batch_size
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// The batches of epoch `epoch`, reproducible from `(seed, epoch)` alone.
    pub fn epoch(&self, epoch: usize) -> Vec<AlignedBatch> {
        let mut rng = stream_rng(self.seed, &[epoch as u64]);
        let mut order: Vec<usize> = (0..self.source_len).collect();
        order.shuffle(&mut rng);
        order
            .chunks_exact(self.batch_size)
            .map(|source| {
                let labelled = (0..self.batch_size)
                    .map(|_| rng.random_range(0..self.labelled_len))
                    .collect();
                let unlabelled = (0..self.batch_size)
                    .map(|_| rng.random_range(0..self.unlabelled_len))
                    .collect();
                AlignedBatch {
                    source: source.to_vec(),
                    labelled,
                    unlabelled,
                }
            })
            .collect()
    }
}
