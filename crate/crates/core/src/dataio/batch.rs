use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// Contrastive batches: every batch holds at least two items. A trailing
    /// single item is folded into the previous batch.
    Alignment,
    Plain,
}

/// Deterministic per-epoch batching over `n` items.
///
/// The order of epoch `e` is a pure function of `(seed, e)`.
#[derive(Clone, Debug)]
pub struct BatchPlan {
    n: usize,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
    mode: BatchMode,
}

impl BatchPlan {
    pub fn new(
        n: usize,
        batch_size: usize,
        seed: u64,
        shuffle: bool,
        mode: BatchMode,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if mode == BatchMode::Alignment && batch_size < 2 {
            return Err(Error::config(
                "batch_size",
                "alignment needs at least 2 clips per batch",
            ));
        }
        if mode == BatchMode::Alignment && n < 2 {
            return Err(Error::Data(format!(
                "alignment needs at least 2 clips, got {n}"
            )));
        }
        Ok(Self {
            n,
            batch_size,
            seed,
            shuffle,
            mode,
        })
    }

    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        if self.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            order.shuffle(&mut rng);
        }
        let mut batches: Vec<Vec<usize>> = order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect();
        if self.mode == BatchMode::Alignment
            && batches.len() > 1
            && batches.last().unwrap().len() == 1
        {
            let tail = batches.pop().unwrap();
            batches.last_mut().unwrap().extend(tail);
        }
        batches
    }
}
