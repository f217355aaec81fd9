use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::{LabeledExample, Source};
use crate::error::{Error, Result};
use crate::rng::{rng_from, STREAM_SHUFFLE};

/// One minibatch, split by label pool.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<'a> {
    pub global: Vec<&'a LabeledExample>,
    pub local: Vec<&'a LabeledExample>,
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.global.len() + self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Shuffles the whole training set (keyed by seed and epoch) and cuts it into
/// consecutive batches; global and local examples mix freely.
pub fn make_batches(
    train: &[LabeledExample],
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Batch<'_>>> {
    if batch_size < 2 {
        return Err(Error::Precondition(alloc::format!("batch size must be at least 2, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng_from(seed, &[STREAM_SHUFFLE, epoch as u64]));
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let (mut global, mut local) = (Vec::new(), Vec::new());
            for &i in chunk {
                match train[i].source {
                    Source::Global => global.push(&train[i]),
                    Source::Local => local.push(&train[i]),
                }
            }
            Batch { global, local }
        })
        .collect())
}
