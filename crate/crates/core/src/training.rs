//! Bookkeeping shared by the trainers.

use crate::error::{Error, Result};
use crate::numcore::Rng;

/// Mean training-batch loss per epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

impl TrainLog {
    pub fn last(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Accumulates batch losses within an epoch and rejects non-finite values.
#[derive(Debug, Default)]
pub(crate) struct EpochMeter {
    sum: f64,
    count: usize,
}

impl EpochMeter {
    pub(crate) fn record(&mut self, what: &str, epoch: usize, loss: f64) -> Result<()> {
        if !loss.is_finite() {
            return Err(Error::State(format!(
                "{what}: non-finite training loss at epoch {epoch}"
            )));
        }
        self.sum += loss;
        self.count += 1;
        Ok(())
    }

    pub(crate) fn finish(self, log: &mut TrainLog) {
        if self.count > 0 {
            log.epoch_losses.push(self.sum / self.count as f64);
        }
    }
}

/// Shuffled minibatch index lists covering `0..n` once.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let order = rng.permutation(n);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}
