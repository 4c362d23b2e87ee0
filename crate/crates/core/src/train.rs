//! Bits shared by the training loops: epoch shuffling and divergence checks.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Yields index batches over `0..len`, reshuffling at every epoch boundary.
/// The order depends only on `seed`.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    len: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(len: usize, batch: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Config("training set is empty".into()));
        }
        if batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let mut s = Self {
            len,
            batch: batch.min(len),
            seed,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        self.order = (0..self.len).collect();
        let mut r = rng::substream(self.seed, &[tag::SHUFFLE, self.epoch]);
        self.order.shuffle(&mut r);
        self.pos = 0;
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Next batch; returns `true` as the second value when this batch
    /// completed an epoch.
    pub fn next_batch(&mut self) -> (Vec<usize>, bool) {
        if self.pos + self.batch > self.len {
            self.epoch += 1;
            self.reshuffle();
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        (out, self.pos + self.batch > self.len)
    }
}

pub fn check_loss(step: usize, loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        tracing::error!(step, loss, "non-finite training loss, aborting");
        Err(Error::Diverged { step, loss })
    }
}

/// Per-step and per-epoch losses from one training run.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    #[serde(skip)]
    epoch_acc: (f64, usize),
}

impl TrainReport {
    pub fn record(&mut self, loss: f64, epoch_done: bool) {
        self.step_losses.push(loss);
        self.epoch_acc.0 += loss;
        self.epoch_acc.1 += 1;
        if epoch_done {
            self.close_epoch();
        }
    }

    fn close_epoch(&mut self) {
        if self.epoch_acc.1 > 0 {
            let mean = self.epoch_acc.0 / self.epoch_acc.1 as f64;
            tracing::info!(epoch = self.epoch_losses.len(), loss = mean, "epoch finished");
            self.epoch_losses.push(mean);
            self.epoch_acc = (0.0, 0);
        }
    }

    /// Flushes a partial epoch.
    pub fn finish(mut self) -> Self {
        self.close_epoch();
        self
    }

    /// Mean of the first and last `window` step losses.
    pub fn head_tail(&self, window: usize) -> (f64, f64) {
        let w = window.clamp(1, self.step_losses.len().max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        let n = self.step_losses.len();
        (mean(&self.step_losses[..w.min(n)]), mean(&self.step_losses[n.saturating_sub(w)..]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_epoch_once() {
        let mut s = BatchSampler::new(10, 3, 1).unwrap();
        let mut seen = Vec::new();
        for _ in 0..3 {
            seen.extend(s.next_batch().0);
        }
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 9);
        let (_, _) = s.next_batch();
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn divergence_is_reported() {
        assert!(matches!(check_loss(7, f64::NAN), Err(Error::Diverged { step: 7, .. })));
        assert_eq!(check_loss(0, 0.5).unwrap(), 0.5);
    }
}
