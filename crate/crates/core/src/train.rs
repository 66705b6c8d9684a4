//! Mini-batch Adam loop shared by the cross-entropy trainers.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Adam, EncoderParams, GradientTape};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss seen during each epoch (parameters move within the epoch).
    pub epoch_losses: Vec<f64>,
    /// Accuracy at threshold 0.5 over the last epoch.
    pub final_accuracy: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BatchStats {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

impl std::ops::AddAssign for BatchStats {
    fn add_assign(&mut self, o: Self) {
        self.loss += o.loss;
        self.correct += o.correct;
        self.count += o.count;
    }
}

/// Groups of instance indices are shuffled each epoch and packed into
/// batches of at least `batch_size` instances; a group is never split, so
/// instances sharing messages land in one batch and share encoder work.
pub fn pack_batches(groups: &[Vec<usize>], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut current = Vec::new();
    for g in order {
        current.extend_from_slice(&groups[g]);
        if current.len() >= batch_size {
            batches.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Runs Adam over `groups`. `grad` must add the summed loss gradient of the
/// batch into the tape and return summed stats; the loop averages.
pub fn fit(
    params: &mut EncoderParams,
    groups: &[Vec<usize>],
    config: &TrainConfig,
    mut grad: impl FnMut(&EncoderParams, &[usize], &mut GradientTape) -> BatchStats,
) -> Result<TrainReport> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if !(config.lr >= 0.0) {
        return Err(Error::Config(format!("learning rate must be non-negative, got {}", config.lr)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(params, config.lr);
    let mut tape = GradientTape::for_params(params);
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let mut stats = BatchStats::default();
        for batch in pack_batches(groups, config.batch_size, &mut rng) {
            tape.clear();
            let s = grad(params, &batch, &mut tape);
            if s.count == 0 {
                continue;
            }
            tape.scale(1.0 / s.count as f64);
            adam.step(params, &tape);
            stats += s;
        }
        let n = stats.count.max(1) as f64;
        log::debug!("epoch {epoch}: loss {:.5}", stats.loss / n);
        report.epoch_losses.push(stats.loss / n);
        report.final_accuracy = stats.correct as f64 / n;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_every_instance_once() {
        let groups = vec![vec![0, 1], vec![2], vec![3, 4, 5], vec![6]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = pack_batches(&groups, 3, &mut rng);
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
        assert!(batches[..batches.len() - 1].iter().all(|b| b.len() >= 3));
    }
}
