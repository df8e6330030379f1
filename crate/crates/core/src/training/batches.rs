use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;

/// `max(4, ceil(n_train · epochs / total_steps))`.
pub fn batch_size(n_train: usize, cfg: &TrainConfig) -> usize {
    let steps = cfg.total_steps.max(1);
    (n_train * cfg.epochs).div_ceil(steps).max(4)
}

/// Exactly `total_steps` batches of sample indices. Each pass over the data
/// is a fresh seeded shuffle; a pass's last batch may be short.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub total_steps: usize,
    n_train: usize,
    order: Vec<usize>,
    pos: usize,
    emitted: usize,
    rng: ChaCha8Rng,
}

pub fn make_batches(n_train: usize, cfg: &TrainConfig, seed: u64) -> BatchPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    BatchPlan {
        batch_size: batch_size(n_train, cfg),
        total_steps: cfg.total_steps,
        n_train,
        order: (0..n_train).collect(),
        pos: n_train,
        emitted: 0,
        rng,
    }
}

impl Iterator for BatchPlan {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.emitted == self.total_steps || self.n_train == 0 {
            return None;
        }
        if self.pos >= self.n_train {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.n_train);
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        self.emitted += 1;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_size_arithmetic() {
        let cfg = TrainConfig::default();
        assert_eq!(batch_size(6000, &cfg), 4);
        assert_eq!(batch_size(30000, &cfg), 20);
        assert_eq!(batch_size(10, &cfg), 4);
    }

    #[test]
    fn emits_exactly_total_steps() {
        let cfg = TrainConfig::default();
        let plan = make_batches(6000, &cfg, 3);
        assert_eq!(plan.batch_size, 4);
        assert_eq!(plan.count(), 6000);
        let small = TrainConfig {
            total_steps: 7,
            epochs: 1,
            ..TrainConfig::default()
        };
        let batches: Vec<_> = make_batches(10, &small, 0).collect();
        assert_eq!(batches.len(), 7);
        // 10 samples in batches of 4: 4, 4, 2 then a new pass
        assert_eq!(batches.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2, 4, 4, 2, 4]);
        let mut first: Vec<usize> = batches[..3].concat();
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_shuffle() {
        let cfg = TrainConfig {
            total_steps: 50,
            ..TrainConfig::default()
        };
        let a: Vec<_> = make_batches(37, &cfg, 9).collect();
        let b: Vec<_> = make_batches(37, &cfg, 9).collect();
        let c: Vec<_> = make_batches(37, &cfg, 10).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
