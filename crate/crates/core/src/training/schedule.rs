use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::models::{Group, Variant};

/// Encoder-group learning rate at optimizer step `t` (1-based).
///
/// Linear warmup to `lr_max` over `warmup_steps`, then
/// `lr_max · sqrt(warmup_steps / t)`.
pub fn lr_at(t: usize, cfg: &TrainConfig) -> f64 {
    let warmup = cfg.warmup_steps as f64;
    let t = t as f64;
    if cfg.warmup_steps == 0 {
        return cfg.lr_max;
    }
    if t <= warmup {
        t / warmup * cfg.lr_max
    } else {
        cfg.lr_max * libm::sqrt(warmup / t)
    }
}

/// Learning rate per parameter group for one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupRates {
    pub cnn: f64,
    pub encoder: f64,
    pub head: f64,
}

impl GroupRates {
    pub fn at(t: usize, variant: Variant, cfg: &TrainConfig) -> Self {
        let scheduled = lr_at(t, cfg);
        let cnn = match variant {
            Variant::KimCnn => cfg.kim_cnn_lr,
            _ => cfg.cnn_lr,
        };
        Self {
            cnn,
            encoder: scheduled,
            head: scheduled,
        }
    }

    pub fn for_group(&self, group: Group) -> f64 {
        match group {
            Group::Cnn => self.cnn,
            Group::Encoder => self.encoder,
            Group::Head => self.head,
        }
    }
}

/// Step counter with the rates it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleState {
    pub step: usize,
    pub rates: GroupRates,
}

impl ScheduleState {
    pub fn at(step: usize, variant: Variant, cfg: &TrainConfig) -> Self {
        Self {
            step,
            rates: GroupRates::at(step, variant, cfg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_and_decay_values() {
        let cfg = TrainConfig::default();
        assert!((lr_at(500, &cfg) - 5e-4).abs() < 1e-15);
        assert!((lr_at(1000, &cfg) - 1e-3).abs() < 1e-15);
        assert!((lr_at(4000, &cfg) - 5e-4).abs() < 1e-15);
        assert!((lr_at(1001, &cfg) - lr_at(1000, &cfg)).abs() < 1e-6);
    }

    #[test]
    fn groups_follow_their_policies() {
        let cfg = TrainConfig::default();
        let r = GroupRates::at(10, Variant::CnnTransEnc, &cfg);
        assert_eq!(r.cnn, 1e-4);
        assert_eq!(r.encoder, lr_at(10, &cfg));
        assert_eq!(r.head, r.encoder);
        assert_eq!(GroupRates::at(10, Variant::KimCnn, &cfg).cnn, 1e-3);
    }
}
