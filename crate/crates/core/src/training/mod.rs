//! Optimizer, learning-rate schedule, batching and the fold-level loop.

mod adam;
mod batches;
mod schedule;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use batches::{batch_size, make_batches, BatchPlan};
pub use schedule::{lr_at, GroupRates, ScheduleState};

use crate::data::EmbeddingDataset;
use crate::models::{self, Mode, ModelConfig, ParameterStore};
use crate::{Error, Result, Tape, Tensor};

fn steps_default() -> usize {
    6000
}
fn warmup_default() -> usize {
    1000
}
fn lr_max_default() -> f64 {
    1e-3
}
fn cnn_lr_default() -> f64 {
    1e-4
}
fn kim_lr_default() -> f64 {
    1e-3
}
fn beta1_default() -> f64 {
    0.9
}
fn beta2_default() -> f64 {
    0.98
}
fn eps_default() -> f64 {
    1e-9
}
fn epochs_default() -> usize {
    4
}

/// Optimizer and schedule constants. Absent JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "steps_default")]
    pub total_steps: usize,
    #[serde(default = "warmup_default")]
    pub warmup_steps: usize,
    #[serde(default = "lr_max_default")]
    pub lr_max: f64,
    /// Constant rate of the CNN[CLS] filter banks.
    #[serde(default = "cnn_lr_default")]
    pub cnn_lr: f64,
    /// Constant rate of the Kim-CNN filters.
    #[serde(default = "kim_lr_default")]
    pub kim_cnn_lr: f64,
    #[serde(default = "beta1_default")]
    pub beta1: f64,
    #[serde(default = "beta2_default")]
    pub beta2: f64,
    #[serde(default = "eps_default")]
    pub eps: f64,
    /// Target number of passes over the training split; sets the batch size.
    #[serde(default = "epochs_default")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: steps_default(),
            warmup_steps: warmup_default(),
            lr_max: lr_max_default(),
            cnn_lr: cnn_lr_default(),
            kim_cnn_lr: kim_lr_default(),
            beta1: beta1_default(),
            beta2: beta2_default(),
            eps: eps_default(),
            epochs: epochs_default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 || self.epochs == 0 {
            return Err(Error::Config("total_steps and epochs must be positive".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        for (name, v) in [
            ("lr_max", self.lr_max),
            ("cnn_lr", self.cnn_lr),
            ("kim_cnn_lr", self.kim_cnn_lr),
            ("eps", self.eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// What the training loop reports after each optimizer step.
pub struct StepInfo<'a> {
    pub step: usize,
    pub loss: f64,
    pub rates: GroupRates,
    pub params: &'a ParameterStore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainedFold {
    pub params: ParameterStore,
    /// Evaluation-mode accuracy on the validation split after the last step.
    pub accuracy: f64,
    pub steps: usize,
    pub final_loss: f64,
}

/// Fraction of samples whose most probable class is the label.
pub fn evaluate_accuracy(params: &ParameterStore, cfg: &ModelConfig, data: &EmbeddingDataset) -> Result<f64> {
    let stacks: Vec<Tensor> = (0..data.n_samples()).map(|i| data.stack(i)).collect();
    let preds = models::predict_many(params, cfg, &stacks)?;
    let labels: Vec<usize> = data.labels().iter().map(|&l| l as usize).collect();
    crate::evaluation::accuracy(&preds, &labels)
}

/// Mean cross-entropy of one batch and its gradients, in catalog order.
pub fn loss_and_grads(
    params: &ParameterStore,
    cfg: &ModelConfig,
    stacks: &[Tensor],
    labels: &[usize],
    mode: &mut Mode<'_>,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let loss = models::batch_loss(&mut tape, &bound, cfg, stacks, labels, mode)?;
    let value = tape.value(loss)[0];
    let mut grads = tape.backward(loss)?;
    let out = bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(v, t)| grads.take(*v).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    Ok((value, out))
}

/// [`train_fold_with`] without an observer.
pub fn train_fold(
    train: &EmbeddingDataset,
    val: &EmbeddingDataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainedFold> {
    train_fold_with(train, val, model, cfg, &mut |_| Control::Continue)
}

/// Xavier-initializes the model from `cfg.seed`, runs `cfg.total_steps` Adam
/// steps on the training split, then scores the validation split.
///
/// The observer sees every step and may end training early. A non-finite
/// loss or gradient ends the fold with [`Error::Diverged`].
pub fn train_fold_with(
    train: &EmbeddingDataset,
    val: &EmbeddingDataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(StepInfo<'_>) -> Control,
) -> Result<TrainedFold> {
    model.validate()?;
    cfg.validate()?;
    for ds in [train, val] {
        if ds.n_layers() != model.n_layers || ds.hidden() != model.hidden || ds.n_classes() != model.n_classes {
            return Err(Error::Config(format!(
                "dataset is {} classes of {}x{} stacks, model expects {} classes of {}x{}",
                ds.n_classes(),
                ds.n_layers(),
                ds.hidden(),
                model.n_classes,
                model.n_layers,
                model.hidden
            )));
        }
    }
    if train.n_samples() == 0 {
        return Err(Error::Empty("training split"));
    }
    let mut params = ParameterStore::init(model, cfg.seed)?;
    let mut state = AdamState::new(&params);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(2);

    let mut steps = 0;
    let mut final_loss = f64::NAN;
    for (i, batch) in make_batches(train.n_samples(), cfg, cfg.seed).enumerate() {
        let step = i + 1;
        let stacks: Vec<Tensor> = batch.iter().map(|&j| train.stack(j)).collect();
        let labels: Vec<usize> = batch.iter().map(|&j| train.label(j)).collect();
        let mut mode = Mode::Train(&mut dropout_rng);
        let (loss, grads) = match loss_and_grads(&params, model, &stacks, &labels, &mut mode) {
            Ok(r) => r,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let rates = GroupRates::at(step, model.variant, cfg);
        match adam_step(&mut params, &grads, &mut state, &rates, cfg) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient(_)) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        }
        steps = step;
        final_loss = loss;
        let info = StepInfo {
            step,
            loss,
            rates,
            params: &params,
        };
        if observer(info) == Control::Stop {
            break;
        }
    }
    let accuracy = evaluate_accuracy(&params, model, val)?;
    Ok(TrainedFold {
        params,
        accuracy,
        steps,
        final_loss,
    })
}
