use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::kfold_split;
use crate::data::EmbeddingDataset;
use crate::models::{ModelConfig, Variant};
use crate::training::{train_fold, TrainConfig};
use crate::{Error, Result};

/// One (seed, fold) training run of a cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct CvJob {
    pub seed_index: usize,
    pub seed: u64,
    pub fold: usize,
    /// Seed of the fold's initialization, shuffling and dropout streams.
    pub train_seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Every job of a `k`-fold cross-validation repeated over `seeds`, in
/// seed-major order. Each seed draws its own folds.
pub fn plan_cv(n: usize, k: usize, seeds: &[u64]) -> Result<Vec<CvJob>> {
    if seeds.is_empty() {
        return Err(Error::Empty("seeds"));
    }
    let mut jobs = Vec::with_capacity(seeds.len() * k);
    for (seed_index, &seed) in seeds.iter().enumerate() {
        for (fold, f) in kfold_split(n, k, seed)?.into_iter().enumerate() {
            jobs.push(CvJob {
                seed_index,
                seed,
                fold,
                train_seed: seed ^ fold as u64,
                train: f.train,
                val: f.val,
            });
        }
    }
    Ok(jobs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub seed: u64,
    pub fold: usize,
    /// Optimizer step at which training diverged, when it did.
    pub step: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub accuracy: core::result::Result<f64, FoldFailure>,
    /// Wall-clock seconds, when the runner measured them.
    pub seconds: Option<f64>,
}

/// Trains and scores one job. Training failures become a [`FoldFailure`];
/// only configuration errors are returned as `Err`.
pub fn run_job(data: &EmbeddingDataset, job: &CvJob, model: &ModelConfig, train: &TrainConfig) -> Result<FoldOutcome> {
    model.validate()?;
    train.validate()?;
    let cfg = TrainConfig {
        seed: job.train_seed,
        ..train.clone()
    };
    let tr = data.subset(&job.train);
    let va = data.subset(&job.val);
    let accuracy = match train_fold(&tr, &va, model, &cfg) {
        Ok(fold) => Ok(fold.accuracy),
        Err(Error::Diverged { step }) => Err(FoldFailure {
            seed: job.seed,
            fold: job.fold,
            step: Some(step),
            reason: "diverged".to_string(),
        }),
        Err(e @ (Error::NonFinite(_) | Error::NonFiniteGradient(_))) => Err(FoldFailure {
            seed: job.seed,
            fold: job.fold,
            step: None,
            reason: e.to_string(),
        }),
        Err(e) => return Err(e),
    };
    Ok(FoldOutcome {
        accuracy,
        seconds: None,
    })
}

/// Accuracies of a repeated cross-validation.
///
/// Serialized fields are exactly the report schema; the configs and timings
/// stay in memory so that identical runs produce identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub variant: Variant,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub folds: usize,
    /// `accuracies[seed][fold]`; `None` marks a failed fold.
    pub accuracies: Vec<Vec<Option<f64>>>,
    /// Mean over each seed's successful folds.
    pub seed_means: Vec<Option<f64>>,
    /// Mean of the available seed means.
    pub grand_mean: Option<f64>,
    pub failures: Vec<FoldFailure>,
    #[serde(skip)]
    pub seconds: Vec<Vec<Option<f64>>>,
    #[serde(skip)]
    pub configs: Option<(ModelConfig, TrainConfig)>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl EvalReport {
    /// Aggregates outcomes (aligned with `jobs`) into a report.
    pub fn assemble(
        model: &str,
        dataset: &str,
        seeds: &[u64],
        folds: usize,
        jobs: &[CvJob],
        outcomes: &[FoldOutcome],
        configs: (ModelConfig, TrainConfig),
    ) -> Result<Self> {
        if jobs.len() != outcomes.len() {
            return Err(Error::LengthMismatch {
                left: jobs.len(),
                right: outcomes.len(),
            });
        }
        let mut accuracies = vec![vec![None; folds]; seeds.len()];
        let mut seconds = vec![vec![None; folds]; seeds.len()];
        let mut failures = Vec::new();
        for (job, out) in jobs.iter().zip(outcomes) {
            seconds[job.seed_index][job.fold] = out.seconds;
            match &out.accuracy {
                Ok(a) => accuracies[job.seed_index][job.fold] = Some(*a),
                Err(f) => failures.push(f.clone()),
            }
        }
        let seed_means: Vec<Option<f64>> = accuracies
            .iter()
            .map(|row| mean(row.iter().flatten().copied()))
            .collect();
        let grand_mean = mean(seed_means.iter().flatten().copied());
        Ok(Self {
            model: model.to_string(),
            variant: configs.0.variant,
            dataset: dataset.to_string(),
            seeds: seeds.to_vec(),
            folds,
            accuracies,
            seed_means,
            grand_mean,
            failures,
            seconds,
            configs: Some(configs),
        })
    }

    /// Number of successful (seed, fold) entries.
    pub fn completed(&self) -> usize {
        self.accuracies.iter().flatten().flatten().count()
    }
}

/// Sequential repeated `k`-fold cross-validation.
pub fn run_cv(
    data: &EmbeddingDataset,
    dataset_name: &str,
    model: &ModelConfig,
    train: &TrainConfig,
    seeds: &[u64],
    k: usize,
) -> Result<EvalReport> {
    data.validate()?;
    let jobs = plan_cv(data.n_samples(), k, seeds)?;
    let outcomes = jobs
        .iter()
        .map(|job| run_job(data, job, model, train))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::assemble(
        model.variant.name(),
        dataset_name,
        seeds,
        k,
        &jobs,
        &outcomes,
        (model.clone(), train.clone()),
    )
}
