//! Fold workers and the single-split trainer behind the CLI.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Instant;

use clstx_core::data::EmbeddingDataset;
use clstx_core::evaluation::{kfold_split, plan_cv, run_job, CvJob, EvalReport, FoldOutcome};
use clstx_core::models::{ModelConfig, ParameterStore, Variant};
use clstx_core::training::{train_fold, TrainConfig};
use clstx_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Called once per finished job, from the worker that ran it.
pub type Progress<'a> = &'a (dyn Fn(&CvJob, &FoldOutcome) + Sync);

/// Runs `jobs` on up to `workers` threads. Outcomes come back in job order
/// whatever order they finish in, and each carries its wall-clock seconds.
pub fn run_jobs(
    data: &EmbeddingDataset,
    jobs: &[CvJob],
    model: &ModelConfig,
    train: &TrainConfig,
    workers: usize,
    progress: Option<Progress<'_>>,
) -> Result<Vec<FoldOutcome>> {
    let workers = workers.clamp(1, jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<Result<FoldOutcome>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let start = Instant::now();
                let r = run_job(data, &jobs[i], model, train).map(|mut o| {
                    o.seconds = Some(start.elapsed().as_secs_f64());
                    o
                });
                match &r {
                    Ok(o) => {
                        if let Some(p) = progress {
                            p(&jobs[i], o);
                        }
                    }
                    Err(_) => abort.store(true, Ordering::Relaxed),
                }
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    let mut out = Vec::with_capacity(jobs.len());
    let mut missing = false;
    for slot in slots {
        match slot.into_inner().unwrap() {
            Some(Ok(o)) => out.push(o),
            Some(Err(e)) => return Err(e),
            None => missing = true,
        }
    }
    assert!(!missing, "a job was skipped without an error");
    Ok(out)
}

/// Repeated `k`-fold cross-validation with parallel fold workers. The result
/// is identical to the sequential run for any worker count.
#[allow(clippy::too_many_arguments)]
pub fn run_cv_parallel(
    data: &EmbeddingDataset,
    model_name: &str,
    dataset_name: &str,
    model: &ModelConfig,
    train: &TrainConfig,
    seeds: &[u64],
    k: usize,
    workers: usize,
    progress: Option<Progress<'_>>,
) -> Result<EvalReport> {
    data.validate()?;
    model.validate()?;
    train.validate()?;
    let jobs = plan_cv(data.n_samples(), k, seeds)?;
    let outcomes = run_jobs(data, &jobs, model, train, workers, progress)?;
    EvalReport::assemble(
        model_name,
        dataset_name,
        seeds,
        k,
        &jobs,
        &outcomes,
        (model.clone(), train.clone()),
    )
}

/// Result of training on one seeded 90/10 split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub model: String,
    pub variant: Variant,
    pub dataset: String,
    pub seed: u64,
    pub train_samples: usize,
    pub val_samples: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub accuracy: f64,
}

/// Holds out a seeded tenth of `data`, trains on the rest and scores the
/// held-out part.
pub fn train_split(
    data: &EmbeddingDataset,
    model_name: &str,
    dataset_name: &str,
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<(SplitReport, ParameterStore)> {
    data.validate()?;
    let fold = kfold_split(data.n_samples(), 10, train.seed)?.swap_remove(0);
    let tr = data.subset(&fold.train);
    let va = data.subset(&fold.val);
    let trained = train_fold(&tr, &va, model, train)?;
    if trained.steps == 0 {
        return Err(Error::Empty("training steps"));
    }
    let report = SplitReport {
        model: model_name.to_string(),
        variant: model.variant,
        dataset: dataset_name.to_string(),
        seed: train.seed,
        train_samples: tr.n_samples(),
        val_samples: va.n_samples(),
        steps: trained.steps,
        final_loss: trained.final_loss,
        accuracy: trained.accuracy,
    };
    Ok((report, trained.params))
}
