//! Cross-validation protocol, accuracy aggregation and pairwise ASO
//! comparison with Bonferroni correction.

mod aso;
mod compare;
mod kfold;
mod report;

pub use aso::{
    aso_epsilon_min, aso_with_grid, empirical_quantile, normal_quantile, violation_ratio, AsoResult, DEFAULT_BOOTSTRAP,
    DEFAULT_GRID,
};
pub use compare::{compare_all, compare_scores, AsoMatrix};
pub use kfold::{kfold_split, Fold};
pub use report::{plan_cv, run_cv, run_job, CvJob, EvalReport, FoldFailure, FoldOutcome};

use crate::{Error, Result};

/// Fraction of exact matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::Empty("accuracy"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}
