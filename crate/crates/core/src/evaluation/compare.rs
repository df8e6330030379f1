use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{aso_epsilon_min, EvalReport};
use crate::{Error, Result};

/// Pairwise `ε_min` of "row model dominates column model".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsoMatrix {
    pub models: Vec<String>,
    pub alpha: f64,
    /// `alpha` divided by the number of ordered comparisons.
    pub adjusted_alpha: f64,
    pub comparisons: usize,
    pub n_bootstrap: usize,
    /// `epsilon_min[row][col]`; the diagonal is `None`.
    pub epsilon_min: Vec<Vec<Option<f64>>>,
}

/// Pairwise ASO over named score lists of equal length.
pub fn compare_scores(named: &[(String, Vec<f64>)], alpha: f64, n_bootstrap: usize, seed: u64) -> Result<AsoMatrix> {
    let m = named.len();
    if m < 2 {
        return Err(Error::Config(format!("need at least 2 models to compare, got {m}")));
    }
    let len = named[0].1.len();
    if let Some((name, s)) = named.iter().find(|(_, s)| s.len() != len) {
        return Err(Error::Config(format!(
            "score counts differ: {} has {}, {} has {len}",
            name,
            s.len(),
            named[0].0
        )));
    }
    let comparisons = m * (m - 1);
    let adjusted = alpha / comparisons as f64;
    let mut eps = vec![vec![None; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let pair_seed = seed.wrapping_add((i * m + j) as u64);
            let r = aso_epsilon_min(&named[i].1, &named[j].1, adjusted, n_bootstrap, pair_seed)?;
            eps[i][j] = Some(r.epsilon_min);
        }
    }
    Ok(AsoMatrix {
        models: named.iter().map(|(n, _)| n.clone()).collect(),
        alpha,
        adjusted_alpha: adjusted,
        comparisons,
        n_bootstrap,
        epsilon_min: eps,
    })
}

/// Compares models by their per-seed CV means. Reports sharing a model name
/// (one per dataset) are stacked in the order given.
pub fn compare_all(reports: &[EvalReport], alpha: f64, n_bootstrap: usize, seed: u64) -> Result<AsoMatrix> {
    let mut named: Vec<(String, Vec<f64>)> = Vec::new();
    for r in reports {
        if r.seed_means.iter().any(Option::is_none) {
            return Err(Error::Validation(format!(
                "report for {} on {} has seeds without any completed fold",
                r.model, r.dataset
            )));
        }
        let scores = r.seed_means.iter().flatten().copied();
        match named.iter_mut().find(|(n, _)| *n == r.model) {
            Some((_, s)) => s.extend(scores),
            None => named.push((r.model.to_string(), scores.collect())),
        }
    }
    compare_scores(&named, alpha, n_bootstrap, seed)
}

impl AsoMatrix {
    /// Plain-text table: row model vs column model, `-` on the diagonal.
    pub fn to_table(&self) -> String {
        let width = self.models.iter().map(String::len).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$} |", "Model");
        for name in &self.models {
            out.push_str(&format!(" {name:>width$}"));
        }
        out.push('\n');
        out.push_str(&"-".repeat(width + 2 + (width + 1) * self.models.len()));
        out.push('\n');
        for (name, row) in self.models.iter().zip(&self.epsilon_min) {
            out.push_str(&format!("{name:<width$} |"));
            for cell in row {
                let text = match cell {
                    Some(v) => format!("{v:.1}"),
                    None => "-".to_string(),
                };
                out.push_str(&format!(" {text:>width$}"));
            }
            out.push('\n');
        }
        out
    }
}
