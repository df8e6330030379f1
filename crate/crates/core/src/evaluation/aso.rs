//! Almost stochastic order (ASO) between two score samples.
//!
//! The violation ratio compares empirical quantile functions on a uniform
//! grid: the share of the squared quantile distance where B lies above A.
//! A bootstrap estimate of its spread turns it into the smallest violation
//! level `ε_min` that can be claimed at confidence `1 - α`.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_GRID: usize = 1000;
pub const DEFAULT_BOOTSTRAP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsoResult {
    /// Smallest violation ratio claimable at the given confidence, in `[0, 1]`.
    pub epsilon_min: f64,
    /// Violation ratio of the observed samples; `None` when they coincide.
    pub violation_ratio: Option<f64>,
    /// Bootstrap standard deviation of the violation ratio.
    pub sigma: f64,
    pub alpha: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub n_bootstrap: usize,
}

/// Empirical quantile `inf{x : F(x) >= t}` of a sorted sample.
pub fn empirical_quantile(sorted: &[f64], t: f64) -> f64 {
    let n = sorted.len();
    let idx = libm::ceil(t * n as f64) as usize;
    sorted[idx.clamp(1, n) - 1]
}

/// `∫ max(F_B⁻¹ − F_A⁻¹, 0)² / ∫ (F_B⁻¹ − F_A⁻¹)²` on the midpoints of a
/// `grid`-cell partition of `(0, 1)`. `None` if the denominator vanishes.
pub fn violation_ratio(sorted_a: &[f64], sorted_b: &[f64], grid: usize) -> Option<f64> {
    let mut violation = 0.0;
    let mut total = 0.0;
    for i in 0..grid {
        let t = (i as f64 + 0.5) / grid as f64;
        let d = empirical_quantile(sorted_b, t) - empirical_quantile(sorted_a, t);
        total += d * d;
        if d > 0.0 {
            violation += d * d;
        }
    }
    (total > 0.0).then(|| violation / total)
}

/// Standard normal quantile, by bisection on `Φ(x) = erfc(-x/√2)/2`.
pub fn normal_quantile(p: f64) -> f64 {
    let cdf = |x: f64| 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn resample<R: Rng>(src: &[f64], rng: &mut R) -> Vec<f64> {
    let mut out: Vec<f64> = (0..src.len()).map(|_| src[rng.random_range(0..src.len())]).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// ASO test of "A stochastically dominates B".
///
/// `ε_min = clip(ε̂ + Φ⁻¹(α)·σ̂, 0, 1)`; `ε_min = 0` is a confident claim
/// that A is better, `1` that it is not. Identical quantile functions give
/// `1`. Bootstrap resamples whose quantile functions coincide are left out of
/// `σ̂`.
pub fn aso_epsilon_min(
    scores_a: &[f64],
    scores_b: &[f64],
    alpha: f64,
    n_bootstrap: usize,
    seed: u64,
) -> Result<AsoResult> {
    aso_with_grid(scores_a, scores_b, alpha, n_bootstrap, DEFAULT_GRID, seed)
}

pub fn aso_with_grid(
    scores_a: &[f64],
    scores_b: &[f64],
    alpha: f64,
    n_bootstrap: usize,
    grid: usize,
    seed: u64,
) -> Result<AsoResult> {
    if scores_a.is_empty() || scores_b.is_empty() {
        return Err(Error::Empty("aso scores"));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::Config(alloc::format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    if grid == 0 {
        return Err(Error::Config("quantile grid must be non-empty".into()));
    }
    if scores_a.iter().chain(scores_b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("aso scores"));
    }
    let (sa, sb) = (sorted(scores_a), sorted(scores_b));
    let base = AsoResult {
        epsilon_min: 1.0,
        violation_ratio: None,
        sigma: 0.0,
        alpha,
        n_a: sa.len(),
        n_b: sb.len(),
        n_bootstrap,
    };
    let Some(ratio) = violation_ratio(&sa, &sb, grid) else {
        return Ok(base);
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_bootstrap);
    for _ in 0..n_bootstrap {
        let ra = resample(&sa, &mut rng);
        let rb = resample(&sb, &mut rng);
        if let Some(r) = violation_ratio(&ra, &rb, grid) {
            samples.push(r);
        }
    }
    let sigma = if samples.len() > 1 {
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (samples.len() - 1) as f64;
        libm::sqrt(var)
    } else {
        0.0
    };
    let epsilon_min = (ratio + normal_quantile(alpha) * sigma).clamp(0.0, 1.0);
    Ok(AsoResult {
        epsilon_min,
        violation_ratio: Some(ratio),
        sigma,
        ..base
    })
}
