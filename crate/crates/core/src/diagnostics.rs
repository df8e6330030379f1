//! Finite-difference checks of every primitive op and every model variant.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::models::{self, Bound, Mode, ModelConfig, ParameterStore, Variant};
use crate::tensor::grad_check;
use crate::{Result, Tape, Tensor, Var};

/// Finite-difference step used by both suites.
pub const STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub trials: usize,
    pub max_error: f64,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).expect("positive extents")
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// `Σ w ⊙ out` for fixed random weights `w`, so every output coordinate
/// carries a distinct sensitivity.
fn project(tape: &mut Tape<'_>, out: Var, weights: &Tensor) -> Result<Var> {
    let flat = tape.vectorize(out)?;
    let w = tape.constant(weights.clone());
    tape.matmul(flat, w)
}

fn weights_for(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    random(rng, &[n, 1])
}

type Case = (Vec<Tensor>, Tensor);

fn check<F>(f: F, case: &Case) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let w = &case.1;
    grad_check(
        |tape, v| {
            let out = f(tape, v)?;
            project(tape, out, w)
        },
        &case.0,
        STEP,
    )
}

/// Runs `trials` randomized central-difference checks per primitive op and
/// reports the largest relative error of each.
pub fn op_gradient_suite(trials: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Vec::new();
    let mut record = |op: &'static str, errors: Vec<f64>| {
        report.push(OpCheck {
            op,
            trials: errors.len(),
            max_error: errors.iter().copied().fold(0.0, f64::max),
        });
    };

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (m, k, n) = (dim(&mut rng, 1, 5), dim(&mut rng, 1, 6), dim(&mut rng, 1, 5));
        let case = (
            vec![random(&mut rng, &[m, k]), random(&mut rng, &[k, n])],
            weights_for(&mut rng, m * n),
        );
        errs.push(check(|t, v| t.matmul(v[0], v[1]), &case)?);
    }
    record("matmul", errs);

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (m, n) = (dim(&mut rng, 1, 5), dim(&mut rng, 1, 5));
        let case = (vec![random(&mut rng, &[m, n])], weights_for(&mut rng, m * n));
        errs.push(check(|t, v| t.transpose(v[0]), &case)?);
    }
    record("transpose", errs);

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (c_in, c_out) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
        let width = dim(&mut rng, 1, 4);
        let len = dim(&mut rng, width, 12);
        let stride = dim(&mut rng, 1, 3);
        let n_out = (len - width) / stride + 1;
        let case = (
            vec![
                random(&mut rng, &[c_in, len]),
                random(&mut rng, &[c_out, c_in, width]),
                random(&mut rng, &[c_out]),
            ],
            weights_for(&mut rng, c_out * n_out),
        );
        errs.push(check(move |t, v| t.conv1d(v[0], v[1], v[2], stride), &case)?);
    }
    record("conv1d", errs);

    let mut errs = Vec::new();
    for _ in 0..trials {
        let rows = dim(&mut rng, 1, 4);
        let len = dim(&mut rng, 1, 12);
        let target = dim(&mut rng, 1, len);
        let case = (
            vec![random(&mut rng, &[rows, len])],
            weights_for(&mut rng, rows * target),
        );
        errs.push(check(move |t, v| t.adaptive_max_pool(v[0], target), &case)?);
    }
    record("adaptive_max_pool", errs);

    for (name, which) in [("softmax_rows", 0), ("log_softmax_rows", 1), ("tanh", 2)] {
        let mut errs = Vec::new();
        for _ in 0..trials {
            let (m, n) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 6));
            let case = (vec![random(&mut rng, &[m, n])], weights_for(&mut rng, m * n));
            errs.push(check(
                move |t, v| match which {
                    0 => t.softmax_rows(v[0]),
                    1 => t.log_softmax_rows(v[0]),
                    _ => t.tanh(v[0]),
                },
                &case,
            )?);
        }
        record(name, errs);
    }

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (m, n) = (dim(&mut rng, 1, 4), dim(&mut rng, 2, 6));
        let case = (
            vec![
                random(&mut rng, &[m, n]),
                random(&mut rng, &[n]),
                random(&mut rng, &[n]),
            ],
            weights_for(&mut rng, m * n),
        );
        errs.push(check(|t, v| t.layer_norm(v[0], v[1], v[2], 1e-5), &case)?);
    }
    record("layer_norm", errs);

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (m, n) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 6));
        let mask_seed: u64 = rng.random();
        let case = (vec![random(&mut rng, &[m, n])], weights_for(&mut rng, m * n));
        errs.push(check(
            move |t, v| {
                let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
                t.dropout(v[0], 0.3, &mut r)
            },
            &case,
        )?);
    }
    record("dropout", errs);

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (a, b, n) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 1, 4));
        let case = (
            vec![random(&mut rng, &[a, n]), random(&mut rng, &[b, n])],
            weights_for(&mut rng, (a + b) * n),
        );
        errs.push(check(|t, v| t.concat_rows(&[v[0], v[1]]), &case)?);
    }
    record("concat_rows", errs);

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (m, a, b) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 3), dim(&mut rng, 1, 4));
        let case = (
            vec![random(&mut rng, &[m, a]), random(&mut rng, &[m, b])],
            weights_for(&mut rng, m * (a + b)),
        );
        errs.push(check(|t, v| t.concat_cols(&[v[0], v[1]]), &case)?);
    }
    record("concat_cols", errs);

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (m, n) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
        let case = (vec![random(&mut rng, &[m, n])], weights_for(&mut rng, m * n));
        errs.push(check(move |t, v| t.reshape(v[0], &[n, m]), &case)?);
    }
    record("reshape", errs);

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (m, n) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
        let factor = rng.random_range(-2.0..2.0);
        let case = (
            vec![random(&mut rng, &[m, n]), random(&mut rng, &[m, n])],
            weights_for(&mut rng, m * n),
        );
        errs.push(check(
            move |t, v| {
                let s = t.add(v[0], v[1])?;
                t.scale(s, factor)
            },
            &case,
        )?);
    }
    record("add_scale", errs);

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (m, n) = (dim(&mut rng, 1, 5), dim(&mut rng, 1, 5));
        let (row, col) = (dim(&mut rng, 0, m - 1), dim(&mut rng, 0, n - 1));
        let (h, w) = (dim(&mut rng, 1, m - row), dim(&mut rng, 1, n - col));
        let case = (vec![random(&mut rng, &[m, n])], weights_for(&mut rng, h * w));
        errs.push(check(move |t, v| t.slice(v[0], row, h, col, w), &case)?);
    }
    record("slice", errs);

    let mut errs = Vec::new();
    for _ in 0..trials {
        let (m, n) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
        let index = dim(&mut rng, 0, m * n - 1);
        let case = (
            vec![random(&mut rng, &[m, n]), random(&mut rng, &[n])],
            weights_for(&mut rng, 1),
        );
        errs.push(check(
            move |t, v| {
                let p = t.pick(v[0], index)?;
                t.sum(&[p, v[1]])
            },
            &case,
        )?);
    }
    record("pick_sum", errs);

    Ok(report)
}

/// Small configuration of `variant` whose every parameter can be checked
/// coordinate by coordinate.
pub fn toy_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        d_model: 6,
        outdim: 4,
        heads: 2,
        d_k: 3,
        filter_length: 3,
        stride: 2,
        dropout: 0.3,
        n_classes: 3,
        variant,
        n_layers: 12,
        hidden: 16,
        kim_windows: [3, 4, 5],
        ..ModelConfig::default()
    }
}

/// Largest relative error between tape and finite-difference gradients of
/// the mean cross-entropy of `cfg` on a two-sample batch, over every
/// parameter coordinate. Dropout runs with a fixed mask.
pub fn model_gradient_check(cfg: &ModelConfig, seed: u64) -> Result<f64> {
    let store = ParameterStore::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let stacks = [
        random(&mut rng, &[cfg.n_layers, cfg.hidden]),
        random(&mut rng, &[cfg.n_layers, cfg.hidden]),
    ];
    let labels = [0, cfg.n_classes - 1];
    let index = store.index();
    grad_check(
        |tape, vars| {
            let bound = Bound::from_parts(vars.to_vec(), index);
            let mut mask = ChaCha8Rng::seed_from_u64(seed);
            models::batch_loss(tape, &bound, cfg, &stacks, &labels, &mut Mode::Train(&mut mask))
        },
        store.tensors(),
        STEP,
    )
}
