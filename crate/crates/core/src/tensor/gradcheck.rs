use alloc::vec::Vec;

use super::{Tape, Tensor, Var};
use crate::{Error, Result};

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max)
}

/// Compares tape gradients of the scalar `f` against central finite
/// differences at every coordinate of every input and returns the largest
/// relative error.
///
/// `f` receives a fresh tape and one leaf per input, in order. It must be
/// deterministic: it is re-evaluated twice per coordinate.
#[allow(clippy::needless_range_loop)]
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Config(alloc::format!(
            "finite-difference step {h} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |point: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.leaf_ref(t, false)).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out)[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("grad_check"))
        }
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf_ref(t, true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut point: Vec<Tensor> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let zeros;
        let analytic = match grads.get(*var) {
            Some(g) => g,
            None => {
                zeros = alloc::vec![0.0; inputs[i].len()];
                &zeros
            }
        };
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j];
            point[i].data_mut()[j] = x + h;
            let up = eval(&point)?;
            point[i].data_mut()[j] = x - h;
            let down = eval(&point)?;
            point[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            worst = worst.max(relative_error(analytic[j], numeric));
        }
    }
    Ok(worst)
}
