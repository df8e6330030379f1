use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use super::{GroupRates, TrainConfig};
use crate::models::ParameterStore;
use crate::{Error, Result};

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let m: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One bias-corrected Adam update. Each tensor uses the rate of its group.
///
/// Gradients are checked before anything is touched; a non-finite entry
/// aborts the step and names the parameter.
pub fn adam_step(
    store: &mut ParameterStore,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    rates: &GroupRates,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::LengthMismatch {
            left: store.len(),
            right: grads.len(),
        });
    }
    for ((spec, g), t) in store.specs().iter().zip(grads).zip(store.tensors()) {
        if g.len() != t.len() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: spec.shape.clone(),
                right: vec![g.len()],
            });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(spec.name.to_string()));
        }
    }
    state.step += 1;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let bc1 = 1.0 - libm::pow(b1, state.step as f64);
    let bc2 = 1.0 - libm::pow(b2, state.step as f64);
    let groups: Vec<_> = store.specs().iter().map(|s| s.group).collect();
    for (i, tensor) in store.tensors_mut().iter_mut().enumerate() {
        let lr = rates.for_group(groups[i]);
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, g), m), v) in tensor
            .data_mut()
            .iter_mut()
            .zip(&grads[i])
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}
