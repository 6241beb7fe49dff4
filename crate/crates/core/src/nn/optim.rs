use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::math;
use crate::nn::params::{ParamGrads, ParamStore};

/// Adam moment accumulators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_betas(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .entries()
            .iter()
            .map(|e| vec![0.0; e.tensor.len()])
            .collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    /// Checks that the accumulators line up with `store`.
    pub fn validate(&self, store: &ParamStore) -> Result<()> {
        let ok = self.first_moment.len() == store.len()
            && self.second_moment.len() == store.len()
            && store.entries().iter().enumerate().all(|(i, e)| {
                self.first_moment[i].len() == e.tensor.len()
                    && self.second_moment[i].len() == e.tensor.len()
            });
        if !ok {
            return Err(Error::Checkpoint("optimizer state does not match parameters".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &ParamGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(invalid!("learning rate must be positive, got {}", lr));
    }
    if grads.len() != params.len() {
        return Err(shape_err!("{} gradients for {} parameters", grads.len(), params.len()));
    }
    state.validate(params)?;
    for (id, g) in params.ids().zip(grads.iter()) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", params.name(id))));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(state.beta1, t);
    let bc2 = 1.0 - libm::pow(state.beta2, t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let ids: Vec<_> = params.ids().collect();
    for (k, (id, g)) in ids.into_iter().zip(grads.iter()).enumerate() {
        let m = &mut state.first_moment[k];
        let v = &mut state.second_moment[k];
        let p = params.get_mut(id).data_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (math::sqrt(v_hat) + eps);
        }
    }
    Ok(())
}
