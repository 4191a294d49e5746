use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::TrainConfig;

/// First and second moment estimates for Adam, one entry per scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { first_moment: vec![0.0; len], second_moment: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update applied in place.
///
/// # Panics
/// If `params`, `grads` and the state have different lengths.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &TrainConfig) {
    assert_eq!(params.len(), grads.len(), "adam: gradient length");
    assert_eq!(params.len(), state.first_moment.len(), "adam: state length");
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(b1, t);
    let c2 = 1.0 - libm::pow(b2, t);
    let lr = cfg.learning_rate;
    let eps = cfg.adam_epsilon;
    for (((p, g), m), v) in
        params.iter_mut().zip(grads).zip(state.first_moment.iter_mut()).zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
    }
}
