//! The uncertainty methods under test: three dropout variants and three
//! ensemble variants, each returning a mean and an epistemic standard
//! deviation at arbitrary inputs.

mod dropout;
mod ensemble;

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dropout::{
    concrete_relaxed_drop, predict_bd, predict_variational, train_bd, train_cd, train_vd, DropoutMode,
    DropoutModel, DropoutSpec, LearnedNoise, DEFAULT_MC_SAMPLES,
};
pub use ensemble::{
    predict_ensemble, train_ensemble, train_ensemble_with_seeds, train_member, Ensemble, EnsembleMode,
    EnsembleSpec, DEFAULT_ADVERSARIAL_EPSILON, DEFAULT_MEMBERS,
};

/// A predictive mean with its epistemic standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UqPrediction {
    pub mean: f64,
    pub std: f64,
}

impl UqPrediction {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std < 0.0 {
            return Err(Error::invalid(format!("invalid prediction (mean {mean}, std {std})")));
        }
        Ok(Self { mean, std })
    }

    pub fn lower(&self) -> f64 {
        self.mean - 1.96 * self.std
    }

    pub fn upper(&self) -> f64 {
        self.mean + 1.96 * self.std
    }
}

/// Checks every prediction for finiteness, mapping failures to
/// [`Error::NumericOverflow`] at the output layer.
pub(crate) fn checked(preds: Vec<UqPrediction>, output_layer: usize) -> Result<Vec<UqPrediction>> {
    if preds.iter().all(|p| p.mean.is_finite() && p.std.is_finite()) {
        Ok(preds)
    } else {
        Err(Error::NumericOverflow { layer: output_layer })
    }
}
