use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{checked, UqPrediction};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, Architecture, BatchSampling, NetworkParams, Tape, TrainConfig, TrainOptions};
use crate::seed::{self, tag};
use crate::stats;

pub const DEFAULT_MEMBERS: usize = 120;
/// One percent of the width of the `[-4, 4]` training interval.
pub const DEFAULT_ADVERSARIAL_EPSILON: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnsembleMode {
    Standard,
    Adversarial,
    Bootstrap,
}

/// Ensemble hyperparameters. `bootstrap_batch` defaults to `|train| / 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub mode: EnsembleMode,
    pub members: usize,
    pub adversarial_epsilon: f64,
    pub bootstrap_batch: Option<usize>,
}

impl EnsembleSpec {
    pub fn new(mode: EnsembleMode, members: usize) -> Self {
        Self { mode, members, adversarial_epsilon: DEFAULT_ADVERSARIAL_EPSILON, bootstrap_batch: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(Error::invalid(format!("an ensemble needs at least 2 members, got {}", self.members)));
        }
        if self.mode == EnsembleMode::Adversarial
            && !(self.adversarial_epsilon > 0.0 && self.adversarial_epsilon.is_finite())
        {
            return Err(Error::invalid("adversarial epsilon must be positive"));
        }
        if self.bootstrap_batch == Some(0) {
            return Err(Error::invalid("bootstrap batch must be positive"));
        }
        Ok(())
    }

    fn member_config(&self, cfg: &TrainConfig, n: usize, seed: u64) -> TrainConfig {
        let mut c = cfg.clone();
        c.seed = seed;
        if self.mode == EnsembleMode::Bootstrap {
            c.batch_size = self.bootstrap_batch.unwrap_or((n / 2).max(1));
        }
        c
    }
}

/// Independently trained networks sharing one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub arch: Architecture,
    pub members: Vec<NetworkParams>,
}

impl Ensemble {
    pub fn new(arch: Architecture, members: Vec<NetworkParams>) -> Result<Self> {
        arch.validate()?;
        if members.is_empty() {
            return Err(Error::invalid("ensemble has no members"));
        }
        for m in &members {
            m.check_shape(&arch)?;
        }
        Ok(Self { arch, members })
    }

    /// Member average and sample std over members (denominator `M - 1`,
    /// zero for one member). Outputs are sorted before reduction, so the
    /// result does not depend on member order.
    pub fn predict(&self, x: &[f64]) -> Result<UqPrediction> {
        Ok(self.predict_many(&[x.to_vec()])?[0])
    }

    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<UqPrediction>> {
        let n = xs.len();
        let flat: Vec<f64> = xs.iter().flatten().copied().collect();
        let mut outputs = vec![0.0; n * self.members.len()];
        let m = self.members.len();
        let mut tape = Tape::new();
        for (j, params) in self.members.iter().enumerate() {
            nn::forward_batch(params, &self.arch, &flat, n, None, &mut tape)?;
            for (i, o) in tape.outputs().iter().enumerate() {
                outputs[i * m + j] = *o;
            }
        }
        let preds = outputs
            .chunks_exact_mut(m)
            .map(|row| {
                let (mean, std) = stats::order_free_mean_std(row);
                UqPrediction { mean, std }
            })
            .collect();
        checked(preds, self.arch.layers() - 1)
    }
}

/// Trains one member from `member_seed`.
pub fn train_member(
    arch: &Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
    spec: &EnsembleSpec,
    member_seed: u64,
) -> Result<NetworkParams> {
    let c = spec.member_config(cfg, data.len(), member_seed);
    let opts = TrainOptions {
        sampling: if spec.mode == EnsembleMode::Bootstrap { BatchSampling::Bootstrap } else { BatchSampling::ShuffledEpochs },
        adversarial_epsilon: (spec.mode == EnsembleMode::Adversarial).then_some(spec.adversarial_epsilon),
        noise: None,
    };
    nn::train_with(arch, data, &c, opts)
}

/// Trains `spec.members` networks; member `m` uses seed
/// `derive(cfg.seed, MEMBER, m)`.
pub fn train_ensemble(arch: &Architecture, data: &Dataset, cfg: &TrainConfig, spec: &EnsembleSpec) -> Result<Ensemble> {
    let seeds: Vec<u64> = (0..spec.members as u64).map(|m| seed::derive(cfg.seed, tag::MEMBER, m)).collect();
    train_ensemble_with_seeds(arch, data, cfg, spec, &seeds)
}

/// As [`train_ensemble`] with explicit member seeds (`seeds.len()` must equal
/// `spec.members`). Failures carry the member index.
pub fn train_ensemble_with_seeds(
    arch: &Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
    spec: &EnsembleSpec,
    seeds: &[u64],
) -> Result<Ensemble> {
    spec.validate()?;
    if seeds.len() != spec.members {
        return Err(Error::invalid(format!("{} seeds for {} members", seeds.len(), spec.members)));
    }
    let members = seeds
        .iter()
        .enumerate()
        .map(|(m, s)| {
            train_member(arch, data, cfg, spec, *s).map_err(|e| Error::MemberFailed { member: m, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(arch.clone(), members)
}

pub fn predict_ensemble(ensemble: &Ensemble, x: &[f64]) -> Result<UqPrediction> {
    ensemble.predict(x)
}
