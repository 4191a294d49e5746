//! Fully connected regression networks: forward and reverse passes, Adam,
//! Xavier initialization and the training loop shared by all methods.

mod adam;
mod network;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::seed::{self, tag, Rng};

pub use adam::{adam_step, AdamState};
pub use network::{
    backward_batch, forward, forward_batch, forward_from_site, forward_to_site, gradient, init_xavier, loss,
    Architecture, BackwardTargets, LayerRecord, NetworkParams, ParamsRecord, Tape, DEFAULT_HIDDEN,
    DEFAULT_NEGATIVE_SLOPE,
};
pub(crate) use network::{add_l2_grad, mse_output_grad};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2_coefficient: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for a training set of `n` points: full-batch, `l2 = 1/n`.
    pub fn for_train_set(n: usize, epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate: DEFAULT_LEARNING_RATE,
            l2_coefficient: 1.0 / n.max(1) as f64,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: n.max(1),
            seed,
        }
    }

    pub fn validate(&self, n_train: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.l2_coefficient >= 0.0 && self.l2_coefficient.is_finite()) {
            return Err(Error::invalid("l2 coefficient must be non-negative"));
        }
        for (name, b) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("adam {name} = {b} outside (0, 1)")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::invalid("adam epsilon must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            return Err(Error::invalid(format!(
                "batch size {} must be in 1..={n_train}",
                self.batch_size
            )));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

/// How mini-batches are drawn from the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchSampling {
    /// A fresh permutation per epoch, cut into consecutive batches.
    #[default]
    ShuffledEpochs,
    /// Every batch drawn independently with replacement.
    Bootstrap,
}

/// Multiplicative noise applied to the dropout-site activations during training.
///
/// The training loop asks for one factor per site activation and batch row,
/// runs forward and backward with those factors, and then lets the noise add
/// its own penalty gradients and update its own parameters.
pub trait SiteNoise {
    /// Fills `factors` (`batch × site_width`, row-major).
    fn sample(&mut self, rng: &mut Rng, factors: &mut [f64]);

    /// Whether [`SiteNoise::backward`] needs `∂loss/∂factor`.
    fn wants_factor_grads(&self) -> bool {
        false
    }

    /// Receives `∂loss/∂factor` for the last sampled batch and may add the
    /// gradient of a network-weight penalty to `grads`.
    fn backward(&mut self, _factor_grads: &[f64], _params: &NetworkParams, _arch: &Architecture, _grads: &mut [f64]) {}

    /// Penalty added to the training loss.
    fn penalty(&self, _params: &NetworkParams, _arch: &Architecture) -> f64 {
        0.0
    }

    /// Updates the noise's own parameters after the network step.
    fn step(&mut self, _cfg: &TrainConfig) {}
}

/// Inverted Bernoulli dropout: each factor is `0` with probability `rate`,
/// otherwise `1/(1-rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliDropout {
    pub rate: f64,
}

impl BernoulliDropout {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { rate })
    }
}

/// Fills `mask` with inverted-dropout factors.
pub fn bernoulli_mask(rate: f64, rng: &mut Rng, mask: &mut [f64]) {
    let keep = 1.0 / (1.0 - rate);
    for m in mask {
        *m = if rate > 0.0 && rng.random::<f64>() < rate { 0.0 } else { keep };
    }
}

impl SiteNoise for BernoulliDropout {
    fn sample(&mut self, rng: &mut Rng, factors: &mut [f64]) {
        bernoulli_mask(self.rate, rng, factors);
    }
}

/// Extras on top of plain mini-batch training.
#[derive(Default)]
pub struct TrainOptions<'a> {
    pub sampling: BatchSampling,
    /// Fast-gradient-sign step size; each batch is augmented with
    /// `x + ε·sign(∂loss/∂x)` carrying the same targets.
    pub adversarial_epsilon: Option<f64>,
    pub noise: Option<&'a mut dyn SiteNoise>,
}

/// Trains from a seeded Xavier initialization. `dropout` is an optional
/// Bernoulli rate at the dropout site.
pub fn train(arch: &Architecture, data: &Dataset, cfg: &TrainConfig, dropout: Option<f64>) -> Result<NetworkParams> {
    match dropout {
        Some(rate) => {
            let mut noise = BernoulliDropout::new(rate)?;
            train_with(arch, data, cfg, TrainOptions { noise: Some(&mut noise), ..Default::default() })
        }
        None => train_with(arch, data, cfg, TrainOptions::default()),
    }
}

/// Fast-gradient-sign examples `x + ε·sign(g)` for a row-major batch, where
/// `g` is the input gradient of the loss. Zero gradient components count as
/// positive, so every coordinate moves by exactly `ε`.
pub fn fgsm_examples(inputs: &[f64], input_grads: &[f64], epsilon: f64) -> Vec<f64> {
    inputs.iter().zip(input_grads).map(|(x, g)| x + epsilon * libm::copysign(1.0, *g)).collect()
}

/// Indices of one bootstrap batch: `size` draws with replacement from `0..n`.
pub fn bootstrap_indices(n: usize, size: usize, rng: &mut Rng) -> Vec<usize> {
    (0..size).map(|_| rng.random_range(0..n)).collect()
}

/// The general training loop.
///
/// Runs `epochs × ⌈N / batch_size⌉` Adam steps from `init_xavier(arch,
/// derive(seed, INIT))`; batches, noise and initialization use independent
/// streams derived from `cfg.seed`.
pub fn train_with(
    arch: &Architecture,
    data: &Dataset,
    cfg: &TrainConfig,
    mut opts: TrainOptions<'_>,
) -> Result<NetworkParams> {
    arch.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if data.input_dim() != arch.input_dim() {
        return Err(Error::invalid(format!(
            "data has input dimension {}, network expects {}",
            data.input_dim(),
            arch.input_dim()
        )));
    }
    cfg.validate(n)?;
    if let Some(eps) = opts.adversarial_epsilon {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid("adversarial epsilon must be positive"));
        }
    }
    let mut params = init_xavier(arch, seed::derive(cfg.seed, tag::INIT, 0));
    if cfg.epochs == 0 {
        return Ok(params);
    }

    let d = arch.input_dim();
    let width = arch.site_width();
    let flat = data.flat_inputs();
    let bs = cfg.batch_size;
    let steps_per_epoch = cfg.steps_per_epoch(n);
    let mut batch_rng = seed::derived_rng(cfg.seed, tag::BATCHES, 0);
    let mut noise_rng = seed::derived_rng(cfg.seed, tag::SITE_NOISE, 0);
    let mut adam = AdamState::new(params.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut tape = Tape::new();
    let mut bx = Vec::with_capacity(2 * bs * d);
    let mut by = Vec::with_capacity(2 * bs);
    let mut d_out = Vec::new();
    let mut grads = vec![0.0; params.len()];
    let mut factors = Vec::new();
    let mut factor_grads = Vec::new();
    let mut input_grads = Vec::new();
    let mut step = 0usize;

    let diverged = |e: Error, step: usize| match e {
        Error::NumericOverflow { .. } => Error::TrainingDiverged { step },
        other => other,
    };

    for _epoch in 0..cfg.epochs {
        if opts.sampling == BatchSampling::ShuffledEpochs {
            order.shuffle(&mut batch_rng);
        }
        for b in 0..steps_per_epoch {
            bx.clear();
            by.clear();
            let mut gather = |i: usize| {
                bx.extend_from_slice(&flat[i * d..(i + 1) * d]);
                by.push(data.targets[i]);
            };
            match opts.sampling {
                BatchSampling::ShuffledEpochs => {
                    order[b * bs..((b + 1) * bs).min(n)].iter().for_each(|&i| gather(i));
                }
                BatchSampling::Bootstrap => {
                    bootstrap_indices(n, bs, &mut batch_rng).into_iter().for_each(gather);
                }
            }

            if let Some(eps) = opts.adversarial_epsilon {
                let rows = by.len();
                forward_batch(&params, arch, &bx, rows, None, &mut tape).map_err(|e| diverged(e, step))?;
                mse_output_grad(&tape, &by, &mut d_out);
                input_grads.resize(rows * d, 0.0);
                backward_batch(
                    &params,
                    arch,
                    &tape,
                    None,
                    &d_out,
                    BackwardTargets { inputs: Some(&mut input_grads), ..Default::default() },
                )?;
                let adv = fgsm_examples(&bx, &input_grads, eps);
                bx.extend_from_slice(&adv);
                by.extend_from_within(..rows);
            }

            let rows = by.len();
            let mask = match opts.noise.as_deref_mut() {
                Some(noise) => {
                    factors.resize(rows * width, 0.0);
                    noise.sample(&mut noise_rng, &mut factors);
                    Some(&factors[..])
                }
                None => None,
            };
            forward_batch(&params, arch, &bx, rows, mask, &mut tape).map_err(|e| diverged(e, step))?;
            let mut total = loss(&params, &tape, &by, cfg.l2_coefficient);
            mse_output_grad(&tape, &by, &mut d_out);
            grads.iter_mut().for_each(|g| *g = 0.0);
            let want_factor_grads = opts.noise.as_deref().is_some_and(|n| n.wants_factor_grads());
            if want_factor_grads {
                factor_grads.resize(rows * width, 0.0);
            }
            backward_batch(
                &params,
                arch,
                &tape,
                mask,
                &d_out,
                BackwardTargets {
                    params: Some(&mut grads),
                    factors: if want_factor_grads { Some(&mut factor_grads) } else { None },
                    inputs: None,
                },
            )?;
            add_l2_grad(&params, cfg.l2_coefficient, &mut grads);
            if let Some(noise) = opts.noise.as_deref_mut() {
                total += noise.penalty(&params, arch);
                noise.backward(&factor_grads, &params, arch, &mut grads);
            }
            if !total.is_finite() || !grads.iter().all(|g| g.is_finite()) {
                return Err(Error::TrainingDiverged { step });
            }
            adam_step(params.as_mut_slice(), &grads, &mut adam, cfg);
            if let Some(noise) = opts.noise.as_deref_mut() {
                noise.step(cfg);
            }
            step += 1;
        }
    }
    Ok(params)
}

/// Deterministic network outputs for every input in `data`-shaped rows.
pub fn predict_all(params: &NetworkParams, arch: &Architecture, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let flat: Vec<f64> = inputs.iter().flatten().copied().collect();
    let mut tape = Tape::new();
    forward_batch(params, arch, &flat, inputs.len(), None, &mut tape)?;
    Ok(tape.outputs().to_vec())
}

/// Mean squared error of the deterministic network on `data`.
pub fn mse(params: &NetworkParams, arch: &Architecture, data: &Dataset) -> Result<f64> {
    let out = predict_all(params, arch, &data.inputs)?;
    Ok(out.iter().zip(&data.targets).map(|(f, y)| (f - y) * (f - y)).sum::<f64>() / data.len() as f64)
}
