use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{checked, UqPrediction};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    self, adam_step, bernoulli_mask, forward_from_site, forward_to_site, AdamState, Architecture, NetworkParams,
    SiteNoise, TrainConfig, TrainOptions,
};
use crate::seed::{self, tag, Rng};
use crate::stats;

pub const DEFAULT_MC_SAMPLES: usize = 100;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_CONCRETE_INITIAL_RATE: f64 = 0.1;
pub const DEFAULT_CONCRETE_REGULARIZER: f64 = 1e-4;
pub const DEFAULT_INITIAL_ALPHA: f64 = 0.1;
pub const DEFAULT_MAX_ALPHA: f64 = 1.0;

// Polynomial approximation of the negative KL divergence between the
// log-uniform prior and the multiplicative Gaussian posterior, valid for α ≤ 1.
const KL_C1: f64 = 1.161_451_24;
const KL_C2: f64 = -1.502_041_18;
const KL_C3: f64 = 0.586_299_21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropoutMode {
    FixedRate,
    Concrete,
    Variational,
}

/// Hyperparameters of a dropout-family method.
///
/// `rate` is the fixed rate for [`DropoutMode::FixedRate`] and the initial
/// rate for [`DropoutMode::Concrete`]. The concrete regularizer contributes
/// `regularizer_scale · K · (p ln p + (1-p) ln(1-p))` for a site of `K`
/// units. The variational KL term is weighted by `kl_weight / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutSpec {
    pub mode: DropoutMode,
    pub rate: f64,
    pub mc_samples: usize,
    pub temperature: f64,
    pub regularizer_scale: f64,
    pub initial_alpha: f64,
    pub max_alpha: f64,
    pub kl_weight: f64,
}

impl DropoutSpec {
    fn base(mode: DropoutMode, rate: f64) -> Self {
        Self {
            mode,
            rate,
            mc_samples: DEFAULT_MC_SAMPLES,
            temperature: DEFAULT_TEMPERATURE,
            regularizer_scale: DEFAULT_CONCRETE_REGULARIZER,
            initial_alpha: DEFAULT_INITIAL_ALPHA,
            max_alpha: DEFAULT_MAX_ALPHA,
            kl_weight: 1.0,
        }
    }

    pub fn fixed_rate(rate: f64) -> Self {
        Self::base(DropoutMode::FixedRate, rate)
    }

    pub fn concrete() -> Self {
        Self::base(DropoutMode::Concrete, DEFAULT_CONCRETE_INITIAL_RATE)
    }

    pub fn variational() -> Self {
        Self::base(DropoutMode::Variational, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mc_samples < 2 {
            return Err(Error::invalid("mc_samples must be at least 2"));
        }
        match self.mode {
            DropoutMode::FixedRate => {
                if !(0.0..1.0).contains(&self.rate) {
                    return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.rate)));
                }
            }
            DropoutMode::Concrete => {
                if !(self.rate > 0.0 && self.rate < 1.0) {
                    return Err(Error::invalid(format!("initial concrete rate {} outside (0, 1)", self.rate)));
                }
                if !(self.temperature > 0.0 && self.temperature.is_finite()) {
                    return Err(Error::invalid("temperature must be positive"));
                }
                if !(self.regularizer_scale >= 0.0 && self.regularizer_scale.is_finite()) {
                    return Err(Error::invalid("regularizer scale must be non-negative"));
                }
            }
            DropoutMode::Variational => {
                if !(self.max_alpha > 0.0 && self.max_alpha.is_finite()) {
                    return Err(Error::invalid("max_alpha must be positive"));
                }
                if !(self.initial_alpha > 0.0 && self.initial_alpha <= self.max_alpha) {
                    return Err(Error::invalid(format!(
                        "initial alpha {} outside (0, {}]",
                        self.initial_alpha, self.max_alpha
                    )));
                }
                if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
                    return Err(Error::invalid("kl_weight must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

/// The trained noise model at the dropout site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnedNoise {
    Bernoulli { rate: f64 },
    Concrete { logit: f64, temperature: f64 },
    Variational { alpha: Vec<f64> },
}

impl LearnedNoise {
    /// Drop probability of the Bernoulli masks used at prediction time.
    pub fn effective_rate(&self) -> Option<f64> {
        match self {
            Self::Bernoulli { rate } => Some(*rate),
            Self::Concrete { logit, .. } => Some(sigmoid(*logit)),
            Self::Variational { .. } => None,
        }
    }

    /// Prediction-time factors for `rows` copies of the site.
    fn sample(&self, rng: &mut Rng, factors: &mut [f64]) {
        match self {
            Self::Bernoulli { rate } => bernoulli_mask(*rate, rng, factors),
            Self::Concrete { logit, .. } => bernoulli_mask(sigmoid(*logit), rng, factors),
            Self::Variational { alpha } => {
                let sd: Vec<f64> = alpha.iter().map(|a| libm::sqrt(*a)).collect();
                for row in factors.chunks_exact_mut(sd.len()) {
                    for (f, s) in row.iter_mut().zip(&sd) {
                        let e: f64 = rng.sample(StandardNormal);
                        *f = 1.0 + s * e;
                    }
                }
            }
        }
    }
}

/// A network trained with dropout-family noise at its dropout site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutModel {
    pub arch: Architecture,
    pub params: NetworkParams,
    pub noise: LearnedNoise,
    pub mc_samples: usize,
}

impl DropoutModel {
    pub fn new(arch: Architecture, params: NetworkParams, noise: LearnedNoise, mc_samples: usize) -> Result<Self> {
        arch.validate()?;
        params.check_shape(&arch)?;
        if let LearnedNoise::Variational { alpha } = &noise {
            if alpha.len() != arch.site_width() || alpha.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
                return Err(Error::invalid("alpha must hold one non-negative value per site unit"));
            }
        }
        if let Some(r) = noise.effective_rate() {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(format!("dropout rate {r} outside [0, 1)")));
            }
        }
        Ok(Self { arch, params, noise, mc_samples })
    }

    /// Monte-Carlo mean and sample std (denominator `mc - 1`) at one input,
    /// sampling with `rng(seed)`.
    pub fn predict(&self, x: &[f64], mc_samples: usize, seed: u64) -> Result<UqPrediction> {
        let site = forward_to_site(&self.params, &self.arch, x, 1)?;
        let mut rng = seed::rng(seed);
        let p = self.predict_from_site(&site, mc_samples, &mut rng)?;
        Ok(checked(vec![p], self.arch.layers() - 1)?[0])
    }

    /// Predictions at many inputs. Input `i` samples with
    /// `derive(seed, PREDICTION, i)`, so results do not depend on batching.
    pub fn predict_many(&self, xs: &[Vec<f64>], mc_samples: usize, seed: u64) -> Result<Vec<UqPrediction>> {
        let flat: Vec<f64> = xs.iter().flatten().copied().collect();
        let site = forward_to_site(&self.params, &self.arch, &flat, xs.len())?;
        let w = self.arch.site_width();
        let preds = site
            .chunks_exact(w)
            .enumerate()
            .map(|(i, row)| {
                let mut rng = seed::derived_rng(seed, tag::PREDICTION, i as u64);
                self.predict_from_site(row, mc_samples, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        checked(preds, self.arch.layers() - 1)
    }

    fn predict_from_site(&self, site: &[f64], mc_samples: usize, rng: &mut Rng) -> Result<UqPrediction> {
        if mc_samples < 2 {
            return Err(Error::invalid("mc_samples must be at least 2"));
        }
        let w = site.len();
        let mut block = vec![0.0; mc_samples * w];
        self.noise.sample(rng, &mut block);
        for row in block.chunks_exact_mut(w) {
            for (f, a) in row.iter_mut().zip(site) {
                *f *= a;
            }
        }
        let outs = forward_from_site(&self.params, &self.arch, &block, mc_samples)?;
        Ok(UqPrediction { mean: stats::mean(&outs), std: stats::sample_std(&outs) })
    }
}

#[inline]
fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + libm::exp(-s))
    } else {
        let e = libm::exp(s);
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

/// Relaxed drop indicator `sigmoid((logit + ln u - ln(1-u)) / temperature)`
/// for a uniform draw `u`.
pub fn concrete_relaxed_drop(logit: f64, temperature: f64, u: f64) -> f64 {
    sigmoid((logit + libm::log(u) - libm::log(1.0 - u)) / temperature)
}

fn check_inputs(spec: &DropoutSpec, expected: DropoutMode) -> Result<()> {
    if spec.mode != expected {
        return Err(Error::invalid(format!("expected a {expected:?} dropout spec, got {:?}", spec.mode)));
    }
    spec.validate()
}

/// MC dropout: a fresh Bernoulli mask per mini-batch row at the dropout site.
pub fn train_bd(arch: &Architecture, data: &Dataset, cfg: &TrainConfig, spec: &DropoutSpec) -> Result<DropoutModel> {
    check_inputs(spec, DropoutMode::FixedRate)?;
    let params = nn::train(arch, data, cfg, Some(spec.rate))?;
    DropoutModel::new(arch.clone(), params, LearnedNoise::Bernoulli { rate: spec.rate }, spec.mc_samples)
}

/// Concrete dropout with one learned rate for the whole site.
struct ConcreteNoise {
    logit: [f64; 1],
    temperature: f64,
    regularizer: f64,
    l2: f64,
    next_layer: usize,
    drops: Vec<f64>,
    grad: [f64; 1],
    adam: AdamState,
}

impl ConcreteNoise {
    fn rate(&self) -> f64 {
        sigmoid(self.logit[0])
    }
}

impl SiteNoise for ConcreteNoise {
    fn sample(&mut self, rng: &mut Rng, factors: &mut [f64]) {
        let p = self.rate();
        self.drops.resize(factors.len(), 0.0);
        for (f, z) in factors.iter_mut().zip(self.drops.iter_mut()) {
            let u: f64 = rng.random();
            *z = concrete_relaxed_drop(self.logit[0], self.temperature, u);
            *f = (1.0 - *z) / (1.0 - p);
        }
    }

    fn wants_factor_grads(&self) -> bool {
        true
    }

    fn backward(&mut self, factor_grads: &[f64], params: &NetworkParams, arch: &Architecture, grads: &mut [f64]) {
        let p = self.rate();
        let t = self.temperature;
        // d factor / d logit for factor = (1 - z)/(1 - p)
        let mut g: f64 = factor_grads
            .iter()
            .zip(&self.drops)
            .map(|(fg, z)| fg * (-z * (1.0 - z) / (t * (1.0 - p)) + (1.0 - z) * p / (1.0 - p)))
            .sum();
        // Weight term l2·‖W‖²/(1-p); the plain l2·‖W‖² part is already in the loss.
        let w = params.weights(self.next_layer);
        let norm: f64 = w.iter().map(|v| v * v).sum();
        g += self.l2 * norm * p / (1.0 - p);
        let extra = 2.0 * self.l2 * p / (1.0 - p);
        let r = params.layer_ranges(self.next_layer).0;
        for (gi, wi) in grads[r].iter_mut().zip(w) {
            *gi += extra * wi;
        }
        let k = arch.site_width() as f64;
        g += self.regularizer * k * self.logit[0] * p * (1.0 - p);
        self.grad[0] = g;
    }

    fn penalty(&self, params: &NetworkParams, arch: &Architecture) -> f64 {
        let p = self.rate();
        let norm: f64 = params.weights(self.next_layer).iter().map(|v| v * v).sum();
        let k = arch.site_width() as f64;
        let neg_entropy = p * libm::log(p) + (1.0 - p) * libm::log(1.0 - p);
        self.l2 * norm * p / (1.0 - p) + self.regularizer * k * neg_entropy
    }

    fn step(&mut self, cfg: &TrainConfig) {
        adam_step(&mut self.logit, &self.grad, &mut self.adam, cfg);
    }
}

/// Concrete dropout: the site's drop rate is a trained logit, with relaxed
/// masks during training and hard Bernoulli masks at prediction.
pub fn train_cd(arch: &Architecture, data: &Dataset, cfg: &TrainConfig, spec: &DropoutSpec) -> Result<DropoutModel> {
    check_inputs(spec, DropoutMode::Concrete)?;
    let mut noise = ConcreteNoise {
        logit: [logit(spec.rate)],
        temperature: spec.temperature,
        regularizer: spec.regularizer_scale,
        l2: cfg.l2_coefficient,
        next_layer: arch.dropout_site + 1,
        drops: Vec::new(),
        grad: [0.0],
        adam: AdamState::new(1),
    };
    let params = nn::train_with(arch, data, cfg, TrainOptions { noise: Some(&mut noise), ..Default::default() })?;
    if !noise.logit[0].is_finite() {
        return Err(Error::TrainingDiverged { step: cfg.epochs * cfg.steps_per_epoch(data.len()) });
    }
    DropoutModel::new(
        arch.clone(),
        params,
        LearnedNoise::Concrete { logit: noise.logit[0], temperature: spec.temperature },
        spec.mc_samples,
    )
}

/// Gaussian multiplicative noise `1 + sqrt(α_j)·ε` with a learned `ln α_j`
/// per site unit.
struct VariationalNoise {
    log_alpha: Vec<f64>,
    max_log_alpha: f64,
    kl_scale: f64,
    eps: Vec<f64>,
    grad: Vec<f64>,
    adam: AdamState,
}

fn neg_kl(alpha: f64) -> f64 {
    0.5 * libm::log(alpha) + KL_C1 * alpha + KL_C2 * alpha * alpha + KL_C3 * alpha * alpha * alpha
}

fn neg_kl_dlog_alpha(alpha: f64) -> f64 {
    0.5 + KL_C1 * alpha + 2.0 * KL_C2 * alpha * alpha + 3.0 * KL_C3 * alpha * alpha * alpha
}

impl SiteNoise for VariationalNoise {
    fn sample(&mut self, rng: &mut Rng, factors: &mut [f64]) {
        let w = self.log_alpha.len();
        self.eps.resize(factors.len(), 0.0);
        let sd: Vec<f64> = self.log_alpha.iter().map(|la| libm::exp(0.5 * la)).collect();
        for (frow, erow) in factors.chunks_exact_mut(w).zip(self.eps.chunks_exact_mut(w)) {
            for ((f, e), s) in frow.iter_mut().zip(erow.iter_mut()).zip(&sd) {
                *e = rng.sample(StandardNormal);
                *f = 1.0 + s * *e;
            }
        }
    }

    fn wants_factor_grads(&self) -> bool {
        true
    }

    fn backward(&mut self, factor_grads: &[f64], _params: &NetworkParams, _arch: &Architecture, _grads: &mut [f64]) {
        let w = self.log_alpha.len();
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        for (frow, erow) in factor_grads.chunks_exact(w).zip(self.eps.chunks_exact(w)) {
            for ((g, (fg, e)), la) in self.grad.iter_mut().zip(frow.iter().zip(erow)).zip(&self.log_alpha) {
                *g += fg * 0.5 * libm::exp(0.5 * la) * e;
            }
        }
        for (g, la) in self.grad.iter_mut().zip(&self.log_alpha) {
            *g -= self.kl_scale * neg_kl_dlog_alpha(libm::exp(*la));
        }
    }

    fn penalty(&self, _params: &NetworkParams, _arch: &Architecture) -> f64 {
        -self.kl_scale * self.log_alpha.iter().map(|la| neg_kl(libm::exp(*la))).sum::<f64>()
    }

    fn step(&mut self, cfg: &TrainConfig) {
        adam_step(&mut self.log_alpha, &self.grad, &mut self.adam, cfg);
        for la in &mut self.log_alpha {
            *la = la.min(self.max_log_alpha);
        }
    }
}

/// Variational dropout: per-unit Gaussian multiplicative noise with learned
/// variance ratio α, trained on the MSE under sampled noise plus the scaled
/// KL approximation, with `α ≤ max_alpha`.
pub fn train_vd(arch: &Architecture, data: &Dataset, cfg: &TrainConfig, spec: &DropoutSpec) -> Result<DropoutModel> {
    check_inputs(spec, DropoutMode::Variational)?;
    let w = arch.site_width();
    let mut noise = VariationalNoise {
        log_alpha: vec![libm::log(spec.initial_alpha); w],
        max_log_alpha: libm::log(spec.max_alpha),
        kl_scale: spec.kl_weight / data.len().max(1) as f64,
        eps: Vec::new(),
        grad: vec![0.0; w],
        adam: AdamState::new(w),
    };
    let params = nn::train_with(arch, data, cfg, TrainOptions { noise: Some(&mut noise), ..Default::default() })?;
    let alpha: Vec<f64> = noise.log_alpha.iter().map(|la| libm::exp(*la)).collect();
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::TrainingDiverged { step: cfg.epochs * cfg.steps_per_epoch(data.len()) });
    }
    DropoutModel::new(arch.clone(), params, LearnedNoise::Variational { alpha }, spec.mc_samples)
}

/// MC-dropout prediction with independent masks.
pub fn predict_bd(model: &DropoutModel, x: &[f64], mc_samples: usize, seed: u64) -> Result<UqPrediction> {
    model.predict(x, mc_samples, seed)
}

/// Prediction sampling the model's own noise: hard Bernoulli masks at the
/// learned rate for concrete dropout, Gaussian factors for variational dropout.
pub fn predict_variational(model: &DropoutModel, x: &[f64], mc_samples: usize, seed: u64) -> Result<UqPrediction> {
    model.predict(x, mc_samples, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward, init_xavier};

    fn unit_net() -> (Architecture, NetworkParams) {
        let arch = Architecture::new(vec![1, 1, 1], 0.01, 0).unwrap();
        let mut p = NetworkParams::zeros(&arch);
        p.weights_mut(0)[0] = 1.0;
        p.weights_mut(1)[0] = 1.0;
        (arch, p)
    }

    fn toy_data() -> Dataset {
        let xs: Vec<Vec<f64>> = (0..24).map(|i| vec![-1.0 + i as f64 / 12.0]).collect();
        let ys = xs.iter().map(|x| 1.5 * x[0] + 0.3).collect();
        Dataset::new(xs, ys, 0).unwrap()
    }

    fn toy_arch() -> Architecture {
        Architecture::new(vec![1, 16, 8, 1], 0.01, 0).unwrap()
    }

    #[test]
    fn rate_zero_is_deterministic() {
        let arch = Architecture::standard(1);
        let params = init_xavier(&arch, 4);
        let m = DropoutModel::new(arch.clone(), params.clone(), LearnedNoise::Bernoulli { rate: 0.0 }, 100).unwrap();
        let p = predict_bd(&m, &[0.7], 100, 1).unwrap();
        assert_eq!(p.std, 0.0);
        assert_eq!(p.mean, forward(&params, &arch, &[0.7], None).unwrap());
    }

    #[test]
    fn zero_alpha_is_deterministic() {
        let arch = Architecture::standard(1);
        let params = init_xavier(&arch, 4);
        let alpha = vec![0.0; arch.site_width()];
        let m = DropoutModel::new(arch.clone(), params.clone(), LearnedNoise::Variational { alpha }, 100).unwrap();
        let p = predict_variational(&m, &[-2.0], 50, 3).unwrap();
        assert_eq!(p.std, 0.0);
        assert_eq!(p.mean, forward(&params, &arch, &[-2.0], None).unwrap());
    }

    #[test]
    fn half_rate_single_unit_enumeration() {
        let (arch, p) = unit_net();
        // both masks of the single unit: factors 0 and 2
        let outs: Vec<f64> = [0.0, 2.0].iter().map(|m| forward(&p, &arch, &[1.0], Some(&[*m])).unwrap()).collect();
        assert_eq!(outs, vec![0.0, 2.0]);
        assert_eq!(stats::mean(&outs), 1.0);
        assert_eq!(stats::sample_std(&outs), core::f64::consts::SQRT_2);
        // population std over the enumeration is 1, the MC estimate tends to it
        let m = DropoutModel::new(arch, p, LearnedNoise::Bernoulli { rate: 0.5 }, 2).unwrap();
        let pred = m.predict(&[1.0], 20_000, 9).unwrap();
        assert!((pred.mean - 1.0).abs() < 0.03);
        assert!((pred.std - 1.0).abs() < 0.02);
    }

    #[test]
    fn variational_single_unit_std() {
        let (arch, p) = unit_net();
        let m = DropoutModel::new(arch, p, LearnedNoise::Variational { alpha: vec![0.25] }, 2).unwrap();
        let pred = m.predict(&[1.0], 40_000, 2).unwrap();
        assert!((pred.std - 0.5).abs() < 0.01);
        assert!((pred.mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn relaxed_masks_approach_bernoulli() {
        let r: f64 = 0.3;
        let l = logit(r);
        let mut rng = seed::rng(5);
        let zs: Vec<f64> = (0..100_000).map(|_| concrete_relaxed_drop(l, 0.01, rng.random())).collect();
        let var = stats::sample_std(&zs).powi(2);
        assert!((var / (r * (1.0 - r)) - 1.0).abs() < 0.1);
        assert!((stats::mean(&zs) - r).abs() < 0.01);
    }

    #[test]
    fn tiny_logit_is_nearly_deterministic() {
        let arch = Architecture::standard(1);
        let params = init_xavier(&arch, 6);
        let noise = LearnedNoise::Concrete { logit: -10.0, temperature: 0.1 };
        assert!(noise.effective_rate().unwrap() < 1e-4);
        let m = DropoutModel::new(arch.clone(), params.clone(), noise, 100).unwrap();
        let pred = m.predict(&[0.2], 100, 0).unwrap();
        let det = forward(&params, &arch, &[0.2], None).unwrap();
        assert!((pred.mean - det).abs() < 1e-2 * det.abs().max(1.0));
    }

    #[test]
    fn bd_rate_zero_matches_plain_training() {
        let data = toy_data();
        let cfg = TrainConfig::for_train_set(data.len(), 20, 3);
        let m = train_bd(&toy_arch(), &data, &cfg, &DropoutSpec::fixed_rate(0.0)).unwrap();
        assert_eq!(m.params, nn::train(&toy_arch(), &data, &cfg, None).unwrap());
    }

    #[test]
    fn bd_is_deterministic_and_converges() {
        let data = toy_data();
        let cfg = TrainConfig::for_train_set(data.len(), 300, 3);
        let spec = DropoutSpec::fixed_rate(0.2);
        let a = train_bd(&toy_arch(), &data, &cfg, &spec).unwrap();
        assert_eq!(a, train_bd(&toy_arch(), &data, &cfg, &spec).unwrap());
        let var = stats::sample_std(&data.targets).powi(2);
        assert!(nn::mse(&a.params, &a.arch, &data).unwrap() < 0.1 * var);
    }

    #[test]
    fn concrete_rate_is_learned_and_bounded() {
        let data = toy_data();
        let cfg = TrainConfig::for_train_set(data.len(), 300, 8);
        let m = train_cd(&toy_arch(), &data, &cfg, &DropoutSpec::concrete()).unwrap();
        let r = m.noise.effective_rate().unwrap();
        assert!(r > 0.0 && r < 0.9);
        assert_ne!(r, DEFAULT_CONCRETE_INITIAL_RATE);
    }

    #[test]
    fn variational_training_reduces_error_with_finite_alpha() {
        let data = toy_data();
        let arch = toy_arch();
        let cfg = TrainConfig::for_train_set(data.len(), 300, 2);
        let init = init_xavier(&arch, seed::derive(cfg.seed, tag::INIT, 0));
        let m = train_vd(&arch, &data, &cfg, &DropoutSpec::variational()).unwrap();
        assert!(nn::mse(&m.params, &arch, &data).unwrap() < nn::mse(&init, &arch, &data).unwrap());
        let LearnedNoise::Variational { alpha } = &m.noise else { panic!() };
        assert!(alpha.iter().all(|a| a.is_finite() && *a > 0.0 && *a <= DEFAULT_MAX_ALPHA));
    }

    #[test]
    fn spec_mode_and_range_checks() {
        let data = toy_data();
        let cfg = TrainConfig::for_train_set(data.len(), 1, 0);
        assert!(train_bd(&toy_arch(), &data, &cfg, &DropoutSpec::concrete()).is_err());
        assert!(train_bd(&toy_arch(), &data, &cfg, &DropoutSpec::fixed_rate(1.0)).is_err());
        let mut s = DropoutSpec::fixed_rate(0.1);
        s.mc_samples = 1;
        assert!(s.validate().is_err());
        let mut c = DropoutSpec::concrete();
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        let mut v = DropoutSpec::variational();
        v.initial_alpha = 2.0;
        assert!(v.validate().is_err());
    }

    /// The analytic gradients of both learned noise models against central
    /// differences of their own loss contributions, with the sampled noise held fixed.
    #[test]
    fn learned_noise_gradients_match_finite_differences() {
        let arch = Architecture::new(vec![1, 3, 2, 1], 0.01, 0).unwrap();
        let params = init_xavier(&arch, 12);
        let xs = [0.5, -0.3, 1.1];
        let ys = [0.2, -0.1, 0.4];
        let loss_with = |factors: &[f64]| {
            let mut tape = nn::Tape::new();
            nn::forward_batch(&params, &arch, &xs, 3, Some(factors), &mut tape).unwrap();
            nn::loss(&params, &tape, &ys, 0.0)
        };
        let factor_grads = |factors: &[f64]| {
            let mut tape = nn::Tape::new();
            nn::forward_batch(&params, &arch, &xs, 3, Some(factors), &mut tape).unwrap();
            let mut d = Vec::new();
            nn::mse_output_grad(&tape, &ys, &mut d);
            let mut g = vec![0.0; factors.len()];
            nn::backward_batch(
                &params,
                &arch,
                &tape,
                Some(factors),
                &d,
                nn::BackwardTargets { factors: Some(&mut g), ..Default::default() },
            )
            .unwrap();
            g
        };
        let h = 1e-6;

        let us: Vec<f64> = (0..9).map(|i| 0.05 + 0.1 * i as f64).collect();
        let concrete = |l: f64| {
            let p = sigmoid(l);
            let f: Vec<f64> = us.iter().map(|u| (1.0 - concrete_relaxed_drop(l, 0.5, *u)) / (1.0 - p)).collect();
            let noise = ConcreteNoise {
                logit: [l],
                temperature: 0.5,
                regularizer: 0.01,
                l2: 0.05,
                next_layer: 1,
                drops: us.iter().map(|u| concrete_relaxed_drop(l, 0.5, *u)).collect(),
                grad: [0.0],
                adam: AdamState::new(1),
            };
            (loss_with(&f) + noise.penalty(&params, &arch), f, noise)
        };
        let l0 = logit(0.2);
        let (_, f, mut noise) = concrete(l0);
        let mut sink = vec![0.0; params.len()];
        noise.backward(&factor_grads(&f), &params, &arch, &mut sink);
        let fd = (concrete(l0 + h).0 - concrete(l0 - h).0) / (2.0 * h);
        assert!((noise.grad[0] - fd).abs() < 1e-6 * fd.abs().max(1.0), "{} vs {fd}", noise.grad[0]);

        let eps: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).collect();
        let variational = |la: &[f64]| {
            let f: Vec<f64> =
                eps.iter().enumerate().map(|(i, e)| 1.0 + libm::exp(0.5 * la[i % 3]) * e).collect();
            let noise = VariationalNoise {
                log_alpha: la.to_vec(),
                max_log_alpha: 0.0,
                kl_scale: 0.1,
                eps: eps.clone(),
                grad: vec![0.0; 3],
                adam: AdamState::new(3),
            };
            (loss_with(&f) + noise.penalty(&params, &arch), f, noise)
        };
        let la0 = [-1.0, -2.0, -0.5];
        let (_, f, mut noise) = variational(&la0);
        noise.backward(&factor_grads(&f), &params, &arch, &mut sink);
        for j in 0..3 {
            let (mut a, mut b) = (la0, la0);
            a[j] += h;
            b[j] -= h;
            let fd = (variational(&a).0 - variational(&b).0) / (2.0 * h);
            assert!((noise.grad[j] - fd).abs() < 1e-6 * fd.abs().max(1.0), "{} vs {fd}", noise.grad[j]);
        }
    }

    #[test]
    fn model_serde_round_trip() {
        let (arch, p) = unit_net();
        let m = DropoutModel::new(arch, p, LearnedNoise::Concrete { logit: -1.5, temperature: 0.1 }, 100).unwrap();
        let back: DropoutModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
