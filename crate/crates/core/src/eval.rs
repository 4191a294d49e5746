//! Repeated-sampling evaluation: deviation from the ground truth, mean
//! uncertainty and coverage of the 1.96σ band, per test input.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::anchor::{fit_blr, BlrPosterior};
use crate::datagen::{repetition_seed, Bounds, Preset};
use crate::error::{Error, Result};
use crate::nn::{Architecture, TrainConfig};
use crate::seed::{self, tag};
use crate::stats;
use crate::uqmethods::{
    train_bd, train_cd, train_ensemble, train_vd, DropoutMode, DropoutModel, DropoutSpec, Ensemble, EnsembleMode,
    EnsembleSpec, LearnedNoise, UqPrediction,
};

pub const COVERAGE_FACTOR: f64 = 1.96;
/// Fraction of repetitions that must succeed for a report.
pub const MIN_SUCCESS_FRACTION: f64 = 0.9;

/// A method under test, with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    /// The exact Bayesian linear regression under the flat prior.
    Anchor,
    Dropout(DropoutSpec),
    Ensemble(EnsembleSpec),
}

impl MethodSpec {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Anchor => "BLR",
            Self::Dropout(s) => match s.mode {
                DropoutMode::FixedRate => "BD",
                DropoutMode::Concrete => "CD",
                DropoutMode::Variational => "VD",
            },
            Self::Ensemble(s) => match s.mode {
                EnsembleMode::Standard => "Ens",
                EnsembleMode::Adversarial => "EnsAdvA",
                EnsembleMode::Bootstrap => "EnsBS",
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Anchor => Ok(()),
            Self::Dropout(s) => s.validate(),
            Self::Ensemble(s) => s.validate(),
        }
    }

    pub fn is_network(&self) -> bool {
        !matches!(self, Self::Anchor)
    }
}

/// Training settings shared by every network method of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// Overrides the `300·c` epoch rule.
    pub epochs: Option<usize>,
    /// Overrides the default 128-64-32 network.
    pub architecture: Option<Architecture>,
    /// Keep the trained models in the repetition outcomes.
    pub keep_models: bool,
}

impl EvalOptions {
    pub fn epochs_for(&self, preset: &Preset) -> usize {
        self.epochs.unwrap_or_else(|| (libm::round(300.0 * preset.epoch_scale()) as usize).max(1))
    }

    pub fn architecture_for(&self, preset: &Preset) -> Architecture {
        self.architecture.clone().unwrap_or_else(|| Architecture::standard(preset.model.basis.input_dim()))
    }
}

/// A trained method, ready to predict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainedModel {
    Anchor(BlrPosterior),
    Dropout(DropoutModel),
    Ensemble(Ensemble),
}

/// What one repetition produced for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionOutcome {
    pub repetition: u64,
    pub seed: u64,
    pub predictions: Vec<UqPrediction>,
    /// Anchor predictions on the same data, for the Cramér–Rao diagnostic.
    pub anchor: Vec<UqPrediction>,
    pub learned_noise: Option<LearnedNoise>,
    pub model: Option<TrainedModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionFailure {
    pub repetition: u64,
    pub seed: u64,
    pub error: String,
}

fn anchor_predictions(preset: &Preset, posterior: &BlrPosterior) -> Result<Vec<UqPrediction>> {
    preset.test_inputs.iter().map(|x| posterior.predict(&preset.model.basis, x)).collect()
}

/// Runs repetition `r`: fresh observation noise on the fixed training
/// inputs, anchor refit, method training and prediction at every test input.
///
/// Training uses `derive(rep_seed, TRAINING, 0)` and sampling at prediction
/// uses `derive(rep_seed, PREDICTION, 0)`, where `rep_seed` is the
/// repetition seed under the preset's master seed.
pub fn run_repetition(
    preset: &Preset,
    method: &MethodSpec,
    options: &EvalOptions,
    repetition: u64,
) -> Result<RepetitionOutcome> {
    method.validate()?;
    let rep_seed = repetition_seed(preset.master_seed, repetition);
    let data = preset.repetition_dataset(repetition)?;
    let posterior = fit_blr(&preset.model.basis, &data, preset.model.sigma)?;
    let anchor = anchor_predictions(preset, &posterior)?;
    let train_seed = seed::derive(rep_seed, tag::TRAINING, 0);
    let predict_seed = seed::derive(rep_seed, tag::PREDICTION, 0);
    let arch = options.architecture_for(preset);
    let cfg = TrainConfig::for_train_set(data.len(), options.epochs_for(preset), train_seed);

    let (predictions, model) = match method {
        MethodSpec::Anchor => (anchor.clone(), TrainedModel::Anchor(posterior)),
        MethodSpec::Dropout(spec) => {
            let model = match spec.mode {
                DropoutMode::FixedRate => train_bd(&arch, &data, &cfg, spec)?,
                DropoutMode::Concrete => train_cd(&arch, &data, &cfg, spec)?,
                DropoutMode::Variational => train_vd(&arch, &data, &cfg, spec)?,
            };
            let preds = model.predict_many(&preset.test_inputs, spec.mc_samples, predict_seed)?;
            (preds, TrainedModel::Dropout(model))
        }
        MethodSpec::Ensemble(spec) => {
            let ens = train_ensemble(&arch, &data, &cfg, spec)?;
            (ens.predict_many(&preset.test_inputs)?, TrainedModel::Ensemble(ens))
        }
    };
    let learned_noise = match &model {
        TrainedModel::Dropout(m) => Some(m.noise.clone()),
        _ => None,
    };
    Ok(RepetitionOutcome {
        repetition,
        seed: rep_seed,
        predictions,
        anchor,
        learned_noise,
        model: options.keep_models.then_some(model),
    })
}

/// One test input of one method across all successful repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub input_id: usize,
    pub x: Vec<f64>,
    pub ground_truth: f64,
    pub method: String,
    pub repetitions: Vec<u64>,
    pub seeds: Vec<u64>,
    pub predictions: Vec<UqPrediction>,
    pub anchor: Vec<UqPrediction>,
}

impl EvalRecord {
    pub fn k(&self) -> usize {
        self.predictions.len()
    }
}

/// All records of one method on one preset plus its failure log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: String,
    pub attempted: usize,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<RepetitionFailure>,
    pub learned_noise: Vec<Option<LearnedNoise>>,
    pub models: Vec<TrainedModel>,
}

/// Minimum number of successes out of `k` attempted repetitions.
pub fn required_successes(k: usize) -> usize {
    libm::ceil(MIN_SUCCESS_FRACTION * k as f64 - 1e-9) as usize
}

/// Gathers per-repetition results (in any order) into per-input records.
/// Failed repetitions are excluded and logged; fewer than 90% successes is
/// an error.
pub fn assemble(
    preset: &Preset,
    method: &MethodSpec,
    outcomes: Vec<(u64, Result<RepetitionOutcome>)>,
) -> Result<MethodRun> {
    let attempted = outcomes.len();
    if attempted == 0 {
        return Err(Error::invalid("no repetitions to assemble"));
    }
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (r, outcome) in outcomes {
        match outcome {
            Ok(o) => ok.push(o),
            Err(e) => failures.push(RepetitionFailure {
                repetition: r,
                seed: repetition_seed(preset.master_seed, r),
                error: e.to_string(),
            }),
        }
    }
    ok.sort_by_key(|o| o.repetition);
    failures.sort_by_key(|f| f.repetition);
    let required = required_successes(attempted);
    if ok.len() < required {
        return Err(Error::InsufficientRepetitions { succeeded: ok.len(), required });
    }
    let truth = preset.ground_truth()?;
    let n = preset.test_inputs.len();
    for o in &ok {
        if o.predictions.len() != n || o.anchor.len() != n {
            return Err(Error::invalid(format!("repetition {} has the wrong number of predictions", o.repetition)));
        }
    }
    let records = (0..n)
        .map(|i| EvalRecord {
            input_id: i,
            x: preset.test_inputs[i].clone(),
            ground_truth: truth[i],
            method: method.label().into(),
            repetitions: ok.iter().map(|o| o.repetition).collect(),
            seeds: ok.iter().map(|o| o.seed).collect(),
            predictions: ok.iter().map(|o| o.predictions[i]).collect(),
            anchor: ok.iter().map(|o| o.anchor[i]).collect(),
        })
        .collect();
    let learned_noise = ok.iter().map(|o| o.learned_noise.clone()).collect();
    let models = ok.into_iter().filter_map(|o| o.model).collect();
    Ok(MethodRun { method: method.label().into(), attempted, records, failures, learned_noise, models })
}

/// Runs repetitions `0..k` sequentially and assembles them.
pub fn run_repetitions(preset: &Preset, method: &MethodSpec, options: &EvalOptions, k: usize) -> Result<MethodRun> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    method.validate()?;
    let outcomes = (0..k as u64).map(|r| (r, run_repetition(preset, method, options, r))).collect();
    assemble(preset, method, outcomes)
}

pub fn deviation(pred_mean: f64, truth: f64) -> f64 {
    libm::fabs(pred_mean - truth)
}

/// `|mean - truth| ≤ 1.96·std`, non-strict.
pub fn covered(pred: &UqPrediction, truth: f64) -> bool {
    deviation(pred.mean, truth) <= COVERAGE_FACTOR * pred.std
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub input_id: usize,
    pub x: Vec<f64>,
    pub ground_truth: f64,
    pub mean_deviation: f64,
    pub deviation_stderr: f64,
    pub mean_uncertainty: f64,
    pub uncertainty_stderr: f64,
    pub coverage: f64,
    pub coverage_stderr: f64,
    pub in_distribution: bool,
    pub k_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub method: String,
    pub rows: Vec<CoverageRow>,
}

impl CoverageReport {
    /// Mean coverage over the rows selected by `in_distribution`.
    pub fn mean_coverage(&self, in_distribution: bool) -> Option<f64> {
        self.mean_of(in_distribution, |r| r.coverage)
    }

    pub fn mean_uncertainty(&self, in_distribution: bool) -> Option<f64> {
        self.mean_of(in_distribution, |r| r.mean_uncertainty)
    }

    fn mean_of(&self, in_distribution: bool, f: impl Fn(&CoverageRow) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.in_distribution == in_distribution).map(f).collect();
        (!v.is_empty()).then(|| stats::mean(&v))
    }
}

/// Per-input mean deviation and uncertainty with standard errors
/// `sample_std/√k`, and coverage with binomial error `sqrt(p̂(1-p̂)/k)`.
pub fn summarize(records: &[EvalRecord], train_bounds: &Bounds) -> Result<CoverageReport> {
    let Some(first) = records.first() else {
        return Err(Error::invalid("no records to summarize"));
    };
    let rows = records
        .iter()
        .map(|rec| {
            let k = rec.k();
            if k == 0 {
                return Err(Error::invalid(format!("input {} has no repetitions", rec.input_id)));
            }
            let devs: Vec<f64> = rec.predictions.iter().map(|p| deviation(p.mean, rec.ground_truth)).collect();
            let uncs: Vec<f64> = rec.predictions.iter().map(|p| p.std).collect();
            let hits = rec.predictions.iter().filter(|p| covered(p, rec.ground_truth)).count();
            let coverage = hits as f64 / k as f64;
            Ok(CoverageRow {
                input_id: rec.input_id,
                x: rec.x.clone(),
                ground_truth: rec.ground_truth,
                mean_deviation: stats::mean(&devs),
                deviation_stderr: stats::std_error(&devs),
                mean_uncertainty: stats::mean(&uncs),
                uncertainty_stderr: stats::std_error(&uncs),
                coverage,
                coverage_stderr: stats::binomial_std_error(coverage, k),
                in_distribution: train_bounds.contains(&rec.x),
                k_effective: k,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageReport { method: first.method.clone(), rows })
}

/// The "too small uncertainty" check: an estimator whose uncertainty is
/// below the anchor's must be biased or underestimate its own error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub input_id: usize,
    pub mean_uncertainty: f64,
    pub anchor_uncertainty: f64,
    pub rmse: f64,
    /// Uncertainty below the anchor's while the RMSE exceeds the uncertainty.
    pub flagged: bool,
}

pub fn lemma_diagnostics(records: &[EvalRecord]) -> Vec<LemmaRow> {
    records
        .iter()
        .map(|rec| {
            let uncs: Vec<f64> = rec.predictions.iter().map(|p| p.std).collect();
            let anchor: Vec<f64> = rec.anchor.iter().map(|p| p.std).collect();
            let sq: Vec<f64> = rec.predictions.iter().map(|p| (p.mean - rec.ground_truth) * (p.mean - rec.ground_truth)).collect();
            let mean_uncertainty = stats::mean(&uncs);
            let anchor_uncertainty = stats::mean(&anchor);
            let rmse = libm::sqrt(stats::mean(&sq));
            LemmaRow {
                input_id: rec.input_id,
                mean_uncertainty,
                anchor_uncertainty,
                rmse,
                flagged: mean_uncertainty < anchor_uncertainty && rmse > mean_uncertainty,
            }
        })
        .collect()
}
