//! Run configuration files (TOML).
//!
//! ```toml
//! experiment = "E1"
//! complexity = [1, 5]
//! k = 10
//! seed = 0
//!
//! [[methods]]
//! name = "BD"
//! rate = 0.1
//!
//! [[methods]]
//! name = "EnsBS"
//! members = 20
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use uqbench::datagen::ExperimentId;
use uqbench::eval::{EvalOptions, MethodSpec};
use uqbench::nn::Architecture;
use uqbench::uqmethods::{DropoutSpec, EnsembleMode, EnsembleSpec};

use crate::CliError;

pub const DESK_MEMBERS: usize = 20;
pub const FULL_MEMBERS: usize = 120;
pub const DESK_K: usize = 10;
pub const FULL_K: usize = 50;
pub const DESK_MAX_E2_DIM: f64 = 3.0;

/// The file as written, before defaults and validation.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: String,
    #[serde(alias = "f_main", alias = "dimension")]
    pub complexity: Vec<f64>,
    pub methods: Vec<RawMethod>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub epochs: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub save_models: Option<bool>,
}

/// A `[[methods]]` block. Which keys are allowed depends on `name`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMethod {
    pub name: String,
    pub rate: Option<f64>,
    pub mc_samples: Option<usize>,
    pub temperature: Option<f64>,
    pub initial_rate: Option<f64>,
    pub regularizer_scale: Option<f64>,
    pub initial_alpha: Option<f64>,
    pub max_alpha: Option<f64>,
    pub kl_weight: Option<f64>,
    pub members: Option<usize>,
    pub adversarial_epsilon: Option<f64>,
    pub bootstrap_batch: Option<usize>,
}

/// Command-line settings that override or complete the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
    pub paper_scale: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub complexities: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    pub k: usize,
    pub master_seed: u64,
    pub workers: usize,
    pub output: PathBuf,
    pub options: EvalOptions,
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("schema: {}", e.message())))?;
    raw.resolve(overrides)
}

/// Training range width used for the default adversarial step: 1% of it.
const TRAIN_RANGE_WIDTH: f64 = 8.0;

impl RawMethod {
    fn forbid(&self, allowed: &[&str]) -> Result<(), CliError> {
        let present = [
            ("rate", self.rate.is_some()),
            ("mc_samples", self.mc_samples.is_some()),
            ("temperature", self.temperature.is_some()),
            ("initial_rate", self.initial_rate.is_some()),
            ("regularizer_scale", self.regularizer_scale.is_some()),
            ("initial_alpha", self.initial_alpha.is_some()),
            ("max_alpha", self.max_alpha.is_some()),
            ("kl_weight", self.kl_weight.is_some()),
            ("members", self.members.is_some()),
            ("adversarial_epsilon", self.adversarial_epsilon.is_some()),
            ("bootstrap_batch", self.bootstrap_batch.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return Err(config_err(
                    &format!("methods.{}.{key}", self.name),
                    format!("not a parameter of {}", self.name),
                ));
            }
        }
        Ok(())
    }

    fn resolve(&self, paper_scale: bool) -> Result<MethodSpec, CliError> {
        let key = |k: &str| format!("methods.{}.{k}", self.name);
        let members_default = if paper_scale { FULL_MEMBERS } else { DESK_MEMBERS };
        let spec = match self.name.as_str() {
            "BLR" => {
                self.forbid(&[])?;
                MethodSpec::Anchor
            }
            "BD" => {
                self.forbid(&["rate", "mc_samples"])?;
                let rate = self.rate.ok_or_else(|| config_err(&key("rate"), "missing field `rate`"))?;
                let mut s = DropoutSpec::fixed_rate(rate);
                s.mc_samples = self.mc_samples.unwrap_or(s.mc_samples);
                MethodSpec::Dropout(s)
            }
            "CD" => {
                self.forbid(&["mc_samples", "temperature", "initial_rate", "regularizer_scale"])?;
                let mut s = DropoutSpec::concrete();
                s.mc_samples = self.mc_samples.unwrap_or(s.mc_samples);
                s.temperature = self.temperature.unwrap_or(s.temperature);
                s.rate = self.initial_rate.unwrap_or(s.rate);
                s.regularizer_scale = self.regularizer_scale.unwrap_or(s.regularizer_scale);
                MethodSpec::Dropout(s)
            }
            "VD" => {
                self.forbid(&["mc_samples", "initial_alpha", "max_alpha", "kl_weight"])?;
                let mut s = DropoutSpec::variational();
                s.mc_samples = self.mc_samples.unwrap_or(s.mc_samples);
                s.initial_alpha = self.initial_alpha.unwrap_or(s.initial_alpha);
                s.max_alpha = self.max_alpha.unwrap_or(s.max_alpha);
                s.kl_weight = self.kl_weight.unwrap_or(s.kl_weight);
                MethodSpec::Dropout(s)
            }
            "Ens" | "EnsAdvA" | "EnsBS" => {
                let mode = match self.name.as_str() {
                    "Ens" => {
                        self.forbid(&["members"])?;
                        EnsembleMode::Standard
                    }
                    "EnsAdvA" => {
                        self.forbid(&["members", "adversarial_epsilon"])?;
                        EnsembleMode::Adversarial
                    }
                    _ => {
                        self.forbid(&["members", "bootstrap_batch"])?;
                        EnsembleMode::Bootstrap
                    }
                };
                let mut s = EnsembleSpec::new(mode, self.members.unwrap_or(members_default));
                s.adversarial_epsilon = self.adversarial_epsilon.unwrap_or(0.01 * TRAIN_RANGE_WIDTH);
                s.bootstrap_batch = self.bootstrap_batch;
                MethodSpec::Ensemble(s)
            }
            other => {
                return Err(config_err(
                    "methods.name",
                    format!("unknown method {other:?} (expected BLR, BD, CD, VD, Ens, EnsAdvA or EnsBS)"),
                ))
            }
        };
        spec.validate().map_err(|e| config_err(&format!("methods.{}", self.name), e))?;
        Ok(spec)
    }
}

impl RawConfig {
    pub fn resolve(self, ov: &Overrides) -> Result<RunConfig, CliError> {
        let experiment = ExperimentId::parse(&self.experiment).map_err(|e| config_err("experiment", e))?;
        if self.complexity.is_empty() {
            return Err(config_err("complexity", "list must not be empty"));
        }
        for &c in &self.complexity {
            match experiment {
                ExperimentId::E1 if !(c > 0.0 && c.is_finite()) => {
                    return Err(config_err("complexity", format!("f_main must be positive, got {c}")))
                }
                ExperimentId::E2 if !(c >= 1.0 && c.fract() == 0.0) => {
                    return Err(config_err("complexity", format!("dimension must be a positive integer, got {c}")))
                }
                ExperimentId::E2 if c > DESK_MAX_E2_DIM && !ov.paper_scale => {
                    return Err(config_err(
                        "complexity",
                        format!("dimension {c} exceeds the desk-scale limit {DESK_MAX_E2_DIM}; use --paper-scale"),
                    ))
                }
                ExperimentId::E3 if c != 2.0 => {
                    return Err(config_err("complexity", format!("E3 has the fixed complexity 2, got {c}")))
                }
                _ => {}
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.complexity {
            if !seen.insert(c.to_bits()) {
                return Err(config_err("complexity", format!("duplicate value {c}")));
            }
        }
        if self.methods.is_empty() {
            return Err(config_err("methods", "list must not be empty"));
        }
        let methods = self.methods.iter().map(|m| m.resolve(ov.paper_scale)).collect::<Result<Vec<_>, _>>()?;
        let mut labels = std::collections::BTreeSet::new();
        for m in &methods {
            if !labels.insert(m.label()) {
                return Err(config_err("methods", format!("method {} listed twice", m.label())));
            }
        }
        let k = self.k.unwrap_or(if ov.paper_scale { FULL_K } else { DESK_K });
        if k == 0 {
            return Err(config_err("k", "must be at least 1"));
        }
        let workers = ov.workers.or(self.workers).unwrap_or(1);
        if workers == 0 {
            return Err(config_err("workers", "must be at least 1"));
        }
        if self.epochs == Some(0) {
            return Err(config_err("epochs", "must be at least 1"));
        }
        let architecture = match &self.hidden {
            None => None,
            Some(h) => {
                let d = match experiment {
                    ExperimentId::E1 => 1,
                    ExperimentId::E3 => 2,
                    ExperimentId::E2 if self.complexity.len() == 1 => self.complexity[0] as usize,
                    ExperimentId::E2 => {
                        return Err(config_err("hidden", "a custom architecture needs a single E2 dimension"))
                    }
                };
                let mut widths = vec![d];
                widths.extend(h);
                widths.push(1);
                let site = h.len().saturating_sub(2);
                Some(
                    Architecture::new(widths, uqbench::nn::DEFAULT_NEGATIVE_SLOPE, site)
                        .map_err(|e| config_err("hidden", e))?,
                )
            }
        };
        Ok(RunConfig {
            experiment,
            complexities: self.complexity,
            methods,
            k,
            master_seed: ov.seed.or(self.seed).unwrap_or(0),
            workers,
            output: ov.output.clone().or(self.output).unwrap_or_else(|| PathBuf::from("out")),
            options: EvalOptions { epochs: self.epochs, architecture, keep_models: self.save_models.unwrap_or(false) },
        })
    }
}
