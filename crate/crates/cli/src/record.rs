//! Run-records: everything needed to rebuild the tables without retraining.

use std::path::Path;

use serde::{Deserialize, Serialize};
use uqbench::datagen::{Dataset, Preset};
use uqbench::eval::{EvalOptions, MethodRun, MethodSpec};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub schema_version: u32,
    pub experiment: String,
    pub complexity: f64,
    pub master_seed: u64,
    pub k: usize,
    pub epochs: usize,
    pub method: MethodSpec,
    pub options: EvalOptions,
    pub preset: Preset,
    /// Observations of the repetition shown in the band and train files.
    pub designated_repetition: u64,
    pub designated_train: Dataset,
    pub run: MethodRun,
}

impl RunRecord {
    pub fn label(&self) -> &str {
        &self.run.method
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| CliError::Record(m);
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.run.method != self.method.label() {
            return Err(bad(format!("method tag {} does not match its spec", self.run.method)));
        }
        let n = self.preset.test_inputs.len();
        if self.run.records.len() != n {
            return Err(bad(format!("record holds {} inputs, the preset has {n}", self.run.records.len())));
        }
        let k = self.run.records.first().map(|r| r.k()).unwrap_or(0);
        if k == 0 {
            return Err(bad("record has no successful repetitions".into()));
        }
        for (i, r) in self.run.records.iter().enumerate() {
            if r.input_id != i || r.k() != k || r.anchor.len() != k || r.seeds.len() != k || r.repetitions.len() != k {
                return Err(bad(format!("input {i} is incomplete")));
            }
            if r.predictions.iter().chain(&r.anchor).any(|p| !(p.std >= 0.0 && p.mean.is_finite() && p.std.is_finite())) {
                return Err(bad(format!("input {i} has invalid predictions")));
            }
        }
        if self.designated_train.len() != self.preset.train_inputs.len() {
            return Err(bad("designated training set does not match the preset".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<Vec<u8>, CliError> {
        let mut bytes = serde_json::to_vec(self).map_err(|e| CliError::Runtime(format!("serializing record: {e}")))?;
        bytes.push(b'\n');
        crate::write_file(path, &bytes)?;
        Ok(bytes)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Record(format!("cannot read {}: {e}", path.display())))?;
        let rec: RunRecord = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Record(format!("{} is not a valid run-record: {e}", path.display())))?;
        rec.validate()?;
        Ok(rec)
    }
}
