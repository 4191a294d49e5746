//! The run manifest: every emitted file with its hash, and the status of
//! each (complexity, method) cell.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Complete,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the output root, with `/` separators.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub complexity: f64,
    pub method: String,
    pub status: Status,
    pub attempted: usize,
    pub succeeded: usize,
    /// Failed repetitions as `(repetition, message)`, or the cell error.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub master_seed: u64,
    pub k: usize,
    pub cells: Vec<CellEntry>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn add_file(&mut self, path: &str, bytes: &[u8]) {
        self.files.push(FileEntry { path: path.into(), sha256: sha256_hex(bytes), bytes: bytes.len() });
    }

    pub fn status(&self) -> Status {
        if self.cells.iter().all(|c| c.status == Status::Complete) {
            Status::Complete
        } else if self.cells.iter().all(|c| c.status == Status::Failed) {
            Status::Failed
        } else {
            Status::Partial
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut bytes =
            serde_json::to_vec_pretty(self).map_err(|e| CliError::Runtime(format!("serializing manifest: {e}")))?;
        bytes.push(b'\n');
        crate::write_file(path, &bytes)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Record(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Record(format!("{}: {e}", path.display())))
    }

    /// Re-hashes every listed file under `root`; returns the mismatching paths.
    pub fn verify(&self, root: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| match std::fs::read(root.join(&f.path)) {
                Ok(b) => sha256_hex(&b) != f.sha256,
                Err(_) => true,
            })
            .map(|f| f.path.clone())
            .collect()
    }
}
