//! File formats, configuration and the parallel runner behind the `uqbench`
//! binary.

pub mod config;
pub mod manifest;
pub mod record;
pub mod runner;
pub mod tables;

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("record error: {0}")]
    Record(String),
}

impl CliError {
    /// Process exit code: 1 for configuration errors, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::Record(_) => 2,
        }
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}
