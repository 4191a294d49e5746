//! Benchmark problems for epistemic uncertainty quantification in regression.
//!
//! Regression problems are generated from models that are linear in a hidden
//! parameter vector, `y ~ N(G(x)ᵀγ, σ²)`, with a known nonlinear feature map
//! `G`. Because the model is linear in `γ`, an exact Bayesian solution under
//! the flat prior `π(γ) ∝ 1` is available (the *anchor*), and neural-network
//! uncertainty methods trained on the same data can be scored against it.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! front-end and parallel orchestration live in the `uqbench-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod anchor;
pub mod basis;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod nn;
pub mod seed;
pub mod stats;
pub mod uqmethods;

pub use anchor::BlrPosterior;
pub use basis::{BasisFunction, BasisKind};
pub use datagen::{Dataset, ExperimentId, GenerativeModel, InputDesign, Preset};
pub use error::{Error, Result};
pub use eval::{CoverageReport, CoverageRow, EvalRecord, MethodSpec};
pub use uqmethods::UqPrediction;
