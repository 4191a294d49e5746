//! Nonlinear feature maps `G: ℝᵈ → ℝᵖ` defining the problem families.
//!
//! The regression function of every benchmark problem is `G(x)ᵀγ`. Three
//! families are provided:
//!
//! * [`BasisKind::Sinusoidal`]: four sines `sin(2π f_j x + ρ_j)` in one
//!   input dimension, with frequencies equally spaced over
//!   `[0.9, 1.1]·f_main` and phases equally spaced over `[0, 2π]`.
//! * [`BasisKind::StyblinskiTang`]: per-coordinate monomials
//!   `(x_j, x_j², x_j⁴)` so that `γ = (2.5, -8, 0.5, …)` reproduces the
//!   Styblinski–Tang function.
//! * [`BasisKind::Polynomial2D`]: `(1, x₁, x₂, x₁x₂, x₁², x₂²)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    Sinusoidal,
    StyblinskiTang,
    Polynomial2D,
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Sinusoidal { frequencies: [f64; 4], phases: [f64; 4] },
    StyblinskiTang { dim: usize },
    Polynomial2D,
}

/// A feature map. Immutable once built.
///
/// Serializes as a kind tag plus a flat parameter list:
/// `Sinusoidal` carries `[f₁..f₄, ρ₁..ρ₄]`, `StyblinskiTang` carries `[d]`
/// and `Polynomial2D` carries nothing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BasisDescriptor", try_from = "BasisDescriptor")]
pub struct BasisFunction {
    params: Params,
}

/// Wire form of a [`BasisFunction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisDescriptor {
    pub kind: BasisKind,
    pub params: Vec<f64>,
}

impl BasisFunction {
    /// Sinusoidal basis at main frequency `f_main` (cycles per unit input).
    pub fn sinusoidal(f_main: f64) -> Result<Self> {
        if !(f_main > 0.0) || !f_main.is_finite() {
            return Err(Error::invalid(format!("f_main must be positive, got {f_main}")));
        }
        let mut frequencies = [0.0; 4];
        let mut phases = [0.0; 4];
        for j in 0..4 {
            let t = j as f64 / 3.0;
            frequencies[j] = (0.9 + 0.2 * t) * f_main;
            phases[j] = 2.0 * PI * t;
        }
        Ok(Self { params: Params::Sinusoidal { frequencies, phases } })
    }

    pub fn styblinski_tang(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("Styblinski-Tang dimension must be at least 1"));
        }
        Ok(Self { params: Params::StyblinskiTang { dim } })
    }

    pub fn polynomial_2d() -> Self {
        Self { params: Params::Polynomial2D }
    }

    pub fn kind(&self) -> BasisKind {
        match self.params {
            Params::Sinusoidal { .. } => BasisKind::Sinusoidal,
            Params::StyblinskiTang { .. } => BasisKind::StyblinskiTang,
            Params::Polynomial2D => BasisKind::Polynomial2D,
        }
    }

    /// Input dimension `d`.
    pub fn input_dim(&self) -> usize {
        match self.params {
            Params::Sinusoidal { .. } => 1,
            Params::StyblinskiTang { dim } => dim,
            Params::Polynomial2D => 2,
        }
    }

    /// Feature dimension `p`.
    pub fn output_dim(&self) -> usize {
        match self.params {
            Params::Sinusoidal { .. } => 4,
            Params::StyblinskiTang { dim } => 3 * dim,
            Params::Polynomial2D => 6,
        }
    }

    /// Sinusoid frequencies, if this is a sinusoidal basis.
    pub fn frequencies(&self) -> Option<[f64; 4]> {
        match self.params {
            Params::Sinusoidal { frequencies, .. } => Some(frequencies),
            _ => None,
        }
    }

    pub fn phases(&self) -> Option<[f64; 4]> {
        match self.params {
            Params::Sinusoidal { phases, .. } => Some(phases),
            _ => None,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.evaluate_into(x, &mut out)?;
        Ok(out)
    }

    /// Writes `G(x)` into `out`, which must have length `p`.
    pub fn evaluate_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has dimension {}, basis expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if out.len() != self.output_dim() {
            return Err(Error::invalid(format!(
                "output buffer has length {}, basis produces {}",
                out.len(),
                self.output_dim()
            )));
        }
        match &self.params {
            Params::Sinusoidal { frequencies, phases } => {
                for j in 0..4 {
                    out[j] = libm::sin(2.0 * PI * frequencies[j] * x[0] + phases[j]);
                }
            }
            Params::StyblinskiTang { .. } => {
                for (xi, chunk) in x.iter().zip(out.chunks_exact_mut(3)) {
                    let sq = xi * xi;
                    chunk[0] = *xi;
                    chunk[1] = sq;
                    chunk[2] = sq * sq;
                }
            }
            Params::Polynomial2D => {
                let (a, b) = (x[0], x[1]);
                out.copy_from_slice(&[1.0, a, b, a * b, a * a, b * b]);
            }
        }
        Ok(())
    }

    /// The noise-free regression function `G(x)ᵀγ`.
    pub fn ground_truth(&self, gamma: &[f64], x: &[f64]) -> Result<f64> {
        if gamma.len() != self.output_dim() {
            return Err(Error::invalid(format!(
                "gamma has length {}, basis has {} features",
                gamma.len(),
                self.output_dim()
            )));
        }
        let g = self.evaluate(x)?;
        Ok(dot(&g, gamma))
    }
}

/// Anything that maps an input vector to a fixed-length feature vector.
pub trait FeatureMap {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Writes the features of `x` into `out` (length `output_dim()`).
    fn evaluate_into(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.evaluate_into(x, &mut out)?;
        Ok(out)
    }
}

impl FeatureMap for BasisFunction {
    fn input_dim(&self) -> usize {
        BasisFunction::input_dim(self)
    }

    fn output_dim(&self) -> usize {
        BasisFunction::output_dim(self)
    }

    fn evaluate_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        BasisFunction::evaluate_into(self, x, out)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl From<BasisFunction> for BasisDescriptor {
    fn from(b: BasisFunction) -> Self {
        let params = match b.params {
            Params::Sinusoidal { frequencies, phases } => {
                frequencies.iter().chain(phases.iter()).copied().collect()
            }
            Params::StyblinskiTang { dim } => vec![dim as f64],
            Params::Polynomial2D => Vec::new(),
        };
        BasisDescriptor { kind: b.kind(), params }
    }
}

impl TryFrom<BasisDescriptor> for BasisFunction {
    type Error = Error;

    fn try_from(d: BasisDescriptor) -> Result<Self> {
        let params = match d.kind {
            BasisKind::Sinusoidal => {
                if d.params.len() != 8 {
                    return Err(Error::invalid("sinusoidal basis needs 4 frequencies and 4 phases"));
                }
                let mut frequencies = [0.0; 4];
                let mut phases = [0.0; 4];
                frequencies.copy_from_slice(&d.params[..4]);
                phases.copy_from_slice(&d.params[4..]);
                if frequencies.windows(2).any(|w| !(w[0] < w[1])) || !(frequencies[0] > 0.0) {
                    return Err(Error::invalid("sinusoid frequencies must be positive and increasing"));
                }
                Params::Sinusoidal { frequencies, phases }
            }
            BasisKind::StyblinskiTang => match d.params.as_slice() {
                [dim] if *dim >= 1.0 && libm::trunc(*dim) == *dim => {
                    Params::StyblinskiTang { dim: *dim as usize }
                }
                _ => return Err(Error::invalid("Styblinski-Tang basis needs one positive integer dimension")),
            },
            BasisKind::Polynomial2D => {
                if !d.params.is_empty() {
                    return Err(Error::invalid("polynomial basis takes no parameters"));
                }
                Params::Polynomial2D
            }
        };
        Ok(Self { params })
    }
}
