//! Generative models, training data and test-input designs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::BasisFunction;
use crate::error::{Error, Result};
use crate::seed::{self, tag};

/// Ground truth: basis, true coefficients and known noise level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeModel {
    pub basis: BasisFunction,
    pub gamma: Vec<f64>,
    pub sigma: f64,
}

impl GenerativeModel {
    pub fn new(basis: BasisFunction, gamma: Vec<f64>, sigma: f64) -> Result<Self> {
        if gamma.len() != basis.output_dim() {
            return Err(Error::invalid(format!(
                "gamma has length {}, basis has {} features",
                gamma.len(),
                basis.output_dim()
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { basis, gamma, sigma })
    }

    pub fn ground_truth(&self, x: &[f64]) -> Result<f64> {
        self.basis.ground_truth(&self.gamma, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Seed the observation noise was drawn from.
    pub seed: u64,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>, seed: u64) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(Error::invalid(format!(
                "dataset needs matching non-empty inputs and targets, got {} and {}",
                inputs.len(),
                targets.len()
            )));
        }
        let d = inputs[0].len();
        if inputs.iter().any(|x| x.len() != d) {
            return Err(Error::invalid("dataset inputs have inconsistent dimensions"));
        }
        Ok(Self { inputs, targets, seed })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    /// Inputs flattened row-major, `len() × input_dim()`.
    pub fn flat_inputs(&self) -> Vec<f64> {
        self.inputs.iter().flatten().copied().collect()
    }
}

/// Axis-aligned box `[lo, hi]` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds(pub Vec<(f64, f64)>);

impl Bounds {
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Bounds(vec![(lo, hi); dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.0.len() && x.iter().zip(&self.0).all(|(v, (lo, hi))| *lo <= *v && *v <= *hi)
    }

    fn validate(&self) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::invalid("bounds need at least one dimension"));
        }
        for (i, (lo, hi)) in self.0.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::invalid(format!("bounds in dimension {i} are not an interval: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// How a set of inputs is laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputDesign {
    /// `count` i.i.d. uniform points in the box.
    UniformRandomBox { bounds: Bounds, count: usize },
    /// `count` equidistant points on `[lo, hi]`, endpoints included.
    EquidistantGrid1D { lo: f64, hi: f64, count: usize },
    /// Points `(1-λ)·lo + λ·hi` along the main diagonal of the box.
    Diagonal { bounds: Bounds, lambdas: Vec<f64> },
    /// `⌈√count⌉²` lattice points, endpoints included in both axes.
    RegularGrid2D { bounds: Bounds, count: usize },
}

impl InputDesign {
    pub fn validate(&self) -> Result<()> {
        match self {
            InputDesign::UniformRandomBox { bounds, count } => {
                bounds.validate()?;
                nonzero(*count)
            }
            InputDesign::EquidistantGrid1D { lo, hi, count } => {
                Bounds(vec![(*lo, *hi)]).validate()?;
                nonzero(*count)
            }
            InputDesign::Diagonal { bounds, lambdas } => {
                bounds.validate()?;
                if lambdas.is_empty() {
                    return Err(Error::invalid("diagonal design needs at least one lambda"));
                }
                if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
                    return Err(Error::invalid(format!("lambda {l} outside [0, 1]")));
                }
                Ok(())
            }
            InputDesign::RegularGrid2D { bounds, count } => {
                bounds.validate()?;
                if bounds.dim() != 2 {
                    return Err(Error::invalid("regular grid design is two-dimensional"));
                }
                nonzero(*count)
            }
        }
    }
}

fn nonzero(count: usize) -> Result<()> {
    if count == 0 {
        Err(Error::invalid("design count must be at least 1"))
    } else {
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.5 * (lo + hi)];
    }
    let step = (hi - lo) / (count - 1) as f64;
    (0..count)
        .map(|i| if i == count - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// `count` equidistant values on `[0, 1]`, endpoints included.
pub fn unit_lambdas(count: usize) -> Vec<f64> {
    linspace(0.0, 1.0, count)
}

/// `p` independent draws from `U[0, 1)`.
pub fn sample_gamma(p: usize, rng_seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(rng_seed);
    (0..p).map(|_| rng.random::<f64>()).collect()
}

pub fn design_inputs(design: &InputDesign, rng_seed: u64) -> Result<Vec<Vec<f64>>> {
    design.validate()?;
    let points = match design {
        InputDesign::UniformRandomBox { bounds, count } => {
            let mut rng = seed::rng(rng_seed);
            (0..*count)
                .map(|_| bounds.0.iter().map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect())
                .collect()
        }
        InputDesign::EquidistantGrid1D { lo, hi, count } => {
            linspace(*lo, *hi, *count).into_iter().map(|v| vec![v]).collect()
        }
        InputDesign::Diagonal { bounds, lambdas } => lambdas
            .iter()
            .map(|l| bounds.0.iter().map(|(lo, hi)| (1.0 - l) * lo + l * hi).collect())
            .collect(),
        InputDesign::RegularGrid2D { bounds, count } => {
            let side = ceil_sqrt(*count);
            let xs = linspace(bounds.0[0].0, bounds.0[0].1, side);
            let ys = linspace(bounds.0[1].0, bounds.0[1].1, side);
            xs.iter().flat_map(|a| ys.iter().map(move |b| vec![*a, *b])).collect()
        }
    };
    Ok(points)
}

fn ceil_sqrt(n: usize) -> usize {
    let mut s = libm::sqrt(n as f64) as usize;
    while s * s < n {
        s += 1;
    }
    while s > 1 && (s - 1) * (s - 1) >= n {
        s -= 1;
    }
    s
}

/// Draws `y_i = G(x_i)ᵀγ + ε_i`, `ε_i ~ N(0, σ²)` i.i.d.
pub fn sample_observations(model: &GenerativeModel, inputs: &[Vec<f64>], rng_seed: u64) -> Result<Dataset> {
    let mut rng = seed::rng(rng_seed);
    let mut targets = Vec::with_capacity(inputs.len());
    for x in inputs {
        let truth = model.ground_truth(x)?;
        let eps: f64 = StandardNormal.sample(&mut rng);
        targets.push(truth + model.sigma * eps);
    }
    Dataset::new(inputs.to_vec(), targets, rng_seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    E1,
    E2,
    E3,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::E1 => "E1",
            ExperimentId::E2 => "E2",
            ExperimentId::E3 => "E3",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "E1" | "e1" => Ok(ExperimentId::E1),
            "E2" | "e2" => Ok(ExperimentId::E2),
            "E3" | "e3" => Ok(ExperimentId::E3),
            other => Err(Error::invalid(format!("unknown experiment id {other:?}"))),
        }
    }
}

/// A named test input reported separately in trend tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub label: String,
    pub x: Vec<f64>,
    /// Position along the diagonal, for diagonal designs.
    pub lambda: Option<f64>,
}

/// The full configuration of one experiment at one complexity level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub id: ExperimentId,
    pub complexity: f64,
    pub master_seed: u64,
    pub model: GenerativeModel,
    pub train_design: InputDesign,
    pub test_design: InputDesign,
    pub probes: Vec<Probe>,
    /// Training inputs, drawn once and shared by all repetitions.
    pub train_inputs: Vec<Vec<f64>>,
    /// Test-design inputs followed by the probe inputs.
    pub test_inputs: Vec<Vec<f64>>,
}

pub const E1_TRAIN: usize = 50;
pub const E1_TEST: usize = 1000;
pub const E2_DIAGONAL_POINTS: usize = 200;
pub const E3_TRAIN: usize = 450;
pub const E3_GRID_POINTS: usize = 441;

impl Preset {
    /// Number of points coming from the test design (probes excluded).
    pub fn design_len(&self) -> usize {
        self.test_inputs.len() - self.probes.len()
    }

    pub fn train_bounds(&self) -> &Bounds {
        match &self.train_design {
            InputDesign::UniformRandomBox { bounds, .. } => bounds,
            InputDesign::Diagonal { bounds, .. } | InputDesign::RegularGrid2D { bounds, .. } => bounds,
            InputDesign::EquidistantGrid1D { .. } => unreachable!("presets draw training inputs uniformly"),
        }
    }

    pub fn in_distribution(&self, x: &[f64]) -> bool {
        self.train_bounds().contains(x)
    }

    /// The `c` in the `300·c` epoch rule.
    pub fn epoch_scale(&self) -> f64 {
        match self.id {
            ExperimentId::E1 | ExperimentId::E2 => self.complexity,
            ExperimentId::E3 => 2.0,
        }
    }

    /// Draws the observations of repetition `r`; inputs stay fixed.
    pub fn repetition_dataset(&self, repetition: u64) -> Result<Dataset> {
        let rep_seed = repetition_seed(self.master_seed, repetition);
        sample_observations(&self.model, &self.train_inputs, seed::derive(rep_seed, tag::NOISE, 0))
    }

    pub fn ground_truth(&self) -> Result<Vec<f64>> {
        self.test_inputs.iter().map(|x| self.model.ground_truth(x)).collect()
    }
}

/// Seed of repetition `r` under a master seed.
pub fn repetition_seed(master_seed: u64, repetition: u64) -> u64 {
    seed::derive(master_seed, tag::REPETITION, repetition)
}

/// Builds the configuration of experiment `id`.
///
/// `complexity` is `f_main` for E1 and the input dimension `d` for E2; E3 has
/// a fixed configuration and ignores it.
pub fn experiment_preset(id: ExperimentId, complexity: f64, master_seed: u64) -> Result<Preset> {
    let gamma_seed = seed::derive(master_seed, tag::GAMMA, 0);
    let train_seed = seed::derive(master_seed, tag::TRAIN_INPUTS, 0);
    let (model, train_design, test_design, probes, complexity) = match id {
        ExperimentId::E1 => {
            let basis = BasisFunction::sinusoidal(complexity)?;
            let gamma = sample_gamma(4, gamma_seed);
            let probes: Vec<Probe> = [-2.38, 1.2, -5.11]
                .into_iter()
                .map(|x| Probe { label: format!("x={x}"), x: vec![x], lambda: None })
                .collect();
            (
                GenerativeModel::new(basis, gamma, 0.75)?,
                InputDesign::UniformRandomBox { bounds: Bounds::cube(1, -4.0, 4.0), count: E1_TRAIN },
                InputDesign::EquidistantGrid1D { lo: -6.0, hi: 6.0, count: E1_TEST },
                probes,
                complexity,
            )
        }
        ExperimentId::E2 => {
            if !(complexity >= 1.0) || libm::trunc(complexity) != complexity || complexity > 16.0 {
                return Err(Error::invalid(format!("E2 dimension must be an integer in 1..=16, got {complexity}")));
            }
            let d = complexity as usize;
            let basis = BasisFunction::styblinski_tang(d)?;
            let gamma = (0..d).flat_map(|_| [2.5, -8.0, 0.5]).collect();
            let train_count = 100 * 9usize.pow(d as u32 - 1);
            let test_bounds = Bounds::cube(d, -5.0, 5.0);
            let probes: Vec<Probe> = [0.5996, 0.074]
                .into_iter()
                .map(|l: f64| Probe {
                    label: format!("lambda={l}"),
                    x: vec![(1.0 - l) * -5.0 + l * 5.0; d],
                    lambda: Some(l),
                })
                .collect();
            (
                GenerativeModel::new(basis, gamma, 3.0)?,
                InputDesign::UniformRandomBox { bounds: Bounds::cube(d, -4.0, 4.0), count: train_count },
                InputDesign::Diagonal { bounds: test_bounds, lambdas: unit_lambdas(E2_DIAGONAL_POINTS) },
                probes,
                complexity,
            )
        }
        ExperimentId::E3 => {
            let basis = BasisFunction::polynomial_2d();
            let gamma = sample_gamma(6, gamma_seed);
            let probes: Vec<Probe> = [[2.5, 2.5], [-4.5, 4.5]]
                .into_iter()
                .map(|x| Probe { label: format!("x=({},{})", x[0], x[1]), x: x.to_vec(), lambda: None })
                .collect();
            (
                GenerativeModel::new(basis, gamma, 0.5)?,
                InputDesign::UniformRandomBox { bounds: Bounds::cube(2, -4.0, 4.0), count: E3_TRAIN },
                InputDesign::RegularGrid2D { bounds: Bounds::cube(2, -5.0, 5.0), count: E3_GRID_POINTS },
                probes,
                2.0,
            )
        }
    };
    let train_inputs = design_inputs(&train_design, train_seed)?;
    let mut test_inputs = design_inputs(&test_design, 0)?;
    test_inputs.extend(probes.iter().map(|p: &Probe| p.x.clone()));
    Ok(Preset {
        id,
        complexity,
        master_seed,
        model,
        train_design,
        test_design,
        probes,
        train_inputs,
        test_inputs,
    })
}
