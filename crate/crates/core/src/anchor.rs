//! Exact Bayesian linear regression under the flat prior `π(γ) ∝ 1`.
//!
//! With known noise level σ the posterior is `N(γ̂, σ²V)` where
//! `V = (G(x)G(x)ᵀ)⁻¹` and `γ̂ = V G(x) y`, and the epistemic predictive
//! distribution at `x*` is `N(G(x*)ᵀγ̂, σ² G(x*)ᵀ V G(x*))`. The flat prior is
//! probability matching, so these credible intervals have exact frequentist
//! coverage, and the predictive mean is unbiased with variance at the
//! Cramér–Rao bound.
//!
//! The normal matrix is factorized with a Cholesky decomposition; a
//! condition estimate above the configured threshold is an error rather than
//! a reason to regularize.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{dot, FeatureMap};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::seed;
use crate::uqmethods::UqPrediction;

/// Default upper bound on the condition number of `G(x)G(x)ᵀ`.
pub const DEFAULT_MAX_CONDITION: f64 = 1e12;

/// The anchor posterior `N(γ̂, σ²V)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlrPosterior {
    pub gamma_hat: Vec<f64>,
    /// `V` in row-major order, `p × p`.
    pub v: Vec<f64>,
    pub sigma: f64,
    /// Condition estimate of the normal matrix the fit was computed from.
    pub condition: f64,
}

pub fn fit_blr<B: FeatureMap + ?Sized>(basis: &B, data: &Dataset, sigma: f64) -> Result<BlrPosterior> {
    fit_blr_with_threshold(basis, data, sigma, DEFAULT_MAX_CONDITION)
}

pub fn fit_blr_with_threshold<B: FeatureMap + ?Sized>(
    basis: &B,
    data: &Dataset,
    sigma: f64,
    max_condition: f64,
) -> Result<BlrPosterior> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let p = basis.output_dim();
    let n = data.len();
    if n < p {
        return Err(Error::InsufficientData { samples: n, params: p });
    }
    let mut normal = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut g = vec![0.0; p];
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        basis.evaluate_into(x, &mut g)?;
        for i in 0..p {
            rhs[i] += g[i] * y;
            for j in 0..=i {
                normal[(i, j)] += g[i] * g[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            normal[(j, i)] = normal[(i, j)];
        }
    }

    let condition = condition_estimate(&normal);
    if !(condition <= max_condition) {
        return Err(Error::SingularDesign { condition });
    }
    let chol = normal.cholesky().ok_or(Error::SingularDesign { condition })?;
    let gamma_hat = chol.solve(&rhs);
    let inv = chol.inverse();
    let mut v = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            v[i * p + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
        }
    }
    Ok(BlrPosterior { gamma_hat: gamma_hat.iter().copied().collect(), v, sigma, condition })
}

/// Ratio of extreme eigenvalues; infinite when the matrix is not positive definite.
fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || !max.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

impl BlrPosterior {
    pub fn dim(&self) -> usize {
        self.gamma_hat.len()
    }

    pub fn v_matrix(&self) -> DMatrix<f64> {
        let p = self.dim();
        DMatrix::from_row_slice(p, p, &self.v)
    }

    /// `gᵀ V g` for a feature vector `g`.
    pub fn quadratic_form(&self, g: &[f64]) -> f64 {
        let p = self.dim();
        (0..p).map(|i| g[i] * dot(&self.v[i * p..(i + 1) * p], g)).sum()
    }

    fn features<B: FeatureMap + ?Sized>(&self, basis: &B, x_star: &[f64]) -> Result<Vec<f64>> {
        if basis.output_dim() != self.dim() {
            return Err(Error::invalid(format!(
                "basis has {} features, posterior has {}",
                basis.output_dim(),
                self.dim()
            )));
        }
        basis.evaluate(x_star)
    }

    /// Epistemic predictive distribution of `G(x*)ᵀγ`.
    pub fn predict<B: FeatureMap + ?Sized>(&self, basis: &B, x_star: &[f64]) -> Result<UqPrediction> {
        let g = self.features(basis, x_star)?;
        let mean = dot(&g, &self.gamma_hat);
        let var = self.sigma * self.sigma * self.quadratic_form(&g);
        Ok(UqPrediction { mean, std: libm::sqrt(var.max(0.0)) })
    }

    /// Predictive distribution of a new observation `y*`: the epistemic
    /// variance plus the noise variance σ².
    pub fn posterior_predictive<B: FeatureMap + ?Sized>(&self, basis: &B, x_star: &[f64]) -> Result<UqPrediction> {
        let epistemic = self.predict(basis, x_star)?;
        let var = epistemic.std * epistemic.std + self.sigma * self.sigma;
        Ok(UqPrediction { mean: epistemic.mean, std: libm::sqrt(var) })
    }

    /// Draws `n` functions `G(x)ᵀγ`, `γ ~ N(γ̂, σ²V)`, evaluated at `xs`.
    /// Row `s` of the result holds sample `s` at every point of `xs`.
    pub fn sample_functions<B: FeatureMap + ?Sized>(
        &self,
        basis: &B,
        xs: &[Vec<f64>],
        n: usize,
        seed: u64,
    ) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::invalid("at least one sample is required"));
        }
        let p = self.dim();
        let chol = self
            .v_matrix()
            .cholesky()
            .ok_or(Error::SingularDesign { condition: f64::INFINITY })?;
        let l = chol.l();
        let features: Vec<Vec<f64>> = xs.iter().map(|x| self.features(basis, x)).collect::<Result<_>>()?;
        let mut rng = seed::rng(seed);
        let mut z = DVector::<f64>::zeros(p);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            let shift = &l * &z;
            let gamma: Vec<f64> =
                self.gamma_hat.iter().zip(shift.iter()).map(|(m, s)| m + self.sigma * s).collect();
            out.push(features.iter().map(|g| dot(g, &gamma)).collect());
        }
        Ok(out)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::basis::BasisFunction;
    use crate::datagen::{self, Bounds, GenerativeModel, InputDesign};
    use crate::stats;

    /// `G(x) = (1, x)`.
    pub(crate) struct Line;

    impl FeatureMap for Line {
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            2
        }
        fn evaluate_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = 1.0;
            out[1] = x[0];
            Ok(())
        }
    }

    /// `G(x) = (1)`.
    struct Constant;

    impl FeatureMap for Constant {
        fn input_dim(&self) -> usize {
            1
        }
        fn output_dim(&self) -> usize {
            1
        }
        fn evaluate_into(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = 1.0;
            Ok(())
        }
    }

    pub(crate) fn two_point_line() -> BlrPosterior {
        let data = Dataset::new(vec![vec![0.0], vec![1.0]], vec![0.0, 1.0], 0).unwrap();
        fit_blr(&Line, &data, 1.0).unwrap()
    }

    #[test]
    fn two_point_line_by_hand() {
        let post = two_point_line();
        assert!((post.gamma_hat[0]).abs() <= 1e-12 && (post.gamma_hat[1] - 1.0).abs() <= 1e-12);
        for (got, want) in post.v.iter().zip([1.0, -1.0, -1.0, 2.0]) {
            assert!((got - want).abs() <= 1e-12);
        }
        let at2 = post.predict(&Line, &[2.0]).unwrap();
        assert!((at2.mean - 2.0).abs() <= 1e-12);
        assert!((at2.std * at2.std - 5.0).abs() <= 1e-12);
        let at0 = post.predict(&Line, &[0.0]).unwrap();
        assert!((at0.std * at0.std - 1.0).abs() <= 1e-12);
        let y2 = post.posterior_predictive(&Line, &[2.0]).unwrap();
        assert!((y2.std * y2.std - 6.0).abs() <= 1e-12);
    }

    #[test]
    fn constant_basis_is_the_sample_mean() {
        let n = 7;
        let c = 2.5;
        let sigma = 0.4;
        let data = Dataset::new(vec![vec![0.0]; n], vec![c; n], 0).unwrap();
        let post = fit_blr(&Constant, &data, sigma).unwrap();
        assert!((post.gamma_hat[0] - c).abs() <= 1e-12);
        assert!((post.v[0] - 1.0 / n as f64).abs() <= 1e-15);
        for x in [-3.0, 0.0, 8.0] {
            let pred = post.predict(&Constant, &[x]).unwrap();
            assert!((pred.std - sigma / (n as f64).sqrt()).abs() <= 1e-12);
            let y = post.posterior_predictive(&Constant, &[x]).unwrap();
            assert!(y.std > sigma && y.std <= sigma * (1.0 + 1.0 / n as f64).sqrt() + 1e-15);
        }
    }

    /// Brute-force Gaussian elimination with partial pivoting.
    fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for row in col + 1..n {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
            x[row] = (b[row] - s) / a[row][row];
        }
        x
    }

    fn sinusoidal_data(n: usize, seed: u64) -> (GenerativeModel, Dataset) {
        let model = GenerativeModel::new(BasisFunction::sinusoidal(1.0).unwrap(), datagen::sample_gamma(4, seed), 0.75)
            .unwrap();
        let design = InputDesign::UniformRandomBox { bounds: Bounds::cube(1, -4.0, 4.0), count: n };
        let inputs = datagen::design_inputs(&design, seed + 1).unwrap();
        let data = datagen::sample_observations(&model, &inputs, seed + 2).unwrap();
        (model, data)
    }

    #[test]
    fn matches_normal_equation_oracle() {
        let (model, data) = sinusoidal_data(20, 5);
        let post = fit_blr(&model.basis, &data, model.sigma).unwrap();
        let p = 4;
        let mut a = vec![vec![0.0; p]; p];
        let mut b = vec![0.0; p];
        for (x, y) in data.inputs.iter().zip(&data.targets) {
            let g = model.basis.evaluate(x).unwrap();
            for i in 0..p {
                b[i] += g[i] * y;
                for j in 0..p {
                    a[i][j] += g[i] * g[j];
                }
            }
        }
        let oracle = gauss_solve(a, b);
        for (got, want) in post.gamma_hat.iter().zip(&oracle) {
            assert!((got - want).abs() <= 1e-8 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn posterior_factor_is_symmetric_positive_definite() {
        let (model, data) = sinusoidal_data(50, 8);
        let post = fit_blr(&model.basis, &data, model.sigma).unwrap();
        let v = post.v_matrix();
        assert!((&v - v.transpose()).norm() <= 1e-10 * v.norm());
        assert!(v.cholesky().is_some());
    }

    #[test]
    fn insufficient_and_singular_designs() {
        let basis = BasisFunction::polynomial_2d();
        let few = Dataset::new(vec![vec![0.0, 0.0]; 3], vec![1.0; 3], 0).unwrap();
        assert_eq!(fit_blr(&basis, &few, 1.0), Err(Error::InsufficientData { samples: 3, params: 6 }));
        let repeated = Dataset::new(vec![vec![1.0, 2.0]; 10], vec![1.0; 10], 0).unwrap();
        assert!(matches!(fit_blr(&basis, &repeated, 1.0), Err(Error::SingularDesign { .. })));
        let (model, data) = sinusoidal_data(50, 1);
        assert!(matches!(
            fit_blr_with_threshold(&model.basis, &data, 0.75, 1.0),
            Err(Error::SingularDesign { condition }) if condition > 1.0
        ));
    }

    #[test]
    fn predictive_adds_exactly_the_noise_variance() {
        let (model, data) = sinusoidal_data(50, 2);
        let post = fit_blr(&model.basis, &data, model.sigma).unwrap();
        for x in [-5.0, 0.3, 2.0] {
            let e = post.predict(&model.basis, &[x]).unwrap();
            let y = post.posterior_predictive(&model.basis, &[x]).unwrap();
            assert_eq!(e.mean, y.mean);
            assert!((y.std * y.std - e.std * e.std - 0.75 * 0.75).abs() < 1e-12);
            assert!(e.std > 0.0);
        }
        assert!(post.predict(&model.basis, &[1.0, 2.0]).is_err());
        assert!(post.predict(&BasisFunction::polynomial_2d(), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn scale_equivariance() {
        let (model, data) = sinusoidal_data(50, 3);
        let post = fit_blr(&model.basis, &data, model.sigma).unwrap();
        let a = -3.5;
        let scaled = Dataset::new(data.inputs.clone(), data.targets.iter().map(|y| a * y).collect(), 0).unwrap();
        let post_a = fit_blr(&model.basis, &scaled, a.abs() * model.sigma).unwrap();
        for (g, ga) in post.gamma_hat.iter().zip(&post_a.gamma_hat) {
            assert!((a * g - ga).abs() <= 1e-12 * ga.abs().max(1.0));
        }
        assert_eq!(post.v, post_a.v);
    }

    #[test]
    fn sampled_functions_converge_to_predictive() {
        let (model, data) = sinusoidal_data(50, 4);
        let post = fit_blr(&model.basis, &data, model.sigma).unwrap();
        let x = vec![vec![1.7]];
        let n = 100_000;
        let draws: Vec<f64> =
            post.sample_functions(&model.basis, &x, n, 11).unwrap().into_iter().map(|r| r[0]).collect();
        let pred = post.predict(&model.basis, &x[0]).unwrap();
        assert!((stats::sample_std(&draws) / pred.std - 1.0).abs() < 0.02);
        assert!((stats::mean(&draws) - pred.mean).abs() < 3.0 * pred.std / (n as f64).sqrt());
        assert_eq!(
            post.sample_functions(&model.basis, &x, 5, 11).unwrap(),
            post.sample_functions(&model.basis, &x, 5, 11).unwrap()
        );
        assert!(post.sample_functions(&model.basis, &x, 0, 11).is_err());
    }

    #[test]
    fn serializes_round_trip() {
        let (model, data) = sinusoidal_data(50, 6);
        let post = fit_blr(&model.basis, &data, model.sigma).unwrap();
        let json = serde_json::to_string(&post).unwrap();
        assert_eq!(serde_json::from_str::<BlrPosterior>(&json).unwrap(), post);
    }
}
