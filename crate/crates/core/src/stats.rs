//! Small sample statistics shared by the methods and the evaluator.

/// Arithmetic mean; exactly the common value when all entries agree.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    if all_equal(values) {
        return values[0];
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with denominator `n - 1`; zero for `n < 2`.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 || all_equal(values) {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    libm::sqrt(ss / (n - 1) as f64)
}

fn all_equal(values: &[f64]) -> bool {
    values.iter().all(|v| *v == values[0])
}

/// Standard error of the mean, `sample_std / sqrt(n)`; zero for `n < 2`.
pub fn std_error(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    sample_std(values) / libm::sqrt(values.len() as f64)
}

/// Binomial standard error `sqrt(p(1-p)/k)`.
pub fn binomial_std_error(p: f64, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    libm::sqrt((p * (1.0 - p)).max(0.0) / k as f64)
}

/// Mean and sample standard deviation of `values` after sorting them, so the
/// result does not depend on the order the values arrive in.
pub fn order_free_mean_std(values: &mut [f64]) -> (f64, f64) {
    values.sort_unstable_by(f64::total_cmp);
    (mean(values), sample_std(values))
}
