//! Statistical kernel: descriptive statistics, the paired t-test, the 3σ
//! outlier rule, Krippendorff's α, and bias-subspace identification.

mod beta;
mod krippendorff;
mod outliers;
mod subspace;
mod ttest;

pub use beta::{ln_gamma, regularized_incomplete_beta, student_t_two_tailed_p};
pub use krippendorff::{krippendorff_alpha_nominal, AnnotationMatrix};
pub use outliers::{outlier_bounds, outlier_pairs, OutlierBounds, OutlierPooling};
pub use subspace::{bias_subspace, symmetric_eigen, SubspaceResult};
pub use ttest::{paired_t_test, TTestResult};

/// Arithmetic mean; `NaN` for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the `n - 1` denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    sample_variance(xs).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptive() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&xs), 5.0);
        assert!((sample_variance(&xs) - 32.0 / 7.0).abs() < 1e-12);
    }
}
