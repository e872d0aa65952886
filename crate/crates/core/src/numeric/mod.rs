//! Numerical kernels shared by the estimators.

pub mod linalg;
pub mod normal;
pub mod regression;
pub mod rng;

pub use linalg::{solve_linear, Matrix};
pub use normal::{norm_cdf, norm_pdf, trunc_norm_moments, Side, TruncMoments};
pub use regression::{expit, logistic_fit, ols_fit, wls_fit, FitResult};
pub use rng::{make_stream, RngStream};

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 divisor).
pub(crate) fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Population standard deviation (n divisor).
pub(crate) fn population_sd(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub(crate) fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
