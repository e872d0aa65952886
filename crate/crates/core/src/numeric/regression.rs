//! Weighted least squares and logistic maximum likelihood.

use serde::{Deserialize, Serialize};

use super::linalg::{dot, Lu, Matrix};
use crate::error::{Error, Result};

pub const LOGISTIC_MAX_ITER: usize = 100;
pub const LOGISTIC_TOL: f64 = 1e-10;

/// Coefficients and model-based covariance of a regression fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub covariance: Matrix,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.coefficients.len())
            .map(|j| self.covariance[(j, j)].max(0.0).sqrt())
            .collect()
    }

    /// Wald statistic `coef / se` for coefficient `j`.
    pub fn t_statistic(&self, j: usize) -> f64 {
        self.coefficients[j] / self.covariance[(j, j)].sqrt()
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Factorised weighted normal equations `XᵀWX` with columns rescaled to unit
/// max-abs, so that intercepts and CD4-scale covariates live in one system
/// without wrecking the pivot test.
struct NormalEquations {
    lu: Lu,
    col_scale: Vec<f64>,
}

impl NormalEquations {
    fn factor(x: &Matrix, w: &[f64]) -> Result<Self> {
        let (n, p) = (x.rows(), x.cols());
        let mut col_scale = vec![0.0f64; p];
        for i in 0..n {
            for (j, s) in col_scale.iter_mut().enumerate() {
                *s = s.max(x[(i, j)].abs());
            }
        }
        if let Some(j) = col_scale.iter().position(|&s| s == 0.0) {
            return Err(Error::Singular {
                context: format!("design column {j} is identically zero"),
                pivot_ratio: 0.0,
            });
        }
        let mut xtwx = Matrix::zeros(p, p);
        let mut scaled_row = vec![0.0; p];
        for i in 0..n {
            for (j, v) in scaled_row.iter_mut().enumerate() {
                *v = x[(i, j)] / col_scale[j];
            }
            let wi = w[i];
            for a in 0..p {
                let wa = wi * scaled_row[a];
                for b in a..p {
                    xtwx[(a, b)] += wa * scaled_row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        let lu = Lu::factor(&xtwx).map_err(|e| match e {
            Error::Singular { pivot_ratio, .. } => Error::Singular {
                context: "rank-deficient design".into(),
                pivot_ratio,
            },
            other => other,
        })?;
        Ok(Self { lu, col_scale })
    }

    /// Solves `XᵀWX b = Xᵀ W z`.
    fn solve(&self, x: &Matrix, w: &[f64], z: &[f64]) -> Vec<f64> {
        let p = self.col_scale.len();
        let mut rhs = vec![0.0; p];
        for i in 0..x.rows() {
            let wz = w[i] * z[i];
            for (j, r) in rhs.iter_mut().enumerate() {
                *r += x[(i, j)] / self.col_scale[j] * wz;
            }
        }
        let scaled = self.lu.solve(&rhs).expect("dimension checked");
        scaled.iter().zip(&self.col_scale).map(|(v, s)| v / s).collect()
    }

    /// `(XᵀWX)⁻¹` on the original column scale.
    fn inverse(&self) -> Matrix {
        let mut inv = self.lu.inverse();
        let p = self.col_scale.len();
        for a in 0..p {
            for b in 0..p {
                inv[(a, b)] /= self.col_scale[a] * self.col_scale[b];
            }
        }
        symmetrize(&mut inv);
        inv
    }
}

fn symmetrize(m: &mut Matrix) {
    for a in 0..m.rows() {
        for b in 0..a {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

fn check_design(x: &Matrix, len: usize, what: &str) -> Result<()> {
    if x.rows() != len {
        return Err(Error::Dimension(format!(
            "{what} has length {len} but design has {} rows",
            x.rows()
        )));
    }
    if x.rows() < x.cols() {
        return Err(Error::Dimension(format!(
            "{} rows cannot identify {} coefficients",
            x.rows(),
            x.cols()
        )));
    }
    Ok(())
}

/// Weighted least squares. The covariance is `σ̂²(XᵀWX)⁻¹` with
/// `σ̂² = Σ wᵢrᵢ² / (n − p)`; it is zero when `n = p`.
pub fn wls_fit(x: &Matrix, y: &[f64], weights: &[f64]) -> Result<FitResult> {
    check_design(x, y.len(), "response")?;
    check_design(x, weights.len(), "weight vector")?;
    if let Some(i) = weights.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "weight {i} must be positive, got {}",
            weights[i]
        )));
    }
    let ne = NormalEquations::factor(x, weights)?;
    let coefficients = ne.solve(x, weights, y);
    let residuals: Vec<f64> = (0..x.rows())
        .map(|i| y[i] - dot(x.row(i), &coefficients))
        .collect();
    let df = x.rows() - x.cols();
    let sigma2 = if df == 0 {
        0.0
    } else {
        residuals
            .iter()
            .zip(weights)
            .map(|(r, w)| w * r * r)
            .sum::<f64>()
            / df as f64
    };
    let mut covariance = ne.inverse();
    for a in 0..covariance.rows() {
        for b in 0..covariance.cols() {
            covariance[(a, b)] *= sigma2;
        }
    }
    Ok(FitResult {
        coefficients,
        covariance,
        residuals,
        converged: true,
        iterations: 1,
    })
}

/// Ordinary least squares (all weights one).
pub fn ols_fit(x: &Matrix, y: &[f64]) -> Result<FitResult> {
    wls_fit(x, y, &vec![1.0; y.len()])
}

fn log_likelihood(x: &Matrix, a: &[u8], beta: &[f64]) -> f64 {
    (0..x.rows())
        .map(|i| {
            let eta = dot(x.row(i), beta);
            // log(1 + e^eta) computed without overflow
            let softplus = if eta > 0.0 {
                eta + (-eta).exp().ln_1p()
            } else {
                eta.exp().ln_1p()
            };
            f64::from(a[i]) * eta - softplus
        })
        .sum()
}

/// Logistic regression by iteratively reweighted least squares with step
/// halving whenever a full Newton step lowers the likelihood.
pub fn logistic_fit(x: &Matrix, a: &[u8]) -> Result<FitResult> {
    check_design(x, a.len(), "action vector")?;
    if let Some(i) = a.iter().position(|&v| v > 1) {
        return Err(Error::InvalidParameter(format!(
            "action {i} is {} (must be 0 or 1)",
            a[i]
        )));
    }
    let (n, p) = (x.rows(), x.cols());
    let mut beta = vec![0.0; p];
    let mut loglik = log_likelihood(x, a, &beta);
    let mut score_norm = f64::INFINITY;
    let mut fitted = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut work = vec![0.0; n];

    for iter in 1..=LOGISTIC_MAX_ITER {
        for i in 0..n {
            let mu = expit(dot(x.row(i), &beta));
            fitted[i] = mu;
            weights[i] = (mu * (1.0 - mu)).max(f64::MIN_POSITIVE);
            work[i] = (f64::from(a[i]) - mu) / weights[i];
        }
        score_norm = score_inf_norm(x, a, &fitted);
        // Newton step δ solves (XᵀWX) δ = Xᵀ(a − μ)
        let ne = match NormalEquations::factor(x, &weights) {
            Ok(ne) => ne,
            // weights collapsing to zero is the signature of separation
            Err(Error::Singular { .. }) if iter > 1 => {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    score_norm,
                })
            }
            Err(e) => return Err(e),
        };
        let step = ne.solve(x, &weights, &work);
        // separated data keep a Newton step of order one while the score
        // decays, so convergence is judged on the step alone
        let beta_scale = 1.0 + beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if step.iter().all(|s| s.abs() < LOGISTIC_TOL * beta_scale) {
            return Ok(logistic_result(x, a, beta, ne.inverse(), iter));
        }
        let mut scale = 1.0;
        let mut candidate: Vec<f64>;
        let mut cand_ll;
        loop {
            candidate = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            cand_ll = log_likelihood(x, a, &candidate);
            if cand_ll >= loglik - 1e-12 * loglik.abs() || scale < 1e-10 {
                break;
            }
            scale *= 0.5;
        }
        beta = candidate;
        loglik = cand_ll;
    }
    Err(Error::NonConvergence {
        iterations: LOGISTIC_MAX_ITER,
        score_norm,
    })
}

fn score_inf_norm(x: &Matrix, a: &[u8], fitted: &[f64]) -> f64 {
    let mut score = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        let r = f64::from(a[i]) - fitted[i];
        for (j, s) in score.iter_mut().enumerate() {
            *s += x[(i, j)] * r;
        }
    }
    score.iter().fold(0.0f64, |m, s| m.max(s.abs()))
}

fn logistic_result(x: &Matrix, a: &[u8], beta: Vec<f64>, covariance: Matrix, iterations: usize) -> FitResult {
    let residuals = (0..x.rows())
        .map(|i| f64::from(a[i]) - expit(dot(x.row(i), &beta)))
        .collect();
    FitResult {
        coefficients: beta,
        covariance,
        residuals,
        converged: true,
        iterations,
    }
}
