//! Standard normal density and distribution function, plus the partial
//! moments of a normal variable cut at a threshold.

use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal cumulative distribution function.
///
/// Evaluated through `erfc`, so the lower tail keeps full relative accuracy
/// instead of cancelling against 1.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Which side of the cut point is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Above,
    Below,
}

/// `prob = P(X ⋛ cut)` and `partial_mean = E[X · 1{X ⋛ cut}]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncMoments {
    pub prob: f64,
    pub partial_mean: f64,
}

/// Partial moments of `X ~ Normal(mu, sigma²)` restricted to one side of
/// `cut`. The above and below results always sum to `(1, mu)`.
pub fn trunc_norm_moments(mu: f64, sigma: f64, cut: f64, side: Side) -> Result<TruncMoments> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma must be positive and finite, got {sigma}"
        )));
    }
    if !mu.is_finite() || cut.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "mu must be finite and cut not NaN (mu={mu}, cut={cut})"
        )));
    }
    let z = (cut - mu) / sigma;
    let density = if z.is_finite() { norm_pdf(z) } else { 0.0 };
    Ok(match side {
        Side::Above => {
            let prob = norm_cdf(-z);
            TruncMoments {
                prob,
                partial_mean: sigma * density + mu * prob,
            }
        }
        Side::Below => {
            let prob = norm_cdf(z);
            TruncMoments {
                prob,
                partial_mean: mu * prob - sigma * density,
            }
        }
    })
}

/// `E[(c + slope·X) · 1{c + slope·X > 0}]` and `P(c + slope·X > 0)` for
/// `X ~ Normal(mu, sigma²)`, i.e. the mean positive part of a linear
/// function of a normal variable. A zero slope makes the indicator constant.
pub(crate) fn linear_positive_part(
    intercept: f64,
    slope: f64,
    mu: f64,
    sigma: f64,
) -> Result<TruncMoments> {
    indicator_moments(intercept, slope, mu, sigma).map(|m| TruncMoments {
        prob: m.prob,
        partial_mean: intercept * m.prob + slope * m.partial_mean,
    })
}

/// `P(c + slope·X > 0)` and `E[X · 1{c + slope·X > 0}]` for
/// `X ~ Normal(mu, sigma²)`.
pub(crate) fn indicator_moments(
    intercept: f64,
    slope: f64,
    mu: f64,
    sigma: f64,
) -> Result<TruncMoments> {
    if slope == 0.0 {
        let on = if intercept > 0.0 { 1.0 } else { 0.0 };
        // still validates sigma
        trunc_norm_moments(mu, sigma, 0.0, Side::Above)?;
        return Ok(TruncMoments {
            prob: on,
            partial_mean: on * mu,
        });
    }
    let cut = -intercept / slope;
    let side = if slope > 0.0 { Side::Above } else { Side::Below };
    trunc_norm_moments(mu, sigma, cut, side)
}
