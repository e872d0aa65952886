//! A-learning by backward induction.
//!
//! Each decision fits the propensity first, then solves the two linear
//! moment conditions
//!
//! ```text
//! Σ cᵢ (Aᵢ − π̂ᵢ)(vᵢ − Aᵢcᵢᵀψ − hᵢᵀβ) = 0
//! Σ hᵢ           (vᵢ − Aᵢcᵢᵀψ − hᵢᵀβ) = 0
//! ```
//!
//! as one square system. Earlier decisions use the regret-corrected
//! response `Ṽ + Ĉ(I{Ĉ > 0} − A)`.

use log::warn;

use crate::data::{build_design, Dataset, DecisionRule, PropensitySpec, Regime, RegimeFit, StageFit, StageSpec};
use crate::error::{Error, Result};
use crate::numeric::linalg::{dot, solve_equilibrated, Matrix};
use crate::numeric::{expit, logistic_fit, FitResult};
use crate::qlearn::{check_specs, stage_designs};

/// Fitted propensities below this or above `1 − EXTREME_PROPENSITY` are
/// counted and reported.
pub const EXTREME_PROPENSITY: f64 = 1e-6;

/// `π̂ᵢ` for every row at decision `stage`, with the logistic fit when one
/// was made.
pub fn propensity_eval(
    spec: &PropensitySpec,
    dataset: &Dataset,
    stage: usize,
) -> Result<(Vec<f64>, Option<FitResult>)> {
    match spec {
        PropensitySpec::Known(p) => {
            if !(*p > 0.0 && *p < 1.0) {
                return Err(Error::Spec(format!(
                    "known propensity {p} must lie strictly inside (0, 1)"
                )));
            }
            Ok((vec![*p; dataset.len()], None))
        }
        PropensitySpec::Logistic(fm) => {
            let x = build_design(dataset, stage, fm)?;
            let fit = logistic_fit(&x, &dataset.actions(stage))?;
            let pi = (0..x.rows())
                .map(|i| expit(dot(x.row(i), &fit.coefficients)))
                .collect();
            Ok((pi, Some(fit)))
        }
    }
}

/// Solves the stacked moment conditions for `(ψ̂, β̂)` with `λ = ∂C/∂ψ`
/// (the contrast design row) and `θ = h`.
pub fn alearn_stage_solve(
    design_h: &Matrix,
    design_c: &Matrix,
    actions: &[u8],
    pihat: &[f64],
    v: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = design_h.rows();
    if design_c.rows() != n || actions.len() != n || pihat.len() != n || v.len() != n {
        return Err(Error::Dimension(format!(
            "A-learning stage inputs disagree on the row count ({n} design rows)"
        )));
    }
    let (q, p) = (design_c.cols(), design_h.cols());
    let m = q + p;
    let mut lhs = Matrix::zeros(m, m);
    let mut rhs = vec![0.0; m];
    let mut lambda = vec![0.0; m];
    let mut regressor = vec![0.0; m];
    for i in 0..n {
        let a = f64::from(actions[i]);
        let resid_weight = a - pihat[i];
        let (c, h) = (design_c.row(i), design_h.row(i));
        for j in 0..q {
            lambda[j] = c[j] * resid_weight;
            regressor[j] = a * c[j];
        }
        lambda[q..].copy_from_slice(h);
        regressor[q..].copy_from_slice(h);
        for r in 0..m {
            if lambda[r] == 0.0 {
                continue;
            }
            for s in 0..m {
                lhs[(r, s)] += lambda[r] * regressor[s];
            }
            rhs[r] += lambda[r] * v[i];
        }
    }
    let theta = solve_equilibrated(&lhs, &rhs).map_err(|e| match e {
        Error::Singular { context, pivot_ratio } => Error::Singular {
            context: format!("A-learning moment system: {context}"),
            pivot_ratio,
        },
        other => other,
    })?;
    Ok((theta[..q].to_vec(), theta[q..].to_vec()))
}

/// `Ṽᵢ = prevᵢ + Ĉᵢ(I{Ĉᵢ > 0} − Aᵢ)`.
pub fn a_pseudo_outcome(prev_v: &[f64], contrast: &[f64], actions: &[u8]) -> Vec<f64> {
    prev_v
        .iter()
        .zip(contrast)
        .zip(actions)
        .map(|((v, c), &a)| v + c * (f64::from(u8::from(*c > 0.0)) - f64::from(a)))
        .collect()
}

/// Both moment sums at a candidate `(ψ, β)`; used to verify solves.
pub fn moment_residuals(
    design_h: &Matrix,
    design_c: &Matrix,
    actions: &[u8],
    pihat: &[f64],
    v: &[f64],
    psi: &[f64],
    beta: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut mc = vec![0.0; design_c.cols()];
    let mut mh = vec![0.0; design_h.cols()];
    for i in 0..design_h.rows() {
        let a = f64::from(actions[i]);
        let r = v[i] - a * dot(design_c.row(i), psi) - dot(design_h.row(i), beta);
        for (m, c) in mc.iter_mut().zip(design_c.row(i)) {
            *m += c * (a - pihat[i]) * r;
        }
        for (m, h) in mh.iter_mut().zip(design_h.row(i)) {
            *m += h * r;
        }
    }
    (mc, mh)
}

/// Backward A-learning over all decisions.
pub fn alearn_fit(dataset: &Dataset, specs: &[StageSpec]) -> Result<RegimeFit> {
    check_specs(dataset, specs)?;
    let big_k = dataset.stages();
    let mut v = dataset.outcomes();
    let mut fits = Vec::with_capacity(big_k);
    for k in (1..=big_k).rev() {
        let spec = &specs[k - 1];
        let (h, c) = stage_designs(dataset, k, spec)?;
        let actions = dataset.actions(k);
        let (pihat, pfit) = propensity_eval(&spec.propensity, dataset, k)?;
        let extreme = pihat
            .iter()
            .filter(|&&p| !(EXTREME_PROPENSITY..=1.0 - EXTREME_PROPENSITY).contains(&p))
            .count();
        if extreme > 0 {
            warn!("decision {k}: {extreme} fitted propensities within {EXTREME_PROPENSITY} of 0 or 1");
        }
        let (psi, beta) = alearn_stage_solve(&h, &c, &actions, &pihat, &v)?;
        let contrast = c.mul_vec(&psi)?;
        let fitted_h = h.mul_vec(&beta)?;
        let residuals = (0..v.len())
            .map(|i| v[i] - f64::from(actions[i]) * contrast[i] - fitted_h[i])
            .collect();
        let next_v = (k > 1).then(|| a_pseudo_outcome(&v, &contrast, &actions));
        let (phi, phi_covariance) = match pfit {
            Some(f) => (Some(f.coefficients), Some(f.covariance)),
            None => (None, None),
        };
        fits.push(StageFit {
            stage: k,
            beta,
            psi,
            phi,
            coef_covariance: None,
            phi_covariance,
            response: std::mem::take(&mut v),
            residuals,
            propensities: Some(pihat),
            extreme_propensities: extreme,
        });
        if let Some(nv) = next_v {
            v = nv;
        }
    }
    fits.reverse();
    let rules = fits
        .iter()
        .zip(specs)
        .map(|(f, s)| DecisionRule::new(s.c_features.clone(), f.psi.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(RegimeFit {
        stages: fits,
        regime: Regime::new(rules),
    })
}
