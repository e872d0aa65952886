//! Q-learning by backward induction.
//!
//! At each decision the response is regressed on `[H | a·C]`; the fitted
//! Q-function is then maximised over the current action to give the
//! response for the previous decision.

use crate::data::{build_design, Dataset, DecisionRule, Regime, RegimeFit, StageFit, StageSpec};
use crate::error::{Error, Result};
use crate::numeric::linalg::{dot, Matrix};
use crate::numeric::wls_fit;

/// Optional per-row weights and per-stage inclusion masks.
///
/// A row masked out at a stage does not enter that stage's regression and
/// carries its incoming response through to the previous stage unchanged.
#[derive(Debug, Clone, Default)]
pub struct QOptions {
    pub weights: Option<Vec<f64>>,
    /// Indexed by stage − 1; `None` entries include every row.
    pub stage_masks: Vec<Option<Vec<bool>>>,
}

pub(crate) fn action_column(actions: &[u8]) -> Vec<f64> {
    actions.iter().map(|&a| f64::from(a)).collect()
}

/// Regression of `v` on `[design_h | a ⊙ design_c]`, split into `(β̂, ψ̂)`.
pub fn q_stage_fit(
    design_h: &Matrix,
    design_c: &Matrix,
    actions: &[u8],
    v: &[f64],
    weights: &[f64],
) -> Result<StageFit> {
    if actions.len() != design_c.rows() {
        return Err(Error::Dimension(format!(
            "{} actions for {} design rows",
            actions.len(),
            design_c.rows()
        )));
    }
    let x = design_h.hstack(&design_c.scale_rows(&action_column(actions)))?;
    let fit = wls_fit(&x, v, weights).map_err(|e| match e {
        Error::Singular { context, pivot_ratio } => Error::Singular {
            context: format!("Q-learning stage regression: {context}"),
            pivot_ratio,
        },
        other => other,
    })?;
    let p = design_h.cols();
    Ok(StageFit {
        stage: 0,
        beta: fit.coefficients[..p].to_vec(),
        psi: fit.coefficients[p..].to_vec(),
        phi: None,
        coef_covariance: Some(fit.covariance),
        phi_covariance: None,
        response: v.to_vec(),
        residuals: fit.residuals,
        propensities: None,
        extreme_propensities: 0,
    })
}

/// `Ṽᵢ = hᵢᵀβ̂ + max(0, cᵢᵀψ̂)`, the fitted Q-function at the better action.
pub fn q_pseudo_outcome(fit: &StageFit, design_h: &Matrix, design_c: &Matrix) -> Result<Vec<f64>> {
    if design_h.cols() != fit.beta.len() || design_c.cols() != fit.psi.len() {
        return Err(Error::Dimension(
            "stage fit does not match the design widths".into(),
        ));
    }
    Ok((0..design_h.rows())
        .map(|i| dot(design_h.row(i), &fit.beta) + dot(design_c.row(i), &fit.psi).max(0.0))
        .collect())
}

pub(crate) fn check_specs(dataset: &Dataset, specs: &[StageSpec]) -> Result<()> {
    if specs.len() != dataset.stages() {
        return Err(Error::Spec(format!(
            "{} stage specifications for {} decisions",
            specs.len(),
            dataset.stages()
        )));
    }
    for (k, spec) in specs.iter().enumerate() {
        spec.validate(k + 1, dataset.state_dims())?;
    }
    Ok(())
}

pub(crate) fn stage_designs(dataset: &Dataset, stage: usize, spec: &StageSpec) -> Result<(Matrix, Matrix)> {
    Ok((
        build_design(dataset, stage, &spec.h_features)?,
        build_design(dataset, stage, &spec.c_features)?,
    ))
}

/// Backward Q-learning over all decisions.
pub fn qlearn_fit(dataset: &Dataset, specs: &[StageSpec], options: &QOptions) -> Result<RegimeFit> {
    check_specs(dataset, specs)?;
    let n = dataset.len();
    let weights = match &options.weights {
        Some(w) if w.len() != n => {
            return Err(Error::Dimension(format!("{} weights for {n} rows", w.len())))
        }
        Some(w) => w.clone(),
        None => vec![1.0; n],
    };
    let big_k = dataset.stages();
    let mut v = dataset.outcomes();
    let mut fits = Vec::with_capacity(big_k);
    for k in (1..=big_k).rev() {
        let spec = &specs[k - 1];
        let (h, c) = stage_designs(dataset, k, spec)?;
        let actions = dataset.actions(k);
        let mask = options.stage_masks.get(k - 1).and_then(Option::as_ref);
        let mut fit = match mask {
            None => q_stage_fit(&h, &c, &actions, &v, &weights)?,
            Some(m) => {
                if m.len() != n {
                    return Err(Error::Dimension(format!(
                        "stage-{k} mask has {} entries for {n} rows",
                        m.len()
                    )));
                }
                let pick = |x: &[f64]| -> Vec<f64> {
                    x.iter().zip(m).filter(|(_, &keep)| keep).map(|(v, _)| *v).collect()
                };
                let a: Vec<u8> = actions.iter().zip(m).filter(|(_, &keep)| keep).map(|(a, _)| *a).collect();
                q_stage_fit(&h.select_rows(m), &c.select_rows(m), &a, &pick(&v), &pick(&weights))?
            }
        };
        fit.stage = k;
        if k > 1 {
            let pseudo = q_pseudo_outcome(&fit, &h, &c)?;
            v = match mask {
                None => pseudo,
                Some(m) => (0..n).map(|i| if m[i] { pseudo[i] } else { v[i] }).collect(),
            };
        }
        fits.push(fit);
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
