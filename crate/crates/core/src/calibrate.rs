//! "Equivalently misspecified" pairs of quadratic-term coefficients.
//!
//! The outcome model gains a quadratic term with coefficient β⁰ and the
//! propensity model one with coefficient φ⁰ (`s1_1²` with one decision,
//! `s2_1²` at the second decision with two). Over a grid of (β⁰, φ⁰) a
//! large dataset is fitted with both expanded models and the ratio
//! `SE(φ̂)/SE(β̂)` recorded; averaging over β⁰ and smoothing in φ⁰ with a
//! polynomial `f` gives `β⁰(φ⁰) = φ⁰ / f(φ⁰)`, which makes the two
//! t-statistics for the quadratic terms roughly equal.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{build_design, FeatureMap};
use crate::error::{Error, Result};
use crate::numeric::linalg::Matrix;
use crate::numeric::{logistic_fit, make_stream, mean, ols_fit};
use crate::qlearn::q_stage_fit;
use crate::scenarios::{Policy, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lo: -1.0,
            hi: 1.0,
            step: 0.05,
        }
    }
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) {
            return Err(Error::Spec("grid.step must be > 0".into()));
        }
        if !(self.lo <= self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::Spec("grid.lo must be <= grid.hi".into()));
        }
        Ok(())
    }

    /// `lo, lo + step, …` up to `hi` (inclusive within rounding).
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

fn default_n_cal() -> usize {
    10_000
}
fn default_degree() -> usize {
    6
}
fn default_target() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Base parameters; the quadratic-term coefficients are overwritten.
    pub scenario: Scenario,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default = "default_n_cal")]
    pub n_cal: usize,
    #[serde(default = "default_degree")]
    pub poly_max_degree: usize,
    #[serde(default = "default_target")]
    pub adj_r2_target: f64,
    #[serde(default)]
    pub master_seed: u64,
}

impl CalibrationConfig {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            grid: Grid::default(),
            n_cal: default_n_cal(),
            poly_max_degree: default_degree(),
            adj_r2_target: default_target(),
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if matches!(self.scenario, Scenario::Moodie(_)) {
            return Err(Error::Spec(
                "scenario.kind must be one_decision or two_decision for calibration".into(),
            ));
        }
        self.scenario.validate()?;
        let width = expanded_models(&self.scenario)?.width();
        if self.n_cal < width {
            return Err(Error::Spec(format!("n_cal must be >= {width}")));
        }
        if !(self.adj_r2_target > 0.0 && self.adj_r2_target <= 1.0) {
            return Err(Error::Spec("adj_r2_target must lie in (0, 1]".into()));
        }
        if self.grid.points().len() <= self.poly_max_degree + 1 {
            return Err(Error::Spec(
                "grid has too few points for poly_max_degree".into(),
            ));
        }
        Ok(())
    }
}

/// Sets the quadratic-term coefficients `(β⁰, φ⁰)` of a base scenario.
pub fn with_pair(base: &Scenario, beta: f64, phi: f64) -> Result<Scenario> {
    let mut s = base.clone();
    match &mut s {
        Scenario::OneDecision(p) => {
            p.beta0[2] = beta;
            p.phi0[2] = phi;
        }
        Scenario::TwoDecision(p) => {
            p.beta2[5] = beta;
            p.phi2[5] = phi;
        }
        Scenario::Moodie(_) => {
            return Err(Error::Spec("the CD4 scenario has no quadratic-term pair".into()))
        }
    }
    Ok(s)
}

/// Expanded outcome (h, c) and propensity models at the last decision, with
/// the column of each quadratic term.
struct Expanded {
    stage: usize,
    h: FeatureMap,
    c: FeatureMap,
    pi: FeatureMap,
    beta_col: usize,
    phi_col: usize,
}

impl Expanded {
    fn width(&self) -> usize {
        self.h.len() + self.c.len()
    }
}

fn expanded_models(s: &Scenario) -> Result<Expanded> {
    let fm = |t: &[&str]| FeatureMap::parse(t).expect("static terms");
    match s {
        Scenario::OneDecision(_) => Ok(Expanded {
            stage: 1,
            h: fm(&["1", "s1_1", "s1_1^2"]),
            c: fm(&["1", "s1_1"]),
            pi: fm(&["1", "s1_1", "s1_1^2"]),
            beta_col: 2,
            phi_col: 2,
        }),
        Scenario::TwoDecision(_) => Ok(Expanded {
            stage: 2,
            h: fm(&["1", "s1_1", "a1", "s1_1*a1", "s2_1", "s2_1^2"]),
            c: fm(&["1", "a1", "s2_1"]),
            pi: fm(&["1", "s1_1", "a1", "s2_1", "a1*s2_1", "s2_1^2"]),
            beta_col: 5,
            phi_col: 5,
        }),
        Scenario::Moodie(_) => Err(Error::Spec("the CD4 scenario has no quadratic-term pair".into())),
    }
}

/// Estimates and standard errors of both quadratic terms on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFit {
    pub beta_hat: f64,
    pub se_beta: f64,
    pub phi_hat: f64,
    pub se_phi: f64,
}

impl PairFit {
    pub fn t_beta(&self) -> f64 {
        self.beta_hat / self.se_beta
    }
    pub fn t_phi(&self) -> f64 {
        self.phi_hat / self.se_phi
    }
}

/// Simulates `n` rows of `scenario` from stream `(seed, stream_id)` and fits
/// both expanded models.
pub fn fit_pair(scenario: &Scenario, n: usize, seed: u64, stream_id: u64) -> Result<PairFit> {
    let m = expanded_models(scenario)?;
    let (data, _) = scenario.simulate(n, &mut make_stream(seed, stream_id), Policy::Observational)?;
    let h = build_design(&data, m.stage, &m.h)?;
    let c = build_design(&data, m.stage, &m.c)?;
    let q = q_stage_fit(&h, &c, &data.actions(m.stage), &data.outcomes(), &vec![1.0; n])?;
    let cov = q.coef_covariance.as_ref().expect("regression covariance");
    let x = build_design(&data, m.stage, &m.pi)?;
    let lg = logistic_fit(&x, &data.actions(m.stage))?;
    Ok(PairFit {
        beta_hat: q.beta[m.beta_col],
        se_beta: cov[(m.beta_col, m.beta_col)].sqrt(),
        phi_hat: lg.coefficients[m.phi_col],
        se_phi: lg.covariance[(m.phi_col, m.phi_col)].sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    /// Coefficients of `1, x, x², …`.
    pub coefficients: Vec<f64>,
    pub degree: usize,
    pub adj_r2: f64,
}

impl Polynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

/// Least-squares polynomial of exactly `degree`.
pub fn fit_polynomial_of_degree(x: &[f64], y: &[f64], degree: usize) -> Result<Polynomial> {
    let (m, p) = (x.len(), degree + 1);
    if y.len() != m {
        return Err(Error::Dimension(format!("{m} abscissae but {} ordinates", y.len())));
    }
    if m <= p {
        return Err(Error::InvalidParameter(format!(
            "{m} points cannot support a degree-{degree} fit"
        )));
    }
    let rows: Vec<Vec<f64>> = x.iter().map(|&xi| (0..p).map(|k| xi.powi(k as i32)).collect()).collect();
    let fit = ols_fit(&Matrix::from_rows(&rows)?, y)?;
    let ybar = mean(y);
    let sst: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let sse: f64 = fit.residuals.iter().map(|r| r * r).sum();
    let adj_r2 = if sst == 0.0 {
        1.0
    } else {
        1.0 - (sse / sst) * (m - 1) as f64 / (m - p) as f64
    };
    Ok(Polynomial {
        coefficients: fit.coefficients,
        degree,
        adj_r2,
    })
}

/// Lowest-degree polynomial (≤ `max_degree`) whose adjusted R² reaches
/// `target`.
pub fn fit_polynomial(x: &[f64], y: &[f64], max_degree: usize, target: f64) -> Result<Polynomial> {
    let mut best = f64::NEG_INFINITY;
    for degree in 0..=max_degree.min(x.len().saturating_sub(2)) {
        let poly = fit_polynomial_of_degree(x, y, degree)?;
        if poly.adj_r2 >= target {
            return Ok(poly);
        }
        best = best.max(poly.adj_r2);
    }
    Err(Error::Calibration {
        best_adj_r2: best,
        target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairingRow {
    pub phi: f64,
    pub beta: f64,
    /// Mean over the β⁰ grid of `SE(φ̂)/SE(β̂)`.
    pub ratio: f64,
    pub fitted_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub polynomial: Polynomial,
    pub table: Vec<PairingRow>,
    /// Cells where a fit failed; excluded from the averages.
    pub failed_cells: usize,
    /// Per φ⁰ row of `table`, the ratios of the cells that succeeded.
    #[serde(skip)]
    pub cell_ratios: Vec<Vec<f64>>,
}

impl Calibration {
    /// `β⁰(φ⁰) = φ⁰ / f(φ⁰)`.
    pub fn beta_for(&self, phi: f64) -> f64 {
        phi / self.polynomial.eval(phi)
    }
}

/// Runs the grid, averages the SE ratio per φ⁰ and fits `f`.
pub fn calibrate_equiv_misspec(cfg: &CalibrationConfig) -> Result<Calibration> {
    cfg.validate()?;
    let pts = cfg.grid.points();
    let g = pts.len();
    let cells: Vec<Option<f64>> = (0..g * g)
        .into_par_iter()
        .map(|cell| {
            let (i_phi, i_beta) = (cell / g, cell % g);
            let scen = with_pair(&cfg.scenario, pts[i_beta], pts[i_phi])?;
            match fit_pair(&scen, cfg.n_cal, cfg.master_seed, cell as u64) {
                Ok(f) => Ok(Some(f.se_phi / f.se_beta)),
                Err(e) if e.is_numerical() => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let failed_cells = cells.iter().filter(|c| c.is_none()).count();
    if failed_cells > 0 {
        log::warn!("{failed_cells} of {} calibration cells failed to fit", g * g);
    }
    let mut phis = Vec::with_capacity(g);
    let mut ratios = Vec::with_capacity(g);
    let mut cell_ratios = Vec::with_capacity(g);
    for (i, &phi) in pts.iter().enumerate() {
        let row: Vec<f64> = cells[i * g..(i + 1) * g].iter().flatten().copied().collect();
        if !row.is_empty() {
            phis.push(phi);
            ratios.push(mean(&row));
            cell_ratios.push(row);
        }
    }
    let polynomial = fit_polynomial(&phis, &ratios, cfg.poly_max_degree, cfg.adj_r2_target)?;
    let table = phis
        .iter()
        .zip(&ratios)
        .map(|(&phi, &ratio)| {
            let fitted = polynomial.eval(phi);
            PairingRow {
                phi,
                beta: phi / fitted,
                ratio,
                fitted_ratio: fitted,
            }
        })
        .collect();
    Ok(Calibration {
        polynomial,
        table,
        failed_cells,
        cell_ratios,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TBalance {
    pub mean_abs_t_beta: f64,
    pub mean_abs_t_phi: f64,
    /// `|Δ| / mean` of the two mean |t| values.
    pub rel_diff: f64,
}

/// Mean |t| of both quadratic terms over `reps` datasets of size `n`
/// generated at `(β⁰, φ⁰)`; replication `r` uses stream `r`.
pub fn check_tstat_balance(base: &Scenario, beta: f64, phi: f64, n: usize, reps: usize, seed: u64) -> Result<TBalance> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be >= 1".into()));
    }
    let scen = with_pair(base, beta, phi)?;
    let fits: Vec<PairFit> = (0..reps)
        .into_par_iter()
        .map(|r| fit_pair(&scen, n, seed, r as u64))
        .collect::<Result<Vec<_>>>()?;
    let tb = mean(&fits.iter().map(|f| f.t_beta().abs()).collect::<Vec<_>>());
    let tp = mean(&fits.iter().map(|f| f.t_phi().abs()).collect::<Vec<_>>());
    Ok(TBalance {
        mean_abs_t_beta: tb,
        mean_abs_t_phi: tp,
        rel_diff: (tb - tp).abs() / (0.5 * (tb + tp)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{OneDecisionParams, TwoDecisionParams};

    #[test]
    fn grid_points() {
        assert_eq!(Grid::default().points().len(), 41);
        let err = Grid { step: 0.0, ..Default::default() }.validate().unwrap_err();
        assert!(err.to_string().contains("grid.step must be > 0"));
    }

    #[test]
    fn polynomial_selection() {
        let x: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - v + 0.5 * v * v).collect();
        let p = fit_polynomial(&x, &y, 6, 0.99).unwrap();
        assert_eq!(p.degree, 2);
        assert!((p.eval(0.3) - (2.0 - 0.3 + 0.045)).abs() < 1e-10);
        let flat = fit_polynomial(&x, &vec![3.0; 21], 6, 0.99).unwrap();
        assert_eq!(flat.degree, 0);
        // a constant f pairs along the line β⁰ = φ⁰/c
        let cal = Calibration {
            polynomial: flat,
            table: vec![],
            failed_cells: 0,
            cell_ratios: vec![],
        };
        assert!((cal.beta_for(0.6) - 0.2).abs() < 1e-12);
        assert_eq!(cal.beta_for(0.0), 0.0);
    }

    #[test]
    fn unreachable_target_reports_best() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 12.9898).sin()).collect();
        match fit_polynomial(&x, &y, 2, 0.99) {
            Err(Error::Calibration { best_adj_r2, target }) => {
                assert!(best_adj_r2 < 0.99);
                assert_eq!(target, 0.99);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_decision_moodie_rejected() {
        let cfg = CalibrationConfig::new(Scenario::Moodie(Default::default()));
        assert!(matches!(cfg.validate(), Err(Error::Spec(_))));
        assert!(CalibrationConfig::new(Scenario::OneDecision(OneDecisionParams::default())).validate().is_ok());
    }

    #[test]
    fn pair_setting() {
        let s = with_pair(&Scenario::TwoDecision(TwoDecisionParams::default()), 0.3, -0.4).unwrap();
        let Scenario::TwoDecision(p) = s else { unreachable!() };
        assert_eq!((p.beta2[5], p.phi2[5]), (0.3, -0.4));
        assert!(with_pair(&Scenario::Moodie(Default::default()), 0.0, 0.0).is_err());
    }

    #[test]
    fn unbalanced_pair_is_detected() {
        let base = Scenario::TwoDecision(TwoDecisionParams::default());
        let t = check_tstat_balance(&base, 1.0, 0.05, 10_000, 4, 3).unwrap();
        assert!(t.rel_diff > 0.5, "{t:?}");
    }

    #[test]
    fn coarse_two_decision_calibration() {
        let mut cfg = CalibrationConfig::new(Scenario::TwoDecision(TwoDecisionParams::default()));
        cfg.grid = Grid { lo: -1.0, hi: 1.0, step: 0.25 };
        cfg.n_cal = 4000;
        cfg.poly_max_degree = 4;
        cfg.adj_r2_target = 0.9;
        let cal = calibrate_equiv_misspec(&cfg).unwrap();
        assert_eq!(cal.table.len(), 9);
        let zero = cal.table.iter().find(|r| r.phi.abs() < 1e-12).unwrap();
        assert_eq!(zero.beta, 0.0);
        assert!(cal.table.iter().all(|r| r.ratio > 0.0));
    }
}
