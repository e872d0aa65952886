//! Regime values and the Monte Carlo study driver.
//!
//! `H(d) = E{Y*(d)}` is computed in closed form for the three built-in
//! scenarios when the regime has the working-model form, and by
//! g-computation otherwise.

use std::io::Write;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alearn::alearn_fit;
use crate::data::{FeatureMap, Regime, RegimeFit, StageSpec};
use crate::error::{Error, Result};
use crate::numeric::normal::{indicator_moments, linear_positive_part};
use crate::numeric::{make_stream, mean, median, population_sd, sample_sd, RngStream};
use crate::qlearn::{qlearn_fit, QOptions};
use crate::scenarios::{true_regime, MoodieParams, OneDecisionParams, Scenario, TwoDecisionParams};

/// Rule `I{ψ₁₀ + ψ₁₁s₁ > 0}` under the one-decision model.
pub fn value_one_decision_analytic(psi: [f64; 2], truth: &OneDecisionParams) -> f64 {
    let (b, c) = (&truth.beta0, &truth.psi0);
    let m = indicator_moments(psi[0], psi[1], 0.0, 1.0).expect("unit variance");
    // E S₁ = 0, E S₁² = 1
    b[0] + b[2] + c[0] * m.prob + c[1] * m.partial_mean
}

/// Rules `I{ψ₁₀ + ψ₁₁s₁ > 0}` and `I{ψ₂₀ + ψ₂₁a₁ + ψ₂₂s₂ > 0}` under the
/// two-decision model: a two-point mixture over `s₁` with normal moments
/// of `S₂` inside each branch.
pub fn value_two_decision_analytic(psi1: [f64; 2], psi2: [f64; 3], truth: &TwoDecisionParams) -> Result<f64> {
    let scen = Scenario::TwoDecision(truth.clone());
    scen.validate()?;
    let (b, c) = (&truth.beta2, &truth.psi2);
    let mut total = 0.0;
    for s1 in [0.0, 1.0] {
        let a1 = u8::from(psi1[0] + psi1[1] * s1 > 0.0);
        let af = f64::from(a1);
        let (mu, sd) = scen.s2_law(s1, a1).expect("two decisions");
        let ind = indicator_moments(psi2[0] + psi2[1] * af, psi2[2], mu, sd)?;
        let branch = b[0] + b[1] * s1 + b[2] * af + b[3] * s1 * af + b[4] * mu + b[5] * (mu * mu + sd * sd)
            + (c[0] + c[1] * af) * ind.prob
            + c[2] * ind.partial_mean;
        total += 0.5 * branch;
    }
    Ok(total)
}

/// `E[C·(I{C > 0} − I{L > 0})]` for `C = c₀ + c₁X`, `L = l₀ + l₁X`,
/// `X ~ N(mu, sd²)`: the mean regret of following rule `L`.
fn mean_regret(c: [f64; 2], l: [f64; 2], mu: f64, sd: f64) -> Result<f64> {
    let best = linear_positive_part(c[0], c[1], mu, sd)?.partial_mean;
    let taken = indicator_moments(l[0], l[1], mu, sd)?;
    Ok(best - (c[0] * taken.prob + c[1] * taken.partial_mean))
}

/// Rules `I{ψ₁₀ + ψ₁₁s₁ > 0}` and `I{ψ₂₀ + ψ₂₁s₂ > 0}` under the CD4
/// scenario: `E Y^opt` less both mean regrets. `S₂` does not depend on
/// `A₁`, so its marginal law is normal.
pub fn value_moodie_analytic(psi1: [f64; 2], psi2: [f64; 2], truth: &MoodieParams) -> Result<f64> {
    Scenario::Moodie(truth.clone()).validate()?;
    let p = truth;
    let s2_mean = p.s2_slope * p.s1_mean;
    let s2_sd = ((p.s2_slope * p.s1_sd).powi(2) + p.s2_sd.powi(2)).sqrt();
    let r1 = mean_regret(p.psi1, psi1, p.s1_mean, p.s1_sd)?;
    let r2 = mean_regret(p.psi2, psi2, s2_mean, s2_sd)?;
    Ok(p.yopt_intercept + p.yopt_slope * p.s1_mean - r1 - r2)
}

fn rule_psi<const N: usize>(regime: &Regime, stage: usize, terms: &[&str]) -> Option<[f64; N]> {
    let rule = regime.rules.get(stage - 1)?;
    if rule.features != FeatureMap::parse(terms).ok()? {
        return None;
    }
    rule.psi.clone().try_into().ok()
}

/// Closed-form value when the regime uses the working-model contrast
/// terms of the scenario; a spec error otherwise.
pub fn value_analytic(scenario: &Scenario, regime: &Regime) -> Result<f64> {
    let unsupported = || {
        Error::Spec(format!(
            "no closed-form value for this regime under the {} scenario; use g-computation",
            scenario.name()
        ))
    };
    if regime.stages() != scenario.stages() {
        return Err(unsupported());
    }
    match scenario {
        Scenario::OneDecision(p) => {
            let psi = rule_psi(regime, 1, &["1", "s1_1"]).ok_or_else(unsupported)?;
            Ok(value_one_decision_analytic(psi, p))
        }
        Scenario::TwoDecision(p) => {
            let psi1 = rule_psi(regime, 1, &["1", "s1_1"]).ok_or_else(unsupported)?;
            let psi2 = rule_psi(regime, 2, &["1", "a1", "s2_1"]).ok_or_else(unsupported)?;
            value_two_decision_analytic(psi1, psi2, p)
        }
        Scenario::Moodie(p) => {
            let psi1 = rule_psi(regime, 1, &["1", "s1_1"]).ok_or_else(unsupported)?;
            let psi2 = rule_psi(regime, 2, &["1", "s2_1"]).ok_or_else(unsupported)?;
            value_moodie_analytic(psi1, psi2, p)
        }
    }
}

/// g-computation: simulate states forward from the true laws with actions
/// set by `regime`, average the true conditional mean outcome. Returns the
/// estimate and its Monte Carlo standard error (absent when `b = 1`).
pub fn value_gcomputation(
    scenario: &Scenario,
    regime: &Regime,
    b: usize,
    rng: &mut RngStream,
) -> Result<(f64, Option<f64>)> {
    if b == 0 {
        return Err(Error::InvalidParameter("g-computation needs B >= 1".into()));
    }
    scenario.validate()?;
    let big_k = scenario.stages();
    if regime.stages() != big_k {
        return Err(Error::Spec(format!(
            "regime has {} rules for a {big_k}-decision scenario",
            regime.stages()
        )));
    }
    for (k, rule) in regime.rules.iter().enumerate() {
        rule.features.validate(k + 1, &scenario.state_dims())?;
    }
    let mut states = Vec::with_capacity(big_k);
    let mut actions = Vec::with_capacity(big_k);
    // Welford running moments
    let (mut m, mut s2) = (0.0, 0.0);
    for i in 0..b {
        states.clear();
        actions.clear();
        for k in 1..=big_k {
            let s = if k == 1 {
                scenario.initial_state(rng)
            } else {
                scenario.next_state(k, &states, &actions, rng)
            };
            states.push(s);
            actions.push(regime.rule(k).decide(&states, &actions));
        }
        let u = scenario.outcome_mean(&states, &actions);
        let delta = u - m;
        m += delta / (i + 1) as f64;
        s2 += delta * (u - m);
    }
    let se = (b > 1).then(|| (s2 / (b - 1) as f64).sqrt() / (b as f64).sqrt());
    Ok((m, se))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimators {
    Qlearn,
    Alearn,
    Both,
}

impl Estimators {
    fn q(self) -> bool {
        matches!(self, Estimators::Qlearn | Estimators::Both)
    }
    fn a(self) -> bool {
        matches!(self, Estimators::Alearn | Estimators::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ValueMethod {
    Analytic,
    Gcomp { b: usize },
}

fn default_reps() -> usize {
    10_000
}

fn default_estimators() -> Estimators {
    Estimators::Both
}

fn default_value() -> ValueMethod {
    ValueMethod::Analytic
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: Scenario,
    pub n: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_estimators")]
    pub estimators: Estimators,
    /// Working models; the scenario's defaults when absent.
    #[serde(default)]
    pub specs: Option<Vec<StageSpec>>,
    #[serde(default = "default_value")]
    pub value: ValueMethod,
}

impl StudyConfig {
    pub fn new(scenario: Scenario, n: usize, reps: usize, master_seed: u64) -> Self {
        Self {
            scenario,
            n,
            reps,
            master_seed,
            estimators: Estimators::Both,
            specs: None,
            value: ValueMethod::Analytic,
        }
    }

    pub fn resolved_specs(&self) -> Vec<StageSpec> {
        self.specs.clone().unwrap_or_else(|| self.scenario.working_specs())
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.reps == 0 {
            return Err(Error::Spec("reps must be >= 1".into()));
        }
        if let ValueMethod::Gcomp { b: 0 } = self.value {
            return Err(Error::Spec("value.b must be >= 1".into()));
        }
        let specs = self.resolved_specs();
        if specs.len() != self.scenario.stages() {
            return Err(Error::Spec(format!(
                "specs has {} entries for a {}-decision scenario",
                specs.len(),
                self.scenario.stages()
            )));
        }
        for (k, s) in specs.iter().enumerate() {
            s.validate(k + 1, &self.scenario.state_dims())?;
            let width = s.h_features.len() + s.c_features.len();
            if self.n < width {
                return Err(Error::Spec(format!(
                    "n = {} is below the stage-{} design width {width}",
                    self.n,
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// One estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepEstimate {
    pub psi: Vec<f64>,
    pub value: f64,
    /// Population SD of the fitted propensities per decision (A-learning).
    pub propensity_sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub qlearn: Option<RepEstimate>,
    pub alearn: Option<RepEstimate>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub mean_psi: Vec<f64>,
    pub sd_psi: Vec<f64>,
    pub bias: Vec<f64>,
    /// `sd / √reps` for each component mean.
    pub mc_se: Vec<f64>,
    pub mse: Vec<f64>,
    pub mean_value: f64,
    pub value_se: f64,
    #[serde(rename = "R_mean")]
    pub r_mean: f64,
    #[serde(rename = "R_mean_se")]
    pub r_mean_se: f64,
    #[serde(rename = "R_median")]
    pub r_median: f64,
    /// Per decision, mean over replications of `−ψ̂ₖ₀/ψ̂ₖ₁` for two-term
    /// `[1, x]` rules.
    pub mean_threshold: Vec<Option<f64>>,
    /// Per decision, `−mean(ψ̂ₖ₀)/mean(ψ̂ₖ₁)`.
    pub threshold_of_means: Vec<Option<f64>>,
    /// Per decision, the propensity-SD diagnostic (A-learning only).
    pub propensity_sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResults {
    pub scenario: String,
    pub n: usize,
    pub reps: usize,
    pub completed: usize,
    pub failed: usize,
    pub warnings: Vec<String>,
    pub true_psi: Vec<f64>,
    pub h_opt: f64,
    pub qlearn: Option<EstimatorSummary>,
    pub alearn: Option<EstimatorSummary>,
    /// `MSE_A / MSE_Q` componentwise; values above 1 favour Q-learning.
    pub mse_ratio: Option<Vec<f64>>,
    #[serde(skip)]
    pub records: Vec<RepRecord>,
}

/// Average over replications of the within-dataset (population) SD of π̂.
pub fn propensity_sd_diagnostic(per_rep: &[Vec<f64>]) -> f64 {
    mean(&per_rep.iter().map(|p| population_sd(p)).collect::<Vec<_>>())
}

/// `median H(d̂) / H(d^opt)`.
pub fn median_efficiency(values: &[f64], h_opt: f64) -> f64 {
    median(values) / h_opt
}

fn regime_value(cfg: &StudyConfig, regime: &Regime, stream_id: u64) -> Result<f64> {
    match cfg.value {
        ValueMethod::Analytic => value_analytic(&cfg.scenario, regime),
        ValueMethod::Gcomp { b } => {
            let mut rng = make_stream(cfg.master_seed, stream_id);
            Ok(value_gcomputation(&cfg.scenario, regime, b, &mut rng)?.0)
        }
    }
}

/// Stream used for the value of replication `rep`'s estimated regimes; the
/// data for replication `rep` use stream `rep`.
pub fn value_stream_id(rep: usize) -> u64 {
    rep as u64 | (1 << 63)
}

fn one_estimate(cfg: &StudyConfig, fit: &RegimeFit, rep: usize) -> Result<RepEstimate> {
    Ok(RepEstimate {
        psi: fit.regime.psi(),
        value: regime_value(cfg, &fit.regime, value_stream_id(rep))?,
        propensity_sd: fit
            .stages
            .iter()
            .filter_map(|s| s.propensities.as_ref().map(|p| population_sd(p)))
            .collect(),
    })
}

fn run_rep(cfg: &StudyConfig, specs: &[StageSpec], rep: usize) -> Result<RepRecord> {
    let attempt = || -> Result<(Option<RepEstimate>, Option<RepEstimate>)> {
        let mut rng = make_stream(cfg.master_seed, rep as u64);
        let (data, _) = cfg.scenario.simulate(cfg.n, &mut rng, crate::scenarios::Policy::Observational)?;
        let q = if cfg.estimators.q() {
            Some(one_estimate(cfg, &qlearn_fit(&data, specs, &QOptions::default())?, rep)?)
        } else {
            None
        };
        let a = if cfg.estimators.a() {
            Some(one_estimate(cfg, &alearn_fit(&data, specs)?, rep)?)
        } else {
            None
        };
        Ok((q, a))
    };
    match attempt() {
        Ok((qlearn, alearn)) => Ok(RepRecord {
            rep,
            qlearn,
            alearn,
            failure: None,
        }),
        Err(e) if e.is_numerical() => Ok(RepRecord {
            rep,
            qlearn: None,
            alearn: None,
            failure: Some(e.to_string()),
        }),
        Err(e) => Err(e),
    }
}

fn summarize(est: &[&RepEstimate], truth: &[f64], h_opt: f64, rules: &[usize]) -> EstimatorSummary {
    let reps = est.len();
    let p = truth.len();
    let col = |j: usize| est.iter().map(|e| e.psi[j]).collect::<Vec<_>>();
    let mean_psi: Vec<f64> = (0..p).map(|j| mean(&col(j))).collect();
    let sd_psi: Vec<f64> = (0..p).map(|j| sample_sd(&col(j))).collect();
    let values: Vec<f64> = est.iter().map(|e| e.value).collect();
    let root = (reps as f64).sqrt();
    // rule start offsets within ψ
    let mut offsets = Vec::with_capacity(rules.len());
    let mut start = 0;
    for &len in rules {
        offsets.push((start, len));
        start += len;
    }
    let value_sd = sample_sd(&values);
    let stages = est.first().map_or(0, |e| e.propensity_sd.len());
    EstimatorSummary {
        bias: mean_psi.iter().zip(truth).map(|(m, t)| m - t).collect(),
        mc_se: sd_psi.iter().map(|s| s / root).collect(),
        mse: (0..p)
            .map(|j| mean(&col(j).iter().map(|x| (x - truth[j]).powi(2)).collect::<Vec<_>>()))
            .collect(),
        mean_value: mean(&values),
        value_se: value_sd / root,
        r_mean: mean(&values) / h_opt,
        r_mean_se: value_sd / root / h_opt.abs(),
        r_median: median_efficiency(&values, h_opt),
        mean_threshold: offsets
            .iter()
            .map(|&(s, len)| {
                (len == 2).then(|| mean(&est.iter().map(|e| -e.psi[s] / e.psi[s + 1]).collect::<Vec<_>>()))
            })
            .collect(),
        threshold_of_means: offsets
            .iter()
            .map(|&(s, len)| (len == 2 && mean_psi[s + 1] != 0.0).then(|| -mean_psi[s] / mean_psi[s + 1]))
            .collect(),
        propensity_sd: (0..stages)
            .map(|k| mean(&est.iter().map(|e| e.propensity_sd[k]).collect::<Vec<_>>()))
            .collect(),
        mean_psi,
        sd_psi,
    }
}

/// Runs the replications in parallel (rayon's current pool) and
/// summarises. Replication `r` draws its data from stream `r`, so results
/// do not depend on the thread count.
pub fn run_mc_study(cfg: &StudyConfig) -> Result<StudyResults> {
    cfg.validate()?;
    let specs = cfg.resolved_specs();
    let true_psi = cfg.scenario.true_psi()?;
    let truth = true_regime(&cfg.scenario)?;
    let h_opt = match cfg.value {
        ValueMethod::Analytic => value_analytic(&cfg.scenario, &truth)?,
        ValueMethod::Gcomp { b } => {
            value_gcomputation(&cfg.scenario, &truth, b, &mut make_stream(cfg.master_seed, u64::MAX))?.0
        }
    };
    let rule_lens: Vec<usize> = specs.iter().map(|s| s.c_features.len()).collect();
    if rule_lens.iter().sum::<usize>() != true_psi.len() {
        return Err(Error::Spec(format!(
            "contrast models have {} coefficients but the scenario has {} true ψ components",
            rule_lens.iter().sum::<usize>(),
            true_psi.len()
        )));
    }

    let records = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_rep(cfg, &specs, r))
        .collect::<Result<Vec<_>>>()?;

    let failed = records.iter().filter(|r| r.failure.is_some()).count();
    let mut warnings = Vec::new();
    if failed * 10 > cfg.reps {
        return Err(Error::Study {
            failed,
            reps: cfg.reps,
        });
    }
    if failed * 100 > cfg.reps {
        let msg = format!("{failed} of {} replications failed and were excluded", cfg.reps);
        warn!("{msg}");
        warnings.push(msg);
    }
    let ok: Vec<&RepRecord> = records.iter().filter(|r| r.failure.is_none()).collect();
    if ok.is_empty() {
        return Err(Error::Study {
            failed,
            reps: cfg.reps,
        });
    }
    let summary_for = |f: fn(&RepRecord) -> Option<&RepEstimate>| -> Option<EstimatorSummary> {
        let est: Vec<&RepEstimate> = ok.iter().filter_map(|r| f(r)).collect();
        (!est.is_empty()).then(|| summarize(&est, &true_psi, h_opt, &rule_lens))
    };
    let qlearn = summary_for(|r| r.qlearn.as_ref());
    let alearn = summary_for(|r| r.alearn.as_ref());
    let mse_ratio = match (&qlearn, &alearn) {
        (Some(q), Some(a)) => Some(a.mse.iter().zip(&q.mse).map(|(a, q)| a / q).collect()),
        _ => None,
    };
    info!("study {}: {} of {} replications completed", cfg.scenario.name(), ok.len(), cfg.reps);
    Ok(StudyResults {
        scenario: cfg.scenario.name().into(),
        n: cfg.n,
        reps: cfg.reps,
        completed: ok.len(),
        failed,
        warnings,
        true_psi,
        h_opt,
        qlearn,
        alearn,
        mse_ratio,
        records,
    })
}

impl StudyResults {
    /// Per-replication CSV: `rep,estimator,psi_1..psi_p,value,failed`.
    pub fn write_reps_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let p = self.true_psi.len();
        let mut header = vec!["rep".to_string(), "estimator".into()];
        header.extend((1..=p).map(|j| format!("psi_{j}")));
        header.extend(["value".into(), "failed".into()]);
        let err = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&header).map_err(err)?;
        for r in &self.records {
            for (name, est) in [("qlearn", &r.qlearn), ("alearn", &r.alearn)] {
                let mut row = vec![r.rep.to_string(), name.to_string()];
                match est {
                    Some(e) => {
                        row.extend(e.psi.iter().map(|v| v.to_string()));
                        row.push(e.value.to_string());
                        row.push("0".into());
                    }
                    None if r.failure.is_some() => {
                        row.extend(std::iter::repeat_n(String::new(), p + 1));
                        row.push("1".into());
                    }
                    None => continue,
                }
                w.write_record(&row).map_err(err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
