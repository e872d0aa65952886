//! Generative models used in the simulation studies, plus the truth they
//! imply (optimal regimes, first-stage Q-function coefficients).
//!
//! Second arguments of the Normal laws in the one- and two-decision models
//! are variances; the CD4 scenario states standard deviations directly.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DecisionRule, FeatureMap, PropensitySpec, Regime, StageSpec, Trajectory};
use crate::error::{Error, Result};
use crate::numeric::normal::linear_positive_part;
use crate::numeric::{expit, norm_cdf, norm_pdf, RngStream};

/// One decision, `S₁ ~ N(0, 1)`, quadratic terms in the propensity and the
/// outcome mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneDecisionParams {
    pub phi0: [f64; 3],
    pub beta0: [f64; 3],
    pub psi0: [f64; 2],
    pub outcome_sd: f64,
}

impl Default for OneDecisionParams {
    fn default() -> Self {
        Self {
            phi0: [0.0, -2.0, 0.0],
            beta0: [1.0, 1.0, 0.0],
            psi0: [1.0, 0.5],
            outcome_sd: 3.0,
        }
    }
}

/// Two decisions, binary `S₁`, normal `S₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoDecisionParams {
    pub phi1: [f64; 2],
    pub delta1: [f64; 4],
    pub phi2: [f64; 6],
    pub beta2: [f64; 6],
    pub psi2: [f64; 3],
    pub s2_var: f64,
    pub y_var: f64,
}

impl Default for TwoDecisionParams {
    fn default() -> Self {
        Self {
            phi1: [0.3, -0.5],
            delta1: [0.0, 0.5, -0.75, 0.25],
            phi2: [0.0, 0.5, 0.1, -1.0, -0.1, 0.0],
            beta2: [3.0, 0.0, 0.1, -0.5, -0.5, 0.0],
            psi2: [1.0, 0.25, 0.5],
            s2_var: 2.0,
            y_var: 10.0,
        }
    }
}

/// CD4-count scenario: `Y = Y^opt − μ₁ − μ₂` with regrets
/// `μₖ = Cₖ(I{Cₖ > 0} − Aₖ)`, `C₁ = ψ₁₀ + ψ₁₁s₁`, `C₂ = ψ₂₀ + ψ₂₁s₂`.
/// A negative `psi2[1]` means treating low counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoodieParams {
    pub phi1: [f64; 2],
    pub phi2: [f64; 2],
    pub psi1: [f64; 2],
    pub psi2: [f64; 2],
    pub s1_mean: f64,
    pub s1_sd: f64,
    pub s2_slope: f64,
    pub s2_sd: f64,
    pub yopt_intercept: f64,
    pub yopt_slope: f64,
    pub yopt_sd: f64,
}

impl Default for MoodieParams {
    fn default() -> Self {
        Self {
            phi1: [2.0, -0.006],
            phi2: [0.8, -0.004],
            psi1: [250.0, -1.0],
            psi2: [720.0, -2.0],
            s1_mean: 450.0,
            s1_sd: 150.0,
            s2_slope: 1.25,
            s2_sd: 60.0,
            yopt_intercept: 400.0,
            yopt_slope: 1.6,
            yopt_sd: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    OneDecision(OneDecisionParams),
    TwoDecision(TwoDecisionParams),
    Moodie(MoodieParams),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")))
    }
}

fn finite(name: &str, vs: &[f64]) -> Result<()> {
    match vs.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::InvalidParameter(format!("{name} contains {v}"))),
        None => Ok(()),
    }
}

/// How actions are chosen when simulating.
#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    /// Draw from the scenario's true propensities.
    Observational,
    /// Take the regime's action. The propensity draw is still consumed so
    /// that both policies use the same random numbers for states.
    Follow(&'a Regime),
}

fn regret(c: f64, a: u8) -> f64 {
    c * (f64::from(u8::from(c > 0.0)) - f64::from(a))
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::OneDecision(_) => "one_decision",
            Scenario::TwoDecision(_) => "two_decision",
            Scenario::Moodie(_) => "moodie",
        }
    }

    pub fn stages(&self) -> usize {
        match self {
            Scenario::OneDecision(_) => 1,
            _ => 2,
        }
    }

    pub fn state_dims(&self) -> Vec<usize> {
        vec![1; self.stages()]
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Scenario::OneDecision(p) => {
                finite("phi0", &p.phi0)?;
                finite("beta0", &p.beta0)?;
                finite("psi0", &p.psi0)?;
                positive("outcome_sd", p.outcome_sd)
            }
            Scenario::TwoDecision(p) => {
                finite("phi1", &p.phi1)?;
                finite("delta1", &p.delta1)?;
                finite("phi2", &p.phi2)?;
                finite("beta2", &p.beta2)?;
                finite("psi2", &p.psi2)?;
                positive("s2_var", p.s2_var)?;
                positive("y_var", p.y_var)
            }
            Scenario::Moodie(p) => {
                finite("phi1", &p.phi1)?;
                finite("phi2", &p.phi2)?;
                finite("psi1", &p.psi1)?;
                finite("psi2", &p.psi2)?;
                finite(
                    "moodie constants",
                    &[p.s1_mean, p.s2_slope, p.yopt_intercept, p.yopt_slope],
                )?;
                positive("s1_sd", p.s1_sd)?;
                positive("s2_sd", p.s2_sd)?;
                positive("yopt_sd", p.yopt_sd)
            }
        }
    }

    /// Draws the stage-1 state.
    pub fn initial_state(&self, rng: &mut RngStream) -> Vec<f64> {
        match self {
            Scenario::OneDecision(_) => vec![rng.standard_normal()],
            Scenario::TwoDecision(_) => vec![f64::from(u8::from(rng.uniform() < 0.5))],
            Scenario::Moodie(p) => vec![rng.normal(p.s1_mean, p.s1_sd)],
        }
    }

    /// Mean and standard deviation of the normal stage-2 state given stage-1
    /// history. `None` for one-decision scenarios.
    pub fn s2_law(&self, s1: f64, a1: u8) -> Option<(f64, f64)> {
        let a1 = f64::from(a1);
        match self {
            Scenario::OneDecision(_) => None,
            Scenario::TwoDecision(p) => {
                let d = &p.delta1;
                Some((d[0] + d[1] * s1 + d[2] * a1 + d[3] * s1 * a1, p.s2_var.sqrt()))
            }
            Scenario::Moodie(p) => Some((p.s2_slope * s1, p.s2_sd)),
        }
    }

    /// Draws the state for decision `stage` (≥ 2) given the history.
    pub fn next_state(&self, stage: usize, states: &[Vec<f64>], actions: &[u8], rng: &mut RngStream) -> Vec<f64> {
        debug_assert_eq!(stage, 2);
        let (m, sd) = self
            .s2_law(states[0][0], actions[0])
            .expect("only two-decision scenarios have a second state");
        vec![rng.normal(m, sd)]
    }

    /// True `P(A_stage = 1 | history)`.
    pub fn propensity(&self, stage: usize, states: &[Vec<f64>], actions: &[u8]) -> f64 {
        let s1 = states[0][0];
        match (self, stage) {
            (Scenario::OneDecision(p), _) => expit(p.phi0[0] + p.phi0[1] * s1 + p.phi0[2] * s1 * s1),
            (Scenario::TwoDecision(p), 1) => expit(p.phi1[0] + p.phi1[1] * s1),
            (Scenario::TwoDecision(p), _) => {
                let (a1, s2, f) = (f64::from(actions[0]), states[1][0], &p.phi2);
                expit(f[0] + f[1] * s1 + f[2] * a1 + f[3] * s2 + f[4] * a1 * s2 + f[5] * s2 * s2)
            }
            (Scenario::Moodie(p), 1) => expit(p.phi1[0] + p.phi1[1] * s1),
            (Scenario::Moodie(p), _) => expit(p.phi2[0] + p.phi2[1] * states[1][0]),
        }
    }

    /// True `E[Y | full history]`.
    pub fn outcome_mean(&self, states: &[Vec<f64>], actions: &[u8]) -> f64 {
        let s1 = states[0][0];
        match self {
            Scenario::OneDecision(p) => {
                let (b, c) = (&p.beta0, &p.psi0);
                b[0] + b[1] * s1 + b[2] * s1 * s1 + f64::from(actions[0]) * (c[0] + c[1] * s1)
            }
            Scenario::TwoDecision(p) => {
                let (a1, a2, s2) = (f64::from(actions[0]), f64::from(actions[1]), states[1][0]);
                let (b, c) = (&p.beta2, &p.psi2);
                b[0] + b[1] * s1 + b[2] * a1 + b[3] * s1 * a1 + b[4] * s2 + b[5] * s2 * s2
                    + a2 * (c[0] + c[1] * a1 + c[2] * s2)
            }
            Scenario::Moodie(p) => {
                let s2 = states[1][0];
                p.yopt_intercept + p.yopt_slope * s1
                    - regret(p.psi1[0] + p.psi1[1] * s1, actions[0])
                    - regret(p.psi2[0] + p.psi2[1] * s2, actions[1])
            }
        }
    }

    pub fn outcome_sd(&self) -> f64 {
        match self {
            Scenario::OneDecision(p) => p.outcome_sd,
            Scenario::TwoDecision(p) => p.y_var.sqrt(),
            Scenario::Moodie(p) => p.yopt_sd,
        }
    }

    /// Simulates `n` trajectories. Each trajectory draws, in order, the
    /// stage-1 state, a uniform for A₁, the stage-2 state and a uniform for
    /// A₂ (two decisions only), then the outcome noise; a prefix of a run
    /// therefore equals a shorter run on the same stream. The second vector
    /// holds `Y^opt` for the CD4 scenario (the outcome had every action been
    /// optimal) and is empty otherwise.
    pub fn simulate(&self, n: usize, rng: &mut RngStream, policy: Policy<'_>) -> Result<(Dataset, Vec<f64>)> {
        self.validate()?;
        if let Policy::Follow(r) = policy {
            if r.stages() != self.stages() {
                return Err(Error::Spec(format!(
                    "regime has {} rules for a {}-decision scenario",
                    r.stages(),
                    self.stages()
                )));
            }
            for (k, rule) in r.rules.iter().enumerate() {
                rule.features.validate(k + 1, &self.state_dims())?;
            }
        }
        let big_k = self.stages();
        let mut trajs = Vec::with_capacity(n);
        let mut y_opt = Vec::new();
        for _ in 0..n {
            let mut states = Vec::with_capacity(big_k);
            let mut actions = Vec::with_capacity(big_k);
            for k in 1..=big_k {
                let s = if k == 1 {
                    self.initial_state(rng)
                } else {
                    self.next_state(k, &states, &actions, rng)
                };
                states.push(s);
                let u = rng.uniform();
                let a = match policy {
                    Policy::Observational => u8::from(u < self.propensity(k, &states, &actions)),
                    Policy::Follow(r) => r.rule(k).decide(&states, &actions),
                };
                actions.push(a);
            }
            let z = rng.standard_normal();
            let y = self.outcome_mean(&states, &actions) + self.outcome_sd() * z;
            if let Scenario::Moodie(p) = self {
                y_opt.push(p.yopt_intercept + p.yopt_slope * states[0][0] + p.yopt_sd * z);
            }
            trajs.push(Trajectory {
                states,
                actions,
                outcome: y,
            });
        }
        Ok((Dataset::from_parts(self.state_dims(), trajs), y_opt))
    }

    /// True ψ⁰ for every decision, concatenated (stage 1 first).
    pub fn true_psi(&self) -> Result<Vec<f64>> {
        Ok(match self {
            Scenario::OneDecision(p) => p.psi0.to_vec(),
            Scenario::TwoDecision(p) => {
                let (_, psi1) = derive_stage1_truth(p)?;
                psi1.iter().chain(&p.psi2).copied().collect()
            }
            Scenario::Moodie(p) => p.psi1.iter().chain(&p.psi2).copied().collect(),
        })
    }

    /// The working models used in the studies: correctly specified
    /// contrasts, linear h-models and main-effect logistic propensities.
    pub fn working_specs(&self) -> Vec<StageSpec> {
        let logistic = |t: &[&str]| PropensitySpec::Logistic(FeatureMap::parse(t).expect("static terms"));
        let spec = |h: &[&str], c: &[&str], pi: &[&str]| StageSpec::new(h, c, logistic(pi)).expect("static terms");
        match self {
            Scenario::OneDecision(_) => vec![spec(&["1", "s1_1"], &["1", "s1_1"], &["1", "s1_1"])],
            Scenario::TwoDecision(_) => vec![
                spec(&["1", "s1_1"], &["1", "s1_1"], &["1", "s1_1"]),
                spec(
                    &["1", "s1_1", "a1", "s1_1*a1", "s2_1"],
                    &["1", "a1", "s2_1"],
                    &["1", "s1_1", "a1", "s2_1", "a1*s2_1"],
                ),
            ],
            Scenario::Moodie(_) => vec![
                spec(&["1", "s1_1"], &["1", "s1_1"], &["1", "s1_1"]),
                spec(&["1", "s1_1", "a1", "s1_1*a1", "s2_1"], &["1", "s2_1"], &["1", "s2_1"]),
            ],
        }
    }
}

/// Simulates the one-decision model.
pub fn gen_one_decision(p: &OneDecisionParams, n: usize, rng: &mut RngStream) -> Result<Dataset> {
    Ok(Scenario::OneDecision(p.clone()).simulate(n, rng, Policy::Observational)?.0)
}

/// Simulates the two-decision model.
pub fn gen_two_decision(p: &TwoDecisionParams, n: usize, rng: &mut RngStream) -> Result<Dataset> {
    Ok(Scenario::TwoDecision(p.clone()).simulate(n, rng, Policy::Observational)?.0)
}

/// Simulates the CD4 scenario; also returns `Y^opt`.
pub fn gen_moodie(p: &MoodieParams, n: usize, rng: &mut RngStream) -> Result<(Dataset, Vec<f64>)> {
    Scenario::Moodie(p.clone()).simulate(n, rng, Policy::Observational)
}

/// First-stage truth of the two-decision model: `(β⁰₁, ψ⁰₁)` with
/// `Q⁰₁(s₁, a₁) = β⁰₁₀ + β⁰₁₁s₁ + a₁(ψ⁰₁₀ + ψ⁰₁₁s₁)` exact on `{0,1}²`.
pub fn derive_stage1_truth(p: &TwoDecisionParams) -> Result<([f64; 2], [f64; 2])> {
    positive("s2_var", p.s2_var)?;
    let scen = Scenario::TwoDecision(p.clone());
    let (b, c) = (&p.beta2, &p.psi2);
    let q = |s1: f64, a1: u8| -> Result<f64> {
        let (mu, sd) = scen.s2_law(s1, a1).expect("two decisions");
        let af = f64::from(a1);
        let pos = linear_positive_part(c[0] + c[1] * af, c[2], mu, sd)?;
        Ok(b[0] + b[1] * s1 + b[2] * af + b[3] * s1 * af + b[4] * mu + b[5] * (mu * mu + sd * sd)
            + pos.partial_mean)
    };
    let (q00, q10, q01, q11) = (q(0.0, 0)?, q(1.0, 0)?, q(0.0, 1)?, q(1.0, 1)?);
    Ok(([q00, q10 - q00], [q01 - q00, q11 - q10 - q01 + q00]))
}

/// Closed-form `E{V₂ | S₁ = s₁, A₁ = a₁}` when `S₂ | s₁, a₁ ~ N(K₁ᵀγ, σ²)`,
/// `K₁ = (1, s₁, a₁)` and the stage-2 model is
/// `K₁ᵀβ₂₁ + s₂β₂₂ + a₂(K₁ᵀψ₂₁ + s₂ψ₂₂)` with `ψ₂₂ > 0`.
#[allow(clippy::too_many_arguments)]
pub fn induced_q1_closed_form(
    s1: f64,
    a1: f64,
    beta21: [f64; 3],
    beta22: f64,
    psi21: [f64; 3],
    psi22: f64,
    gamma: [f64; 3],
    sigma: f64,
) -> Result<f64> {
    if !(psi22 > 0.0) {
        return Err(Error::InvalidParameter(format!("psi22 must be > 0, got {psi22}")));
    }
    positive("sigma", sigma)?;
    let k = [1.0, s1, a1];
    let kt = |v: &[f64; 3]| k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    let (k_psi, k_gamma) = (kt(&psi21), kt(&gamma));
    let eta = -(k_psi / psi22 + k_gamma) / sigma;
    let upper = 1.0 - norm_cdf(eta);
    Ok(kt(&beta21) + k_gamma * beta22 + k_psi * upper + psi22 * (sigma * norm_pdf(eta) + k_gamma * upper))
}

fn rule(terms: &[&str], psi: &[f64]) -> DecisionRule {
    DecisionRule::new(FeatureMap::parse(terms).expect("static terms"), psi.to_vec()).expect("lengths match")
}

/// The optimal regime implied by the scenario's parameters.
pub fn true_regime(scenario: &Scenario) -> Result<Regime> {
    scenario.validate()?;
    Ok(match scenario {
        Scenario::OneDecision(p) => Regime::new(vec![rule(&["1", "s1_1"], &p.psi0)]),
        Scenario::TwoDecision(p) => {
            let (_, psi1) = derive_stage1_truth(p)?;
            Regime::new(vec![rule(&["1", "s1_1"], &psi1), rule(&["1", "a1", "s2_1"], &p.psi2)])
        }
        Scenario::Moodie(p) => Regime::new(vec![rule(&["1", "s1_1"], &p.psi1), rule(&["1", "s2_1"], &p.psi2)]),
    })
}
