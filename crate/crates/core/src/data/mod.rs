//! Trajectories, model specifications, regimes and fitted stages.

mod features;
mod io;

pub use features::{FeatureMap, Term};
pub use io::{read_dataset, read_dataset_csv, sniff_layout, write_dataset, write_dataset_csv};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::linalg::{dot, Matrix};

/// One observed record `(S1, A1, …, SK, AK, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<u8>,
    pub outcome: f64,
}

impl Trajectory {
    pub fn stages(&self) -> usize {
        self.actions.len()
    }
}

/// Trajectories sharing a stage count and per-stage state dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    state_dims: Vec<usize>,
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(state_dims: Vec<usize>, trajectories: Vec<Trajectory>) -> Result<Self> {
        if state_dims.is_empty() {
            return Err(Error::Spec("a dataset needs at least one stage".into()));
        }
        for (i, t) in trajectories.iter().enumerate() {
            if t.states.len() != state_dims.len() || t.actions.len() != state_dims.len() {
                return Err(Error::Dimension(format!(
                    "trajectory {i} has {} states and {} actions, expected {}",
                    t.states.len(),
                    t.actions.len(),
                    state_dims.len()
                )));
            }
            if let Some(k) = t.states.iter().zip(&state_dims).position(|(s, &d)| s.len() != d) {
                return Err(Error::Dimension(format!(
                    "trajectory {i}: stage-{} state has {} components, expected {}",
                    k + 1,
                    t.states[k].len(),
                    state_dims[k]
                )));
            }
            if let Some(k) = t.actions.iter().position(|&a| a > 1) {
                return Err(Error::InvalidParameter(format!(
                    "trajectory {i}: action a{} = {} is not binary",
                    k + 1,
                    t.actions[k]
                )));
            }
        }
        Ok(Self {
            state_dims,
            trajectories,
        })
    }

    /// Skips validation; for generators that build rows by construction.
    pub(crate) fn from_parts(state_dims: Vec<usize>, trajectories: Vec<Trajectory>) -> Self {
        Self {
            state_dims,
            trajectories,
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn stages(&self) -> usize {
        self.state_dims.len()
    }

    pub fn state_dims(&self) -> &[usize] {
        &self.state_dims
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    /// CSV header: `s1_1,…,s1_d1,a1,…,aK,y`.
    pub fn column_names(&self) -> Vec<String> {
        column_names(&self.state_dims)
    }

    pub fn actions(&self, stage: usize) -> Vec<u8> {
        self.trajectories.iter().map(|t| t.actions[stage - 1]).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.trajectories.iter().map(|t| t.outcome).collect()
    }
}

pub(crate) fn column_names(state_dims: &[usize]) -> Vec<String> {
    let mut names = Vec::new();
    for (k, &d) in state_dims.iter().enumerate() {
        for j in 1..=d {
            names.push(format!("s{}_{}", k + 1, j));
        }
        names.push(format!("a{}", k + 1));
    }
    names.push("y".into());
    names
}

/// Design matrix whose row i is `fm` evaluated on trajectory i's history at
/// decision `stage`.
pub fn build_design(dataset: &Dataset, stage: usize, fm: &FeatureMap) -> Result<Matrix> {
    if stage == 0 || stage > dataset.stages() {
        return Err(Error::Spec(format!(
            "stage {stage} outside 1..={}",
            dataset.stages()
        )));
    }
    fm.validate(stage, dataset.state_dims())?;
    let mut data = Vec::with_capacity(dataset.len() * fm.len());
    for t in dataset.trajectories() {
        fm.eval_into(&t.states[..stage], &t.actions[..stage - 1], &mut data);
    }
    Matrix::new(dataset.len(), fm.len(), data)
}

/// How the stage-k propensity `P(A_k = 1 | history)` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensitySpec {
    /// Known by design, as in a randomized trial.
    Known(f64),
    /// Logistic regression on the listed terms.
    Logistic(FeatureMap),
}

/// Working models for one decision: `Q_k = h_k + a_k · C_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    #[serde(rename = "h")]
    pub h_features: FeatureMap,
    #[serde(rename = "c")]
    pub c_features: FeatureMap,
    pub propensity: PropensitySpec,
}

impl StageSpec {
    pub fn new(h: &[&str], c: &[&str], propensity: PropensitySpec) -> Result<Self> {
        Ok(Self {
            h_features: FeatureMap::parse(h)?,
            c_features: FeatureMap::parse(c)?,
            propensity,
        })
    }

    pub fn validate(&self, stage: usize, state_dims: &[usize]) -> Result<()> {
        self.h_features.validate(stage, state_dims)?;
        self.c_features.validate(stage, state_dims)?;
        match &self.propensity {
            PropensitySpec::Known(p) if !(*p > 0.0 && *p < 1.0) => Err(Error::Spec(format!(
                "known propensity {p} must lie strictly inside (0, 1)"
            ))),
            PropensitySpec::Known(_) => Ok(()),
            PropensitySpec::Logistic(fm) => fm.validate(stage, state_dims),
        }
    }
}

/// Decision rule `I{ψᵀ c(history) > 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    pub features: FeatureMap,
    pub psi: Vec<f64>,
}

impl DecisionRule {
    pub fn new(features: FeatureMap, psi: Vec<f64>) -> Result<Self> {
        if features.len() != psi.len() {
            return Err(Error::Dimension(format!(
                "rule has {} terms but {} coefficients",
                features.len(),
                psi.len()
            )));
        }
        Ok(Self { features, psi })
    }

    pub fn contrast(&self, states: &[Vec<f64>], actions: &[u8]) -> f64 {
        dot(&self.features.eval(states, actions), &self.psi)
    }

    /// Strict inequality: a zero contrast gives action 0.
    pub fn decide(&self, states: &[Vec<f64>], actions: &[u8]) -> u8 {
        u8::from(self.contrast(states, actions) > 0.0)
    }

    /// For a two-term rule `[1, x]`, the value of x where the contrast
    /// changes sign (`−ψ₀/ψ₁`).
    pub fn threshold(&self) -> Option<f64> {
        match self.features.terms() {
            [crate::data::Term::Constant, _] if self.psi[1] != 0.0 => {
                Some(-self.psi[0] / self.psi[1])
            }
            _ => None,
        }
    }
}

/// One decision rule per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub rules: Vec<DecisionRule>,
}

impl Regime {
    pub fn new(rules: Vec<DecisionRule>) -> Self {
        Self { rules }
    }

    pub fn stages(&self) -> usize {
        self.rules.len()
    }

    /// Concatenated ψ over stages 1..K.
    pub fn psi(&self) -> Vec<f64> {
        self.rules.iter().flat_map(|r| r.psi.iter().copied()).collect()
    }

    pub fn rule(&self, stage: usize) -> &DecisionRule {
        &self.rules[stage - 1]
    }
}

/// Action the regime dictates at decision `stage`, given states 1..=stage
/// and earlier actions (extra trailing entries are ignored).
pub fn apply_regime(regime: &Regime, stage: usize, states: &[Vec<f64>], actions: &[u8]) -> u8 {
    regime.rule(stage).decide(&states[..stage], &actions[..stage - 1])
}

/// Estimates produced at one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFit {
    pub stage: usize,
    pub beta: Vec<f64>,
    pub psi: Vec<f64>,
    /// Propensity coefficients when a logistic model was fitted.
    pub phi: Option<Vec<f64>>,
    /// Model-based covariance of `(β, ψ)`, in that order (Q-learning).
    pub coef_covariance: Option<Matrix>,
    pub phi_covariance: Option<Matrix>,
    /// The response regressed at this stage (Y at stage K, a pseudo-outcome
    /// before that).
    pub response: Vec<f64>,
    pub residuals: Vec<f64>,
    pub propensities: Option<Vec<f64>>,
    /// Count of fitted propensities outside [1e-6, 1 − 1e-6].
    pub extreme_propensities: usize,
}

/// Stage fits in stage order plus the estimated regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeFit {
    pub stages: Vec<StageFit>,
    pub regime: Regime,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        Dataset::new(
            vec![1],
            vec![
                Trajectory {
                    states: vec![vec![0.5]],
                    actions: vec![1],
                    outcome: 2.0,
                },
                Trajectory {
                    states: vec![vec![-1.0]],
                    actions: vec![0],
                    outcome: 1.0,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn constant_design() {
        let x = build_design(&toy(), 1, &FeatureMap::parse(&["1"]).unwrap()).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn state_design() {
        let x = build_design(&toy(), 1, &FeatureMap::parse(&["1", "s1_1"]).unwrap()).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.5, 1.0, -1.0]);
    }

    #[test]
    fn design_rejects_future() {
        assert!(build_design(&toy(), 1, &FeatureMap::parse(&["a1"]).unwrap()).is_err());
        assert!(build_design(&toy(), 2, &FeatureMap::parse(&["1"]).unwrap()).is_err());
    }

    #[test]
    fn dataset_validation() {
        let bad = Trajectory {
            states: vec![vec![0.0]],
            actions: vec![2],
            outcome: 0.0,
        };
        assert!(Dataset::new(vec![1], vec![bad]).is_err());
        let short = Trajectory {
            states: vec![vec![0.0, 1.0]],
            actions: vec![0],
            outcome: 0.0,
        };
        assert!(Dataset::new(vec![1], vec![short]).is_err());
        assert_eq!(toy().column_names(), vec!["s1_1", "a1", "y"]);
    }

    fn rule(psi: Vec<f64>) -> Regime {
        Regime::new(vec![DecisionRule::new(FeatureMap::parse(&["1", "s1_1"]).unwrap(), psi).unwrap()])
    }

    #[test]
    fn regime_decisions() {
        let positive = Regime::new(vec![DecisionRule::new(FeatureMap::parse(&["1"]).unwrap(), vec![3.2]).unwrap()]);
        assert_eq!(apply_regime(&positive, 1, &[vec![0.0]], &[]), 1);
        let zero = Regime::new(vec![DecisionRule::new(FeatureMap::parse(&["1"]).unwrap(), vec![0.0]).unwrap()]);
        assert_eq!(apply_regime(&zero, 1, &[vec![0.0]], &[]), 0);
        // treat below a CD4 count of 250
        let cd4 = rule(vec![250.0, -1.0]);
        assert_eq!(apply_regime(&cd4, 1, &[vec![249.0]], &[]), 1);
        assert_eq!(apply_regime(&cd4, 1, &[vec![251.0]], &[]), 0);
        assert_eq!(cd4.rules[0].threshold(), Some(250.0));
    }

    #[test]
    fn rule_length_checked() {
        assert!(DecisionRule::new(FeatureMap::parse(&["1", "s1_1"]).unwrap(), vec![1.0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn positive_rescaling_keeps_decisions(p0 in -5.0f64..5.0, p1 in -5.0f64..5.0, c in 0.001f64..1000.0, s in -10.0f64..10.0) {
                let a = rule(vec![p0, p1]);
                let b = rule(vec![c * p0, c * p1]);
                prop_assert_eq!(apply_regime(&a, 1, &[vec![s]], &[]), apply_regime(&b, 1, &[vec![s]], &[]));
            }

            #[test]
            fn design_is_row_local(vals in proptest::collection::vec(-5.0f64..5.0, 2..20), rot in 0usize..20) {
                let trajs: Vec<Trajectory> = vals.iter().map(|&v| Trajectory { states: vec![vec![v]], actions: vec![0], outcome: 0.0 }).collect();
                let mut rotated = trajs.clone();
                let r = rot % trajs.len();
                rotated.rotate_left(r);
                let fm = FeatureMap::parse(&["1", "s1_1", "s1_1^2"]).unwrap();
                let x = build_design(&Dataset::new(vec![1], trajs).unwrap(), 1, &fm).unwrap();
                let y = build_design(&Dataset::new(vec![1], rotated).unwrap(), 1, &fm).unwrap();
                for i in 0..x.rows() {
                    prop_assert_eq!(y.row(i), x.row((i + r) % x.rows()));
                }
            }
        }
    }
}
