//! Basis terms for h-, contrast- and propensity-model design rows.
//!
//! Terms use the same names as the CSV columns: `s{k}_{j}` is component `j`
//! of the stage-`k` state, `a{k}` the stage-`k` action, `1` the constant.
//! Products are written `x*y` and squares `s{k}_{j}^2`. Stage and component
//! numbers are 1-based.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Constant,
    State { stage: usize, component: usize },
    Action { stage: usize },
    Square { stage: usize, component: usize },
    Product(Box<Term>, Box<Term>),
}

impl Term {
    pub fn state(stage: usize, component: usize) -> Self {
        Term::State { stage, component }
    }

    pub fn action(stage: usize) -> Self {
        Term::Action { stage }
    }

    pub fn square(stage: usize, component: usize) -> Self {
        Term::Square { stage, component }
    }

    pub fn product(a: Term, b: Term) -> Self {
        Term::Product(Box::new(a), Box::new(b))
    }

    /// Evaluates on a history: `states[k-1]` is the stage-k state and
    /// `actions[k-1]` the stage-k action. Callers validate first.
    pub fn eval(&self, states: &[Vec<f64>], actions: &[u8]) -> f64 {
        match self {
            Term::Constant => 1.0,
            Term::State { stage, component } => states[stage - 1][component - 1],
            Term::Action { stage } => f64::from(actions[stage - 1]),
            Term::Square { stage, component } => {
                let v = states[stage - 1][component - 1];
                v * v
            }
            Term::Product(a, b) => a.eval(states, actions) * b.eval(states, actions),
        }
    }

    /// Checks that the term only reads history available when decision
    /// `stage` is made: states 1..=stage and actions 1..stage.
    pub fn validate(&self, stage: usize, state_dims: &[usize]) -> Result<()> {
        let check_state = |k: usize, j: usize| -> Result<()> {
            if k == 0 || j == 0 {
                return Err(Error::Spec(format!("{self}: indices are 1-based")));
            }
            if k > stage {
                return Err(Error::Spec(format!(
                    "{self} reads the stage-{k} state, not yet observed at decision {stage}"
                )));
            }
            match state_dims.get(k - 1) {
                Some(&d) if j <= d => Ok(()),
                Some(&d) => Err(Error::Spec(format!(
                    "{self}: stage-{k} state has {d} components"
                ))),
                None => Err(Error::Spec(format!("{self}: no stage {k} in the data"))),
            }
        };
        match self {
            Term::Constant => Ok(()),
            Term::State { stage: k, component: j } | Term::Square { stage: k, component: j } => {
                check_state(*k, *j)
            }
            Term::Action { stage: k } => {
                if *k == 0 || *k >= stage {
                    Err(Error::Spec(format!(
                        "{self} is not part of the history at decision {stage}"
                    )))
                } else {
                    Ok(())
                }
            }
            Term::Product(a, b) => {
                a.validate(stage, state_dims)?;
                b.validate(stage, state_dims)
            }
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Constant => write!(f, "1"),
            Term::State { stage, component } => write!(f, "s{stage}_{component}"),
            Term::Action { stage } => write!(f, "a{stage}"),
            Term::Square { stage, component } => write!(f, "s{stage}_{component}^2"),
            Term::Product(a, b) => write!(f, "{a}*{b}"),
        }
    }
}

fn parse_atom(s: &str) -> Result<Term> {
    let bad = || Error::Spec(format!("unrecognised term `{s}`"));
    let s = s.trim();
    if s == "1" {
        return Ok(Term::Constant);
    }
    if let Some(rest) = s.strip_prefix('a') {
        return rest.parse().map(Term::action).map_err(|_| bad());
    }
    if let Some(rest) = s.strip_prefix('s') {
        let (body, squared) = match rest.strip_suffix("^2") {
            Some(b) => (b, true),
            None => (rest, false),
        };
        let (k, j) = body.split_once('_').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        let j: usize = j.parse().map_err(|_| bad())?;
        return Ok(if squared {
            Term::square(k, j)
        } else {
            Term::state(k, j)
        });
    }
    Err(bad())
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('*');
        let first = parse_atom(parts.next().unwrap_or(""))?;
        parts.try_fold(first, |acc, p| Ok(Term::product(acc, parse_atom(p)?)))
    }
}

/// Ordered list of basis terms; one design column per term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureMap {
    terms: Vec<Term>,
}

impl FeatureMap {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    /// Parses a list like `["1", "s1_1", "a1*s2_1"]`.
    pub fn parse<S: AsRef<str>>(terms: &[S]) -> Result<Self> {
        terms
            .iter()
            .map(|t| t.as_ref().parse())
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn validate(&self, stage: usize, state_dims: &[usize]) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Spec("feature map has no terms".into()));
        }
        self.terms.iter().try_for_each(|t| t.validate(stage, state_dims))
    }

    pub fn eval_into(&self, states: &[Vec<f64>], actions: &[u8], out: &mut Vec<f64>) {
        out.extend(self.terms.iter().map(|t| t.eval(states, actions)));
    }

    pub fn eval(&self, states: &[Vec<f64>], actions: &[u8]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.terms.len());
        self.eval_into(states, actions, &mut v);
        v
    }

    /// True when every term here also appears in `other`.
    pub fn is_subset_of(&self, other: &FeatureMap) -> bool {
        self.terms.iter().all(|t| other.terms.contains(t))
    }
}

impl TryFrom<Vec<String>> for FeatureMap {
    type Error = Error;
    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::parse(&v)
    }
}

impl From<FeatureMap> for Vec<String> {
    fn from(fm: FeatureMap) -> Self {
        fm.terms.iter().map(ToString::to_string).collect()
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.terms.iter().map(ToString::to_string).collect();
        write!(f, "[{}]", names.join(", "))
    }
}
