//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use dtr_core::data::{DecisionRule, Dataset, FeatureMap, Regime, Trajectory};
use dtr_core::numeric::RngStream;
use dtr_core::scenarios::{MoodieParams, Scenario, TwoDecisionParams};

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `∫ g(x) φ((x − m)/sd)/sd dx`, split at `kinks` so each piece is smooth.
pub fn normal_expectation(g: impl Fn(f64) -> f64, m: f64, sd: f64, kinks: &[f64]) -> f64 {
    let (lo, hi) = (m - 14.0 * sd, m + 14.0 * sd);
    let mut cuts = vec![lo];
    cuts.extend(kinks.iter().copied().filter(|k| *k > lo && *k < hi));
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    let dens = |x: f64| {
        let z = (x - m) / sd;
        (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    // endpoints pulled inside so a jump at a cut is never sampled
    cuts.windows(2)
        .map(|w| {
            let eps = 1e-10 * (w[1] - w[0]);
            simpson(|x| g(x) * dens(x), w[0] + eps, w[1] - eps, 4000)
        })
        .sum()
}

/// Stage-1 truth of the two-decision model by direct integration over S₂.
pub fn stage1_truth_quadrature(p: &TwoDecisionParams) -> ([f64; 2], [f64; 2]) {
    let q = |s1: f64, a1: f64| {
        let d = &p.delta1;
        let m = d[0] + d[1] * s1 + d[2] * a1 + d[3] * s1 * a1;
        let sd = p.s2_var.sqrt();
        let (b, c) = (&p.beta2, &p.psi2);
        let contrast = move |s2: f64| c[0] + c[1] * a1 + c[2] * s2;
        let g = |s2: f64| {
            b[0] + b[1] * s1 + b[2] * a1 + b[3] * s1 * a1 + b[4] * s2 + b[5] * s2 * s2
                + contrast(s2).max(0.0)
        };
        let kinks: Vec<f64> = if c[2] != 0.0 {
            vec![-(c[0] + c[1] * a1) / c[2]]
        } else {
            vec![]
        };
        normal_expectation(g, m, sd, &kinks)
    };
    let (q00, q10, q01, q11) = (q(0.0, 0.0), q(1.0, 0.0), q(0.0, 1.0), q(1.0, 1.0));
    ([q00, q10 - q00], [q01 - q00, q11 - q10 - q01 + q00])
}

/// Parameter settings used to compare the stage-1 truth with quadrature.
pub fn stage1_grid() -> Vec<TwoDecisionParams> {
    let mut out = Vec::new();
    let psis = [[1.0, 0.25, 0.5], [-1.0, 0.5, -0.5], [0.2, -0.3, 0.0], [0.0, 0.0, 2.0]];
    let deltas = [[0.0, 0.5, -0.75, 0.25], [1.0, -0.5, 0.3, 0.0]];
    for psi2 in psis {
        for delta1 in deltas {
            for beta25 in [-1.0, -0.5, 0.0, 0.5, 1.0] {
                for s2_var in [0.5, 2.0, 5.0] {
                    let mut p = TwoDecisionParams::default();
                    p.psi2 = psi2;
                    p.delta1 = delta1;
                    p.beta2[5] = beta25;
                    p.s2_var = s2_var;
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Monte Carlo `E[max_a₂ Q₂ | s₁, a₁]` for the linear stage-2 model of the
/// induced-Q closed form; returns (mean, standard error).
#[allow(clippy::too_many_arguments)]
pub fn induced_q1_mc(
    s1: f64,
    a1: f64,
    beta21: [f64; 3],
    beta22: f64,
    psi21: [f64; 3],
    psi22: f64,
    gamma: [f64; 3],
    sigma: f64,
    draws: usize,
    rng: &mut RngStream,
) -> (f64, f64) {
    let k = [1.0, s1, a1];
    let dot3 = |v: &[f64; 3]| k[0] * v[0] + k[1] * v[1] + k[2] * v[2];
    let (kb, kp, mean) = (dot3(&beta21), dot3(&psi21), dot3(&gamma));
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..draws {
        let s2 = mean + sigma * rng.standard_normal();
        let v = kb + beta22 * s2 + (kp + psi22 * s2).max(0.0);
        sum += v;
        sum2 += v * v;
    }
    let m = sum / draws as f64;
    let var = (sum2 / draws as f64 - m * m) * draws as f64 / (draws - 1) as f64;
    (m, (var / draws as f64).sqrt())
}

fn rule(terms: &[&str], psi: Vec<f64>) -> DecisionRule {
    DecisionRule::new(FeatureMap::parse(terms).unwrap(), psi).unwrap()
}

/// A random regime in the analytic family of each scenario.
pub fn random_regime(scenario: &Scenario, rng: &mut RngStream) -> Regime {
    match scenario {
        Scenario::OneDecision(_) => Regime::new(vec![rule(
            &["1", "s1_1"],
            vec![rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)],
        )]),
        Scenario::TwoDecision(_) => Regime::new(vec![
            rule(&["1", "s1_1"], vec![rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)]),
            rule(
                &["1", "a1", "s2_1"],
                vec![rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0)],
            ),
        ]),
        Scenario::Moodie(_) => {
            // thresholds over the bulk of the CD4 distribution, either direction
            let mut threshold_rule = |lo: f64, hi: f64, var: &str| {
                let t = lo + (hi - lo) * rng.uniform();
                let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                let scale = sign * (0.5 + 1.5 * rng.uniform());
                rule(&["1", var], vec![scale * t, -scale])
            };
            let r1 = threshold_rule(200.0, 700.0, "s1_1");
            let r2 = threshold_rule(250.0, 900.0, "s2_1");
            Regime::new(vec![r1, r2])
        }
    }
}

pub fn all_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::OneDecision(Default::default()),
        Scenario::TwoDecision(Default::default()),
        Scenario::Moodie(MoodieParams::default()),
    ]
}

/// Two-decision data with constant known propensities and an arbitrary
/// outcome surface.
pub fn constant_propensity_dataset(n: usize, pi: [f64; 2], rng: &mut RngStream) -> Dataset {
    let coef: Vec<f64> = (0..8).map(|_| rng.normal(0.0, 2.0)).collect();
    let trajs = (0..n)
        .map(|_| {
            let s1 = rng.normal(0.0, 1.0);
            let a1 = u8::from(rng.uniform() < pi[0]);
            let s2 = rng.normal(0.5 * s1 - 0.3 * f64::from(a1), 1.2);
            let a2 = u8::from(rng.uniform() < pi[1]);
            let (fa1, fa2) = (f64::from(a1), f64::from(a2));
            let y = coef[0] + coef[1] * s1 + coef[2] * fa1 + coef[3] * s2 * s2
                + fa2 * (coef[4] + coef[5] * s2 + coef[6] * s1 * s1)
                + coef[7] * fa1 * s1
                + rng.normal(0.0, 1.5);
            Trajectory {
                states: vec![vec![s1], vec![s2]],
                actions: vec![a1, a2],
                outcome: y,
            }
        })
        .collect();
    Dataset::new(vec![1, 1], trajs).unwrap()
}
