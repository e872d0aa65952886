//! Browser bindings. Each export returns a JSON string; the `*_json`
//! functions behind them are plain Rust so they can be tested natively.

use dtr_core::alearn::alearn_fit;
use dtr_core::data::{DecisionRule, FeatureMap, Regime};
use dtr_core::evaluate::value_analytic;
use dtr_core::numeric::make_stream;
use dtr_core::qlearn::{qlearn_fit, QOptions};
use dtr_core::scenarios::{induced_q1_closed_form, true_regime, Policy, Scenario};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn scenario(kind: &str) -> Result<Scenario, String> {
    match kind {
        "one_decision" => Ok(Scenario::OneDecision(Default::default())),
        "two_decision" => Ok(Scenario::TwoDecision(Default::default())),
        "moodie" => Ok(Scenario::Moodie(Default::default())),
        other => Err(format!("unknown scenario {other:?}")),
    }
}

fn grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>, String> {
    if points < 2 || points > 10_000 || !(lo < hi) {
        return Err("need lo < hi and 2..=10000 points".into());
    }
    Ok((0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect())
}

/// Value of the regime that follows the optimal rules except at `stage`,
/// where it treats on one side of threshold `t` (the side the optimal rule
/// treats), for `t` on a grid.
pub fn threshold_value_curve_json(kind: &str, stage: usize, lo: f64, hi: f64, points: usize) -> Result<String, String> {
    let scen = scenario(kind)?;
    let optimal = true_regime(&scen).map_err(|e| e.to_string())?;
    if stage == 0 || stage > scen.stages() {
        return Err(format!("stage must be 1..={}", scen.stages()));
    }
    let rule = optimal.rule(stage);
    let terms: Vec<String> = rule.features.terms().iter().map(|t| t.to_string()).collect();
    // the thresholded variable is the last term; middle terms are zeroed
    let slope = *rule.psi.last().unwrap();
    if slope == 0.0 || kind == "two_decision" && stage == 1 {
        return Err("this rule has no continuous threshold".into());
    }
    let sign = slope.signum();
    let mut values = Vec::with_capacity(points);
    let ts = grid(lo, hi, points)?;
    for &t in &ts {
        let mut psi = vec![0.0; rule.psi.len()];
        psi[0] = -sign * t;
        *psi.last_mut().unwrap() = sign;
        let fm = FeatureMap::parse(&terms).map_err(|e| e.to_string())?;
        let mut rules = optimal.rules.clone();
        rules[stage - 1] = DecisionRule::new(fm, psi).map_err(|e| e.to_string())?;
        values.push(value_analytic(&scen, &Regime::new(rules)).map_err(|e| e.to_string())?);
    }
    let h_opt = value_analytic(&scen, &optimal).map_err(|e| e.to_string())?;
    Ok(json!({
        "thresholds": ts,
        "values": values,
        "optimal_threshold": rule.threshold(),
        "optimal_value": h_opt,
        "treat_above": sign > 0.0,
    })
    .to_string())
}

/// Simulates `n` trajectories and fits both estimators with the scenario's
/// working models.
pub fn simulate_and_fit_json(kind: &str, n: usize, seed: u64) -> Result<String, String> {
    let scen = scenario(kind)?;
    if !(20..=100_000).contains(&n) {
        return Err("n must lie in 20..=100000".into());
    }
    let (data, _) = scen
        .simulate(n, &mut make_stream(seed, 0), Policy::Observational)
        .map_err(|e| e.to_string())?;
    let specs = scen.working_specs();
    let summary = |fit: dtr_core::Result<dtr_core::data::RegimeFit>| match fit {
        Ok(f) => {
            let value = value_analytic(&scen, &f.regime).ok();
            json!({ "psi": f.regime.psi(), "value": value })
        }
        Err(e) => json!({ "error": e.to_string() }),
    };
    let optimal = true_regime(&scen).map_err(|e| e.to_string())?;
    Ok(json!({
        "scenario": scen.name(),
        "n": n,
        "true_psi": scen.true_psi().map_err(|e| e.to_string())?,
        "optimal_value": value_analytic(&scen, &optimal).map_err(|e| e.to_string())?,
        "qlearn": summary(qlearn_fit(&data, &specs, &QOptions::default())),
        "alearn": summary(alearn_fit(&data, &specs)),
    })
    .to_string())
}

/// `E{V₂ | s₁, a₁}` on an `s₁` grid for both `a₁`, for a stage-2 model with
/// slope `psi22` on `s₂` in the contrast and `S₂ | s₁, a₁ ~ N(s₁/2 − a₁/2, σ²)`.
/// The curvature in `s₁` is what a linear stage-1 model misses.
pub fn induced_q1_curve_json(psi22: f64, sigma: f64, lo: f64, hi: f64, points: usize) -> Result<String, String> {
    let (beta21, beta22) = ([1.0, 0.5, -0.25], 0.5);
    let psi21 = [0.0, -0.5, 0.3];
    let gamma = [0.0, 0.5, -0.5];
    let s1 = grid(lo, hi, points)?;
    let curve = |a1: f64| -> Result<Vec<f64>, String> {
        s1.iter()
            .map(|&s| induced_q1_closed_form(s, a1, beta21, beta22, psi21, psi22, gamma, sigma).map_err(|e| e.to_string()))
            .collect()
    };
    Ok(json!({ "s1": s1, "a1_0": curve(0.0)?, "a1_1": curve(1.0)? }).to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn threshold_value_curve(kind: &str, stage: usize, lo: f64, hi: f64, points: usize) -> Result<String, JsValue> {
    js(threshold_value_curve_json(kind, stage, lo, hi, points))
}

#[wasm_bindgen]
pub fn simulate_and_fit(kind: &str, n: usize, seed: u32) -> Result<String, JsValue> {
    js(simulate_and_fit_json(kind, n, u64::from(seed)))
}

#[wasm_bindgen]
pub fn induced_q1_curve(psi22: f64, sigma: f64, lo: f64, hi: f64, points: usize) -> Result<String, JsValue> {
    js(induced_q1_curve_json(psi22, sigma, lo, hi, points))
}
