use dtr_core::calibrate::{
    calibrate_equiv_misspec, check_tstat_balance, fit_polynomial_of_degree, CalibrationConfig, Grid,
};
use dtr_core::numeric::make_stream;
use dtr_core::scenarios::{OneDecisionParams, Scenario, TwoDecisionParams};

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn null_pair_matches_folded_normal() {
    // under β⁰ = φ⁰ = 0 both Wald statistics are asymptotically N(0, 1),
    // whose absolute value has mean √(2/π)
    let base = Scenario::TwoDecision(TwoDecisionParams::default());
    let reps = 1500;
    let t = check_tstat_balance(&base, 0.0, 0.0, 2000, reps, 21).unwrap();
    let folded = (2.0 / std::f64::consts::PI).sqrt();
    // sd of |Z| is √(1 − 2/π)
    let se = (1.0 - 2.0 / std::f64::consts::PI).sqrt() / (reps as f64).sqrt();
    assert!((t.mean_abs_t_beta - folded).abs() < 4.0 * se, "{t:?}");
    assert!((t.mean_abs_t_phi - folded).abs() < 4.0 * se, "{t:?}");
    assert!(t.rel_diff < 0.05 + 4.0 * se * 2.0_f64.sqrt() / folded, "{t:?}");
}

#[test]
fn pairing_is_odd_when_ratio_surface_is_even() {
    let mut cfg = CalibrationConfig::new(Scenario::OneDecision(OneDecisionParams::default()));
    cfg.grid = Grid { lo: -1.0, hi: 1.0, step: 0.1 };
    cfg.n_cal = 5000;
    cfg.poly_max_degree = 8;
    cfg.adj_r2_target = 0.95;
    cfg.master_seed = 4;
    let cal = calibrate_equiv_misspec(&cfg).unwrap();
    let rows = &cal.table;
    let g = rows.len();
    assert_eq!(g, 21);
    let scale = mean(&rows.iter().map(|r| r.ratio).collect::<Vec<_>>());
    let evenness = (0..g).map(|i| (rows[i].ratio - rows[g - 1 - i].ratio).abs()).fold(0.0, f64::max) / scale;
    assert!(evenness < 0.05, "ratio surface not even: {evenness}");
    // odd coefficients of the fit are then small, so β⁰(−φ) ≈ −β⁰(φ)
    for i in 0..g {
        let (lo, hi) = (&rows[i], &rows[g - 1 - i]);
        assert!((lo.phi + hi.phi).abs() < 1e-12);
        assert!((lo.beta + hi.beta).abs() < 0.05 * hi.beta.abs().max(0.05), "{lo:?} {hi:?}");
    }
}

#[test]
fn pairing_is_stable_under_larger_n_cal() {
    let mut cfg = CalibrationConfig::new(Scenario::TwoDecision(TwoDecisionParams::default()));
    cfg.grid = Grid { lo: -1.0, hi: 1.0, step: 0.2 };
    cfg.n_cal = 2500;
    cfg.master_seed = 8;
    let small = calibrate_equiv_misspec(&cfg).unwrap();
    cfg.n_cal = 10_000;
    let large = calibrate_equiv_misspec(&cfg).unwrap();
    let degree = small.polynomial.degree;

    // bootstrap the β⁰ cells within each φ⁰ row, refitting at the same degree
    let phis: Vec<f64> = small.table.iter().map(|r| r.phi).collect();
    let mut rng = make_stream(99, 0);
    let boots: Vec<Vec<f64>> = (0..200)
        .map(|_| {
            let ratios: Vec<f64> = small
                .cell_ratios
                .iter()
                .map(|row| {
                    let draw: Vec<f64> = (0..row.len())
                        .map(|_| row[(rng.uniform() * row.len() as f64) as usize % row.len()])
                        .collect();
                    mean(&draw)
                })
                .collect();
            let poly = fit_polynomial_of_degree(&phis, &ratios, degree).unwrap();
            phis.iter().map(|&p| p / poly.eval(p)).collect()
        })
        .collect();
    for (j, (s, l)) in small.table.iter().zip(&large.table).enumerate() {
        let col: Vec<f64> = boots.iter().map(|b| b[j]).collect();
        let m = mean(&col);
        let se = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
        // φ⁰ = 0 gives β⁰ = 0 exactly at every n_cal
        let band = (2.0 * se).max(1e-12);
        assert!((s.beta - l.beta).abs() <= band, "φ⁰ = {}: {} vs {} (band {band})", s.phi, s.beta, l.beta);
    }
}
