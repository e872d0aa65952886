use dtr_core::alearn::alearn_fit;
use dtr_core::data::{read_dataset_csv, write_dataset_csv};
use dtr_core::evaluate::{run_mc_study, StudyConfig, ValueMethod};
use dtr_core::numeric::make_stream;
use dtr_core::qlearn::{qlearn_fit, QOptions};
use dtr_core::scenarios::{MoodieParams, Policy, Scenario};
use dtr_core::Error;

#[test]
fn moodie_csv_round_trip_preserves_fits() {
    let scen = Scenario::Moodie(MoodieParams::default());
    let (data, _) = scen.simulate(500, &mut make_stream(3, 0), Policy::Observational).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("moodie.csv");
    write_dataset_csv(&path, &data, &["seed=3".to_string()]).unwrap();
    let back = read_dataset_csv(&path, None).unwrap();
    assert_eq!(back, data);
    let specs = scen.working_specs();
    assert_eq!(
        qlearn_fit(&back, &specs, &QOptions::default()).unwrap(),
        qlearn_fit(&data, &specs, &QOptions::default()).unwrap()
    );
    assert_eq!(alearn_fit(&back, &specs).unwrap(), alearn_fit(&data, &specs).unwrap());
}

#[test]
fn study_is_reproducible() {
    let mut cfg = StudyConfig::new(Scenario::TwoDecision(Default::default()), 150, 40, 77);
    cfg.value = ValueMethod::Gcomp { b: 500 };
    let a = run_mc_study(&cfg).unwrap();
    let b = run_mc_study(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_reps_csv(&mut ca).unwrap();
    b.write_reps_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
    let text = String::from_utf8(ca).unwrap();
    assert!(text.starts_with("rep,estimator,psi_1,psi_2,psi_3,psi_4,psi_5,value,failed"));
    assert_eq!(text.lines().count(), 1 + 2 * 40);
}

#[test]
fn study_prefix_matches_shorter_study() {
    // replication r depends only on its own streams
    let long = run_mc_study(&StudyConfig::new(Scenario::OneDecision(Default::default()), 100, 30, 5)).unwrap();
    let short = run_mc_study(&StudyConfig::new(Scenario::OneDecision(Default::default()), 100, 10, 5)).unwrap();
    assert_eq!(long.records[..10], short.records[..]);
}

#[test]
fn study_config_rejects_unknown_keys() {
    let ok = r#"{"scenario": {"kind": "moodie"}, "n": 1000, "reps": 5}"#;
    let cfg: StudyConfig = serde_json::from_str(ok).unwrap();
    assert_eq!(cfg.scenario, Scenario::Moodie(MoodieParams::default()));
    let bad = r#"{"scenario": {"kind": "moodie"}, "n": 1000, "repz": 5}"#;
    assert!(serde_json::from_str::<StudyConfig>(bad).is_err());
    let zero = StudyConfig::new(Scenario::Moodie(MoodieParams::default()), 1000, 0, 0);
    assert!(matches!(run_mc_study(&zero), Err(Error::Spec(_))));
}

#[test]
fn truth_summary_in_results() {
    let r = run_mc_study(&StudyConfig::new(Scenario::Moodie(MoodieParams::default()), 300, 4, 1)).unwrap();
    assert_eq!(r.true_psi, vec![250.0, -1.0, 720.0, -2.0]);
    assert!((r.h_opt - 1120.0).abs() < 1e-9);
    assert_eq!(r.completed + r.failed, 4);
}
