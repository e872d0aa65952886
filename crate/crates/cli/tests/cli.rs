use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dtr_core::scenarios::{derive_stage1_truth, TwoDecisionParams};

fn dtr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtr")).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const MOODIE_SIM: &str = "version = 1\nseed = 7\n[scenario]\nkind = \"moodie\"\n[simulate]\nn = 1000\n";

#[test]
fn simulate_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.toml", MOODIE_SIM);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = dtr(&["simulate", &cfg, "--out-dir", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (da, db) = (fs::read(a.join("dataset.csv")).unwrap(), fs::read(b.join("dataset.csv")).unwrap());
    assert_eq!(da, db);
    let text = String::from_utf8(da).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with(concat!("# dtr ", env!("CARGO_PKG_VERSION"), " config_hash=sha256:")));
    assert_eq!(lines.next().unwrap(), "s1_1,a1,s2_1,a2,y");
    assert_eq!(lines.count(), 1000);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.toml", MOODIE_SIM);
    let out = |name: &str, extra: &[&str]| {
        let d = dir.path().join(name);
        let mut args = vec!["simulate", cfg.as_str(), "--out-dir", d.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(dtr(&args).status.success());
        fs::read_to_string(d.join("dataset.csv")).unwrap()
    };
    let (base, same, other) = (out("x", &[]), out("y", &["--seed", "7"]), out("z", &["--seed", "8"]));
    assert_eq!(base, same);
    assert_ne!(base.lines().next(), other.lines().next());
    assert_ne!(base.lines().nth(2), other.lines().nth(2));
}

#[test]
fn study_json_schema_and_thread_independence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "study.toml",
        "version = 1\nseed = 3\n[scenario]\nkind = \"one_decision\"\n[study]\nn = 200\nreps = 50\n",
    );
    let run = |name: &str, threads: &str| {
        let d = dir.path().join(name);
        let o = dtr(&["study", &cfg, "--out-dir", d.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", stderr(&o));
        (fs::read(d.join("study.json")).unwrap(), fs::read(d.join("study_reps.csv")).unwrap())
    };
    let (j1, c1) = run("one", "1");
    let (j2, c2) = run("two", "3");
    assert_eq!(j1, j2);
    assert_eq!(c1, c2);
    let v: serde_json::Value = serde_json::from_slice(&j1).unwrap();
    let r = &v["result"];
    assert!(r["mse_ratio"].is_array());
    for est in ["qlearn", "alearn"] {
        assert!(r[est]["R_mean"].is_number(), "{est}");
        assert!(r[est]["R_median"].is_number(), "{est}");
    }
    assert!(v["provenance"]["config_hash"].as_str().unwrap().starts_with("sha256:"));
}

#[test]
fn fit_writes_json_and_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let sim = write(dir.path(), "sim.toml", MOODIE_SIM);
    assert!(dtr(&["simulate", &sim, "--out-dir", dir.path().to_str().unwrap()]).status.success());
    let cfg = write(
        dir.path(),
        "fit.toml",
        "version = 1\n[scenario]\nkind = \"moodie\"\n[fit]\ndata = \"dataset.csv\"\nestimator = \"qlearn\"\n",
    );
    let out = dir.path().join("fit");
    let o = dtr(&["fit", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out.join("fit.json")).unwrap()).unwrap();
    assert_eq!(v["result"]["qlearn"]["stages"].as_array().unwrap().len(), 2);
    assert!(v["result"]["alearn"].is_null());
    let res = fs::read_to_string(out.join("residuals.csv")).unwrap();
    assert_eq!(res.lines().nth(1).unwrap(), "estimator,stage,row,residual");
    assert_eq!(res.lines().count(), 2 + 2000);
}

#[test]
fn fit_with_no_treated_rows_is_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut data = String::from("s1_1,a1,y\n");
    for i in 0..30 {
        data.push_str(&format!("{},0,{}\n", i as f64 / 10.0, i % 7));
    }
    write(dir.path(), "zeros.csv", &data);
    let cfg = write(
        dir.path(),
        "fit.toml",
        "version = 1\n[scenario]\nkind = \"one_decision\"\n[fit]\ndata = \"zeros.csv\"\nestimator = \"qlearn\"\n",
    );
    let o = dtr(&["fit", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("singular"), "{}", stderr(&o));
}

#[test]
fn bad_input_rows_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad.csv", "s1_1,a1,y\n0.1,1,2\n0.2,2,3\n");
    let cfg = write(
        dir.path(),
        "fit.toml",
        "version = 1\n[scenario]\nkind = \"one_decision\"\n[fit]\ndata = \"bad.csv\"\n",
    );
    let o = dtr(&["fit", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));
}

#[test]
fn validate_prints_stage1_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "v.toml", "version = 1\n[scenario]\nkind = \"two_decision\"\n");
    let o = dtr(&["validate", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let (beta, psi) = derive_stage1_truth(&TwoDecisionParams::default()).unwrap();
    assert!(out.contains(&format!("stage-1 beta: {beta:?}")), "{out}");
    assert!(out.contains(&format!("stage-1 psi: {psi:?}")), "{out}");
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let step = write(
        dir.path(),
        "c.toml",
        "version = 1\n[scenario]\nkind = \"two_decision\"\n[calibrate]\ngrid = { lo = -1.0, hi = 1.0, step = 0.0 }\n",
    );
    let o = dtr(&["validate", &step]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.step must be > 0"), "{}", stderr(&o));

    let unknown = write(dir.path(), "u.toml", "version = 1\n[scenario]\nkind = \"moodie\"\nsd_s1 = 3.0\n");
    let o = dtr(&["validate", &unknown]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sd_s1"), "{}", stderr(&o));

    let version = write(dir.path(), "v.toml", "version = 2\n[scenario]\nkind = \"moodie\"\n");
    let o = dtr(&["validate", &version]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));

    let missing = write(dir.path(), "m.toml", "version = 1\n[scenario]\nkind = \"moodie\"\n");
    let o = dtr(&["study", &missing]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[study]"), "{}", stderr(&o));
}

#[test]
fn value_of_optimal_and_custom_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "v.toml", "version = 1\n[scenario]\nkind = \"moodie\"\n[value]\n");
    let o = dtr(&["value", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("value.json")).unwrap()).unwrap();
    assert_eq!(v["result"]["value"].as_f64().unwrap(), v["result"]["optimal_value"].as_f64().unwrap());
    assert!((v["result"]["value"].as_f64().unwrap() - 1120.0).abs() < 1e-9);

    let never = write(
        dir.path(),
        "n.toml",
        "version = 1\nseed = 2\n[scenario]\nkind = \"moodie\"\n[value]\nmethod = \"gcomp\"\nb = 20000\n\
         [[value.rules]]\nfeatures = [\"1\"]\npsi = [-1.0]\n[[value.rules]]\nfeatures = [\"1\"]\npsi = [-1.0]\n",
    );
    let o = dtr(&["value", &never, "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("value.json")).unwrap()).unwrap();
    assert!(v["result"]["value"].as_f64().unwrap() < 1120.0);
    assert!(v["result"]["se"].as_f64().unwrap() > 0.0);
}

#[test]
fn calibrate_emits_pairing_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "version = 1\nseed = 5\n[scenario]\nkind = \"two_decision\"\n[calibrate]\n\
         grid = { lo = -1.0, hi = 1.0, step = 0.25 }\nn_cal = 2000\npoly_max_degree = 4\nadj_r2_target = 0.9\n\
         check_reps = 5\ncheck_n = 1000\n",
    );
    let o = dtr(&["calibrate", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(dir.path().join("pairing.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("# dtr "));
    assert_eq!(lines[1], "phi,beta,ratio,fitted_ratio,t_balance");
    assert_eq!(lines.len(), 2 + 9);
    let zero: Vec<&str> = lines.iter().find(|l| l.starts_with("0,")).unwrap().split(',').collect();
    assert_eq!(zero[1], "0");
    let poly: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("polynomial.json")).unwrap()).unwrap();
    assert!(poly["result"]["polynomial"]["coefficients"].is_array());
}
