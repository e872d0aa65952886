//! Subcommand bodies. Every output starts with a provenance record: a `#`
//! comment line in CSVs, a `provenance` object in JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dtr_core::alearn::alearn_fit;
use dtr_core::calibrate::{calibrate_equiv_misspec, check_tstat_balance};
use dtr_core::data::{read_dataset_csv, write_dataset, Dataset, Regime, RegimeFit};
use dtr_core::evaluate::{run_mc_study, value_analytic, value_gcomputation, Estimators};
use dtr_core::numeric::make_stream;
use dtr_core::qlearn::{qlearn_fit, QOptions};
use dtr_core::scenarios::{derive_stage1_truth, true_regime, Policy, Scenario};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{CliError, CliResult, Config, ValueKind};

pub struct Context {
    pub cfg: Config,
    /// Directory of the config file.
    pub base: PathBuf,
    pub out_dir: PathBuf,
}

const TOOL: &str = concat!("dtr ", env!("CARGO_PKG_VERSION"));

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

impl Context {
    /// Hash of the resolved config, plus any input file contents.
    fn config_hash(&self, inputs: &[&[u8]]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.cfg).expect("config serializes"));
        for bytes in inputs {
            h.update(bytes);
        }
        format!("sha256:{:x}", h.finalize())
    }

    fn provenance_line(&self, hash: &str) -> String {
        format!("{TOOL} config_hash={hash}")
    }

    fn output(&self, name: &str) -> CliResult<(PathBuf, BufWriter<File>)> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| io_err(&self.out_dir, e))?;
        let path = self.out_dir.join(name);
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        Ok((path, BufWriter::new(file)))
    }

    fn write_json(&self, name: &str, hash: &str, body: impl Serialize) -> CliResult<()> {
        let doc = json!({
            "provenance": { "tool": TOOL, "config_hash": hash },
            "result": body,
        });
        let (path, mut w) = self.output(name)?;
        serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| io_err(&path, e))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))
    }

    /// CSV with a provenance comment line; rows are already formatted.
    fn write_csv(&self, name: &str, hash: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let (path, mut w) = self.output(name)?;
        writeln!(w, "# {}", self.provenance_line(hash)).map_err(|e| io_err(&path, e))?;
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(header).map_err(|e| io_err(&path, e))?;
        for r in rows {
            csv.write_record(r).map_err(|e| io_err(&path, e))?;
        }
        csv.flush().map_err(|e| io_err(&path, e))
    }
}

pub fn simulate(ctx: &Context) -> CliResult<()> {
    let s = ctx.cfg.section(&ctx.cfg.simulate, "simulate")?;
    let (data, _) = ctx
        .cfg
        .scenario
        .simulate(s.n, &mut make_stream(ctx.cfg.seed, 0), Policy::Observational)
        .map_err(|e| CliError::from_core("simulate", e))?;
    let hash = ctx.config_hash(&[]);
    let (path, mut w) = ctx.output("dataset.csv")?;
    write_dataset(&mut w, &data, &[ctx.provenance_line(&hash)]).map_err(|e| io_err(&path, e))?;
    w.flush().map_err(|e| io_err(&path, e))
}

fn residual_rows(name: &str, fit: &RegimeFit, rows: &mut Vec<Vec<String>>) {
    for st in &fit.stages {
        for (i, r) in st.residuals.iter().enumerate() {
            rows.push(vec![name.to_string(), st.stage.to_string(), (i + 1).to_string(), r.to_string()]);
        }
    }
}

pub fn fit(ctx: &Context) -> CliResult<()> {
    let f = ctx.cfg.section(&ctx.cfg.fit, "fit")?;
    let path = ctx.base.join(&f.data);
    let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
    let data: Dataset = read_dataset_csv(&path, Some(&ctx.cfg.scenario.state_dims()))
        .map_err(|e| CliError::Config(format!("fit.data: {e}")))?;
    let specs = f.specs.clone().unwrap_or_else(|| ctx.cfg.scenario.working_specs());
    let q = matches!(f.estimator, Estimators::Qlearn | Estimators::Both)
        .then(|| qlearn_fit(&data, &specs, &QOptions::default()))
        .transpose()
        .map_err(|e| CliError::from_core("fit", e))?;
    let a = matches!(f.estimator, Estimators::Alearn | Estimators::Both)
        .then(|| alearn_fit(&data, &specs))
        .transpose()
        .map_err(|e| CliError::from_core("fit", e))?;
    let hash = ctx.config_hash(&[&bytes]);
    ctx.write_json("fit.json", &hash, json!({ "qlearn": q, "alearn": a }))?;
    let mut rows = Vec::new();
    if let Some(q) = &q {
        residual_rows("qlearn", q, &mut rows);
    }
    if let Some(a) = &a {
        residual_rows("alearn", a, &mut rows);
    }
    ctx.write_csv("residuals.csv", &hash, &["estimator", "stage", "row", "residual"], &rows)
}

pub fn value(ctx: &Context) -> CliResult<()> {
    let v = ctx.cfg.section(&ctx.cfg.value, "value")?;
    let scen = &ctx.cfg.scenario;
    let optimal = true_regime(scen).map_err(|e| CliError::from_core("scenario", e))?;
    let regime = v.rules.clone().map(Regime::new).unwrap_or_else(|| optimal.clone());
    let (estimate, se) = match v.method {
        ValueKind::Analytic => (value_analytic(scen, &regime).map_err(|e| CliError::from_core("value", e))?, None),
        ValueKind::Gcomp => value_gcomputation(scen, &regime, v.b, &mut make_stream(ctx.cfg.seed, 0))
            .map_err(|e| CliError::from_core("value", e))?,
    };
    let h_opt = value_analytic(scen, &optimal).map_err(|e| CliError::from_core("scenario", e))?;
    let hash = ctx.config_hash(&[]);
    ctx.write_json(
        "value.json",
        &hash,
        json!({
            "scenario": scen.name(),
            "method": v.method,
            "regime": regime,
            "value": estimate,
            "se": se,
            "optimal_value": h_opt,
        }),
    )
}

pub fn study(ctx: &Context) -> CliResult<()> {
    let cfg = ctx.cfg.study_config()?;
    let results = run_mc_study(&cfg).map_err(|e| CliError::from_core("study", e))?;
    let hash = ctx.config_hash(&[]);
    ctx.write_json("study.json", &hash, &results)?;
    let (path, mut w) = ctx.output("study_reps.csv")?;
    writeln!(w, "# {}", ctx.provenance_line(&hash)).map_err(|e| io_err(&path, e))?;
    results.write_reps_csv(&mut w).map_err(|e| io_err(&path, e))?;
    w.flush().map_err(|e| io_err(&path, e))
}

pub fn calibrate(ctx: &Context) -> CliResult<()> {
    let section = ctx.cfg.section(&ctx.cfg.calibrate, "calibrate")?;
    let cfg = ctx.cfg.calibration_config()?;
    let cal = calibrate_equiv_misspec(&cfg).map_err(|e| CliError::from_core("calibrate", e))?;
    let check_n = section.check_n.unwrap_or(section.n_cal);
    let mut rows = Vec::with_capacity(cal.table.len());
    for (i, r) in cal.table.iter().enumerate() {
        let balance = if section.check_reps == 0 {
            String::new()
        } else {
            // seeds offset from the grid's so the check uses fresh data
            let seed = ctx.cfg.seed.wrapping_add(1 + i as u64);
            check_tstat_balance(&cfg.scenario, r.beta, r.phi, check_n, section.check_reps, seed)
                .map_err(|e| CliError::from_core("calibrate", e))?
                .rel_diff
                .to_string()
        };
        rows.push(vec![
            r.phi.to_string(),
            r.beta.to_string(),
            r.ratio.to_string(),
            r.fitted_ratio.to_string(),
            balance,
        ]);
    }
    let hash = ctx.config_hash(&[]);
    ctx.write_csv("pairing.csv", &hash, &["phi", "beta", "ratio", "fitted_ratio", "t_balance"], &rows)?;
    ctx.write_json(
        "polynomial.json",
        &hash,
        json!({ "polynomial": cal.polynomial, "failed_cells": cal.failed_cells }),
    )
}

pub fn validate(ctx: &Context) -> CliResult<()> {
    let scen = &ctx.cfg.scenario;
    let err = |e| CliError::from_core("scenario", e);
    println!("config ok: scenario {}", scen.name());
    if let Scenario::TwoDecision(p) = scen {
        let (beta1, psi1) = derive_stage1_truth(p).map_err(err)?;
        println!("stage-1 beta: {beta1:?}");
        println!("stage-1 psi: {psi1:?}");
    }
    println!("true psi: {:?}", scen.true_psi().map_err(err)?);
    let optimal = true_regime(scen).map_err(err)?;
    println!("optimal value: {:?}", value_analytic(scen, &optimal).map_err(err)?);
    Ok(())
}
