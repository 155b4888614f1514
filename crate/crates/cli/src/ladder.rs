//! dt-halving convergence ladder. Each rung rebuilds the configured model at
//! half the previous step and re-measures four quantities with known
//! continuum limits; observed orders are log2 ratios between consecutive
//! rungs.

use std::fmt::Write as _;
use std::fs;
use std::sync::Arc;
use std::time::Instant;

use evolab_core::quad::uniform_grid;
use evolab_core::{
    duhamel_frozen_residual, expm_oracle, gamma_evolution, model_operators, perturbed_pair,
    propagate, ModelConfig, OperatorFamily,
};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::outputs::write_text;
use crate::{StudyArgs, BUDGET_ENV};

#[derive(Serialize, Clone)]
pub struct RungRow {
    pub rung: usize,
    pub dt: f64,
    pub n: usize,
    /// Relative endpoint error of the stepped flow for the frozen generator
    /// against the matrix exponential.
    pub propagator_error: f64,
    /// Gap between the directly stepped perturbed flow and its Volterra
    /// reconstruction.
    pub volterra_discrepancy: f64,
    /// Residual of the two-generator Duhamel reconstruction at the horizon.
    pub duhamel_residual: f64,
    /// Evolution-family admissibility of the model observation.
    pub gamma_hat: f64,
}

#[derive(Serialize, Clone)]
pub struct StudyReport {
    pub rungs: Vec<RungRow>,
    /// log2(e_r / e_{r+1}) per metric; null where an error underflows.
    pub propagator_orders: Vec<Option<f64>>,
    pub volterra_orders: Vec<Option<f64>>,
    pub duhamel_orders: Vec<Option<f64>>,
    /// Relative change of gamma_hat between rungs; expected to shrink, not
    /// to follow a fixed order.
    pub gamma_drift: Vec<f64>,
    /// True when the wall-clock budget truncated the ladder.
    pub incomplete: bool,
}

fn rung_metrics(config: &ModelConfig, rung: usize) -> Result<RungRow, String> {
    let mut cfg = config.clone();
    cfg.time.dt = config.time.dt / (1u64 << rung) as f64;
    let horizon = cfg.time.horizon;
    let ops = model_operators(&cfg).map_err(|e| e.to_string())?;
    let fam = &ops.family;
    let n = fam.dim();

    let mut x0 = DVector::from_element(n, 1.0);
    let scale = fam.x_norm.eval(&x0);
    x0 /= scale;

    // Constant-coefficient march vs the matrix exponential of the frozen
    // generator; first order for implicit Euler, second for Crank-Nicolson.
    let frozen = fam.frozen(0);
    let tgrid = uniform_grid(horizon, cfg.time.dt).map_err(|e| e.to_string())?;
    let const_fam = Arc::new(
        OperatorFamily::from_samples(
            frozen.grid.clone(),
            tgrid.clone(),
            vec![frozen.matrix.clone()],
            frozen.d_norm.clone(),
        )
        .map_err(|e| e.to_string())?,
    );
    let u_const = propagate(&const_fam, 0.0, cfg.scheme).map_err(|e| e.to_string())?;
    let traj = u_const.apply_from(0, &x0).map_err(|e| e.to_string())?;
    let end = const_fam.node_index(horizon).map_err(|e| e.to_string())?;
    let exact = expm_oracle(&frozen, horizon).map_err(|e| e.to_string())? * &x0;
    let diff = &traj[end] - &exact;
    let propagator_error = fam.x_norm.eval(&diff) / fam.x_norm.eval(&exact);

    let pair =
        perturbed_pair(fam, &ops.perturbation, cfg.scheme).map_err(|e| e.to_string())?;

    let last = fam.node_index(horizon).map_err(|e| e.to_string())?;
    let duhamel_residual =
        duhamel_frozen_residual(&frozen, &fam.frozen(last), &x0, &tgrid).map_err(|e| e.to_string())?;

    let u_full = propagate(fam, 0.0, cfg.scheme).map_err(|e| e.to_string())?;
    let gamma = gamma_evolution(
        &u_full,
        &ops.observation,
        cfg.exponents.theta,
        0.0,
        horizon,
        cfg.probe_count,
        cfg.seed,
    )
    .map_err(|e| e.to_string())?;

    Ok(RungRow {
        rung,
        dt: cfg.time.dt,
        n,
        propagator_error,
        volterra_discrepancy: pair.discrepancy,
        duhamel_residual,
        gamma_hat: gamma.gamma_hat,
    })
}

fn orders(rows: &[RungRow], f: impl Fn(&RungRow) -> f64) -> Vec<Option<f64>> {
    rows.windows(2)
        .map(|w| {
            let (a, b) = (f(&w[0]), f(&w[1]));
            if a.is_finite() && b.is_finite() && a > 1e-300 && b > 1e-300 {
                Some((a / b).log2())
            } else {
                None
            }
        })
        .collect()
}

pub fn study(config: &ModelConfig, rungs: usize) -> Result<StudyReport, String> {
    let budget: Option<f64> = match std::env::var(BUDGET_ENV) {
        Ok(text) => Some(text.parse().map_err(|_| {
            format!("{BUDGET_ENV} must be a number of seconds, got {text:?}")
        })?),
        Err(_) => None,
    };

    let mut rows: Vec<RungRow>;
    let mut incomplete = false;
    match budget {
        // Budgeted ladders run serially so a truncated run still holds every
        // finished rung; the first rung always completes.
        Some(limit) => {
            let start = Instant::now();
            rows = Vec::new();
            for r in 0..rungs {
                if r > 0 && start.elapsed().as_secs_f64() > limit {
                    incomplete = true;
                    break;
                }
                rows.push(rung_metrics(config, r)?);
            }
        }
        None => {
            rows = (0..rungs)
                .into_par_iter()
                .map(|r| rung_metrics(config, r))
                .collect::<Result<Vec<_>, String>>()?;
        }
    }

    let gamma_drift = rows
        .windows(2)
        .map(|w| {
            (w[1].gamma_hat - w[0].gamma_hat).abs() / w[0].gamma_hat.abs().max(1e-300)
        })
        .collect();
    Ok(StudyReport {
        propagator_orders: orders(&rows, |r| r.propagator_error),
        volterra_orders: orders(&rows, |r| r.volterra_discrepancy),
        duhamel_orders: orders(&rows, |r| r.duhamel_residual),
        gamma_drift,
        incomplete,
        rungs: rows,
    })
}

pub fn ladder_csv(hash: &str, report: &StudyReport) -> String {
    let mut out = String::new();
    out.push_str("# dt-halving ladder: rung r reruns the model at dt / 2^r\n");
    out.push_str("# propagator_error: frozen-generator march vs matrix exponential at the horizon\n");
    out.push_str("# volterra_discrepancy: direct perturbed march vs Volterra reconstruction\n");
    out.push_str("# duhamel_residual: two-generator Duhamel identity at the horizon\n");
    out.push_str("# gamma_hat: evolution-family admissibility of the model observation\n");
    if report.incomplete {
        out.push_str("# incomplete: wall-clock budget truncated the ladder\n");
    }
    let _ = writeln!(out, "# run {hash}");
    out.push_str("rung,dt,n,propagator_error,volterra_discrepancy,duhamel_residual,gamma_hat\n");
    for r in &report.rungs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.rung, r.dt, r.n, r.propagator_error, r.volterra_discrepancy, r.duhamel_residual, r.gamma_hat
        );
    }
    out
}

fn format_orders(orders: &[Option<f64>]) -> String {
    if orders.is_empty() {
        return "n/a".to_string();
    }
    orders
        .iter()
        .map(|o| match o {
            Some(v) => format!("{v:.2}"),
            None => "n/a".to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Serialize)]
struct StudySummary<'a> {
    schema_version: u32,
    model: &'a str,
    manifest: &'a RunManifest,
    study: &'a StudyReport,
}

pub fn study_command(args: StudyArgs) -> Result<u8, String> {
    if args.rungs < 3 {
        return Err(format!(
            "convergence study needs at least 3 rungs so observed orders stabilize; got {}",
            args.rungs
        ));
    }
    let mut config = ModelConfig::from_file(&args.config).map_err(|e| e.to_string())?;
    if let Some(s) = args.scheme {
        config.scheme = s.to_scheme();
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    crate::init_jobs(args.jobs)?;

    let manifest = RunManifest::new(&args.config, &config, Some(args.rungs), &args.out);
    eprintln!("{}", manifest.log_line());
    let report = study(&config, args.rungs)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
    write_text(&args.out, "ladder.csv", &ladder_csv(&manifest.config_hash, &report))?;
    let summary = StudySummary {
        schema_version: crate::manifest::SCHEMA_VERSION,
        model: &config.name,
        manifest: &manifest,
        study: &report,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| format!("cannot serialize study: {e}"))?;
    write_text(&args.out, "study.json", &format!("{json}\n"))?;

    println!("rungs completed: {}", report.rungs.len());
    println!("propagator orders: {}", format_orders(&report.propagator_orders));
    println!("volterra orders: {}", format_orders(&report.volterra_orders));
    println!("duhamel orders: {}", format_orders(&report.duhamel_orders));
    let drift = report
        .gamma_drift
        .iter()
        .map(|v| format!("{v:.2e}"))
        .collect::<Vec<_>>()
        .join(" ");
    println!(
        "gamma drift: {}",
        if drift.is_empty() { "n/a".to_string() } else { drift }
    );
    if report.incomplete {
        println!("ladder incomplete: wall-clock budget reached");
    }
    Ok(0)
}
