//! CSV tables written next to summary.json. Every file opens with '#'
//! provenance lines naming the producing estimator, then one header row.
//! Floats use the shortest round-trip format, so identical runs are
//! byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use evolab_core::{GammaMethod, GammaRow, Scheme};

pub fn scheme_name(scheme: Scheme) -> &'static str {
    match scheme {
        Scheme::ImplicitEuler => "implicit-euler",
        Scheme::CrankNicolson => "crank-nicolson",
    }
}

fn method_name(method: GammaMethod) -> &'static str {
    match method {
        GammaMethod::SvdExact => "svd-exact",
        GammaMethod::ProbeLowerBound => "probe-lower-bound",
    }
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), String> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

pub fn gamma_csv(hash: &str, rows: &[GammaRow]) -> String {
    let mut out = String::new();
    out.push_str("# admissibility constants, one row per estimated report\n");
    out.push_str("# gamma_hat: L^theta norm of the observed flow over (s, s + tau_prime) relative to the state norm\n");
    out.push_str("# method svd-exact is an operator norm; probe-lower-bound is a certified lower estimate\n");
    let _ = writeln!(out, "# run {hash}");
    out.push_str("model,theta,s,tau_prime,gamma_hat,method,dt,n\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.model,
            r.theta,
            r.s,
            r.tau_prime,
            r.gamma_hat,
            method_name(r.method),
            r.dt,
            r.n
        );
    }
    out
}

pub struct H2Row {
    pub model: String,
    pub mu: f64,
    pub s: f64,
    pub tau_prime: f64,
    pub c_hat: f64,
    pub sliver: f64,
}

pub fn h2_csv(hash: &str, rows: &[H2Row]) -> String {
    let mut out = String::new();
    out.push_str("# perturbed-observation constants per subinterval\n");
    out.push_str("# c_hat: L^mu norm of t -> P(t) U(t, s) x over (s + dt, s + tau_prime), sup over probes\n");
    out.push_str("# sliver: rectangle estimate of the omitted first step, reported separately\n");
    let _ = writeln!(out, "# run {hash}");
    out.push_str("model,mu,s,tau_prime,c_hat,sliver\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.model, r.mu, r.s, r.tau_prime, r.c_hat, r.sliver
        );
    }
    out
}

pub struct MrRow {
    pub model: String,
    pub mu: f64,
    pub direction: &'static str,
    pub kappa_hat: f64,
}

pub fn mr_csv(hash: &str, rows: &[MrRow]) -> String {
    let mut out = String::new();
    out.push_str("# maximal-regularity constants measured inside the invariance protocol\n");
    out.push_str("# kappa_hat: probe lower estimate of the L^mu solver norm; direction marks which flow was solved\n");
    let _ = writeln!(out, "# run {hash}");
    out.push_str("model,mu,direction,kappa_hat\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.model, r.mu, r.direction, r.kappa_hat);
    }
    out
}

pub struct DiscrepancyRow {
    pub model: String,
    pub scheme: Scheme,
    pub dt: f64,
    pub n: usize,
    pub discrepancy: f64,
}

pub fn discrepancy_csv(hash: &str, rows: &[DiscrepancyRow]) -> String {
    let mut out = String::new();
    out.push_str("# sup-norm gap between the directly stepped perturbed flow and its Volterra reconstruction\n");
    let _ = writeln!(out, "# run {hash}");
    out.push_str("model,scheme,dt,n,discrepancy\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.model,
            scheme_name(r.scheme),
            r.dt,
            r.n,
            r.discrepancy
        );
    }
    out
}

pub fn integrand_csv(hash: &str, rows: &[(f64, f64)]) -> String {
    let mut out = String::new();
    out.push_str("# observation magnitude along the flow from the normalized constant state\n");
    out.push_str("# this is the admissibility integrand before the exponent is applied\n");
    let _ = writeln!(out, "# run {hash}");
    out.push_str("t,observation\n");
    for (t, v) in rows {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}
