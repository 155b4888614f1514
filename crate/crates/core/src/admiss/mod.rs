//! Admissibility constants of observation maps along semigroups and
//! evolution families, their transfer between generators, and their
//! invariance under structured perturbation.

pub mod gamma;
pub mod invariance;
pub mod transfer;

pub use gamma::{
    gamma_evolution, gamma_global, gamma_semigroup, obs_norm_d_to_y, timevarying_gamma,
    AdmissibilityReport, GammaMethod, GlobalGammaReport, SplittingCheck,
};
pub use invariance::{invariance_report, InvarianceReport};
pub use transfer::{
    b_relative_transfer, duhamel_frozen_residual, frozen_vs_evolution, tr_beta_transfer,
    BTransferReport, FrozenComparison, TraceTransferReport,
};

use serde::{Deserialize, Serialize};

/// One admissibility measurement flattened for tabular output.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaRow {
    pub model: String,
    pub theta: f64,
    pub s: f64,
    pub tau_prime: f64,
    pub gamma_hat: f64,
    pub method: GammaMethod,
    pub dt: f64,
    pub n: usize,
}

impl GammaRow {
    pub fn from_report(model: &str, report: &AdmissibilityReport, dt: f64, n: usize) -> Self {
        GammaRow {
            model: model.to_string(),
            theta: report.theta,
            s: report.s,
            tau_prime: report.tau_prime,
            gamma_hat: report.gamma_hat,
            method: report.method,
            dt,
            n,
        }
    }
}
