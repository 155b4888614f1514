//! Invariance of admissibility under structured perturbation: the measured
//! constant of the perturbed flow against the certificate assembled from
//! the base constant, the regularity constant of the perturbed family, and
//! the interval constant of the perturbation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evofam::mr::{mr_constant, validate_exponent};
use crate::evofam::stepper::Scheme;
use crate::opalg::family::OperatorFamily;
use crate::opalg::operator::ObservationMap;
use crate::perturb::{h2_constant, perturbed_pair};
use crate::probe::derive_seed;

use super::gamma::{gamma_evolution, obs_norm_d_to_y, AdmissibilityReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub theta: f64,
    pub mu: f64,
    pub tau_prime: f64,
    /// Sampled gap between the integral-equation flow and the directly
    /// stepped perturbed flow.
    pub discrepancy: f64,
    pub gamma_u: AdmissibilityReport,
    pub gamma_v: AdmissibilityReport,
    /// Regularity constant of the perturbed family.
    pub kappa_hat: f64,
    /// Interval constant of the perturbation along the base flow.
    pub c_hat: f64,
    /// Observation norm from the graph domain of the perturbed family.
    pub obs_norm: f64,
    /// Certified budget ((2·kappa·c·obs)^theta + (2·gamma_u)^theta)^(1/theta).
    pub delta_bound: f64,
    /// gamma_v ≤ delta_bound.
    pub verdict: bool,
    /// Same quantities with the two flows swapped: the perturbation is
    /// measured along the perturbed flow and regularity on the base family.
    pub reverse_kappa_hat: f64,
    pub reverse_c_hat: f64,
    pub reverse_obs_norm: f64,
    pub reverse_delta_bound: f64,
    /// gamma_u ≤ reverse_delta_bound.
    pub reverse_verdict: bool,
}

/// Certifies both directions of admissibility invariance under an additive
/// perturbation on [0, tau_prime]. tau_prime must sit strictly inside the
/// stepping horizon so the interval constant keeps one step of headroom.
#[allow(clippy::too_many_arguments)]
pub fn invariance_report(
    a: &Arc<OperatorFamily>,
    p: &Arc<OperatorFamily>,
    c: &ObservationMap,
    theta: f64,
    mu: f64,
    tau_prime: f64,
    probe_count: usize,
    scheme: Scheme,
    seed: u64,
) -> Result<InvarianceReport> {
    validate_exponent("theta", theta)?;
    validate_exponent("mu", mu)?;
    if theta > mu {
        return Err(Error::ExponentOutOfRange {
            name: "theta",
            value: theta,
            range: "(1, mu]",
        });
    }
    let pair = perturbed_pair(a, p, scheme)?;
    let gamma_u = gamma_evolution(
        &pair.u,
        c,
        theta,
        0.0,
        tau_prime,
        probe_count,
        derive_seed(seed, 0x4755),
    )?;
    let gamma_v = gamma_evolution(
        &pair.v_direct,
        c,
        theta,
        0.0,
        tau_prime,
        probe_count,
        derive_seed(seed, 0x4756),
    )?;
    let kappa_hat = mr_constant(
        &pair.perturbed,
        theta,
        (0.0, tau_prime),
        probe_count,
        scheme,
        derive_seed(seed, 0x4B41),
    )?
    .value;
    let c_hat = h2_constant(
        p,
        &pair.u,
        mu,
        0.0,
        tau_prime,
        probe_count,
        derive_seed(seed, 0x4832),
    )?
    .intervals[0]
        .c_hat;
    let obs_norm = obs_norm_d_to_y(
        c,
        &pair.perturbed.d_norm,
        &pair.perturbed.x_norm,
        probe_count,
        derive_seed(seed, 0x4F42),
    );
    let delta_bound = assemble_budget(kappa_hat, c_hat, obs_norm, gamma_u.gamma_hat, theta);
    let verdict = gamma_v.gamma_hat <= delta_bound;

    let reverse_kappa_hat = mr_constant(
        a,
        theta,
        (0.0, tau_prime),
        probe_count,
        scheme,
        derive_seed(seed, 0x4B42),
    )?
    .value;
    let reverse_c_hat = h2_constant(
        p,
        &pair.v_direct,
        mu,
        0.0,
        tau_prime,
        probe_count,
        derive_seed(seed, 0x4833),
    )?
    .intervals[0]
        .c_hat;
    let reverse_obs_norm = obs_norm_d_to_y(
        c,
        &a.d_norm,
        &a.x_norm,
        probe_count,
        derive_seed(seed, 0x4F43),
    );
    let reverse_delta_bound = assemble_budget(
        reverse_kappa_hat,
        reverse_c_hat,
        reverse_obs_norm,
        gamma_v.gamma_hat,
        theta,
    );
    let reverse_verdict = gamma_u.gamma_hat <= reverse_delta_bound;

    Ok(InvarianceReport {
        theta,
        mu,
        tau_prime,
        discrepancy: pair.discrepancy,
        gamma_u,
        gamma_v,
        kappa_hat,
        c_hat,
        obs_norm,
        delta_bound,
        verdict,
        reverse_kappa_hat,
        reverse_c_hat,
        reverse_obs_norm,
        reverse_delta_bound,
        reverse_verdict,
    })
}

fn assemble_budget(kappa: f64, c_hat: f64, obs: f64, gamma_known: f64, theta: f64) -> f64 {
    let smoothing = 2.0 * kappa * c_hat * obs;
    let carried = 2.0 * gamma_known;
    (smoothing.powf(theta) + carried.powf(theta)).powf(1.0 / theta)
}
