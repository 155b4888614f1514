//! Scalar decay fixture: every pipeline quantity next to its closed form.
//! This is the anchor the acceptance suite trusts before believing anything
//! at grid scale.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admiss::invariance::{invariance_report, InvarianceReport};
use crate::error::{Error, Result};
use crate::evofam::stepper::Scheme;
use crate::models::config::ModelConfig;
use crate::models::ModelOperators;
use crate::opalg::family::OperatorFamily;
use crate::opalg::grid::{make_grid, BoundarySpec};
use crate::opalg::norms::{DNorm, XNorm};
use crate::opalg::operator::ObservationMap;
use crate::perturb::perturbed_pair;
use crate::quad::uniform_grid;

/// The fixture quantities, one copy per provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarTable {
    /// Base propagator over the window.
    pub u_end: f64,
    /// Perturbed propagator over the window.
    pub v_end: f64,
    pub gamma_u: f64,
    pub gamma_v: f64,
    pub c_hat: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarBundle {
    pub a: f64,
    pub p_pert: f64,
    pub horizon: f64,
    pub theta: f64,
    pub dt: f64,
    pub closed: ScalarTable,
    pub measured: ScalarTable,
    pub max_rel_err: f64,
    pub discrepancy: f64,
    pub invariance: InvarianceReport,
}

/// L^2(0, tau) norm of e^{-rate·t}.
fn decay_l2(rate: f64, tau: f64) -> f64 {
    if rate.abs() <= 1e-12 {
        tau.sqrt()
    } else {
        ((1.0 - (-2.0 * rate * tau).exp()) / (2.0 * rate)).sqrt()
    }
}

fn scalar_family(value: f64, step_horizon: f64, dt: f64) -> Result<Arc<OperatorFamily>> {
    let grid = Arc::new(make_grid(1, &[(0.0, 1.0)], 3, BoundarySpec::AllDirichlet)?);
    let mut fam = OperatorFamily::from_fn(
        grid,
        uniform_grid(step_horizon, dt)?,
        DNorm::new(Arc::new(DMatrix::from_element(1, 1, value))),
        |_| Ok(DMatrix::from_element(1, 1, value)),
    )?;
    fam.x_norm = XNorm::weighted_l2(DVector::from_element(1, 1.0));
    Ok(Arc::new(fam))
}

/// The fixture's operators at the config's resolution: decay rate a_base,
/// perturbation rate perturbation.strength, identity observation.
pub fn scalar_operators(config: &ModelConfig) -> Result<ModelOperators> {
    config.validate()?;
    let a = config.coefficients.a_base;
    let p = config.perturbation.strength;
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::invalid("fixture decay rate must be nonnegative"));
    }
    if !(p >= 0.0 && p.is_finite()) {
        return Err(Error::invalid("fixture perturbation must be nonnegative"));
    }
    let step_horizon = 1.25 * config.time.horizon;
    Ok(ModelOperators {
        family: scalar_family(a, step_horizon, config.time.dt)?,
        perturbation: scalar_family(p, step_horizon, config.time.dt)?,
        observation: ObservationMap::custom(
            DMatrix::identity(1, 1),
            XNorm::weighted_l2(DVector::from_element(1, 1.0)),
        ),
    })
}

/// Runs the whole pipeline on du/dt = -a·u perturbed by -p_pert·u and
/// reports every constant both measured and in closed form. The grid steps
/// 25% past the window so interval constants keep their headroom.
pub fn scalar_fixture(a: f64, p_pert: f64, horizon: f64) -> Result<ScalarBundle> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::invalid("fixture decay rate must be nonnegative"));
    }
    if !(p_pert >= 0.0 && p_pert.is_finite()) {
        return Err(Error::invalid("fixture perturbation must be nonnegative"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("fixture horizon must be positive"));
    }
    let theta = 2.0;
    let dt = horizon / 1024.0;
    let step_horizon = 1.25 * horizon;
    let fam_a = scalar_family(a, step_horizon, dt)?;
    let fam_p = scalar_family(p_pert, step_horizon, dt)?;
    let c = ObservationMap::custom(
        DMatrix::identity(1, 1),
        XNorm::weighted_l2(DVector::from_element(1, 1.0)),
    );
    let pair = perturbed_pair(&fam_a, &fam_p, Scheme::ImplicitEuler)?;
    let end = fam_a.node_index(horizon)?;
    let one = DVector::from_element(1, 1.0);
    let u_end = pair.u.apply_from(0, &one)?[end][0];
    let v_end = pair.v_direct.apply_from(0, &one)?[end][0];
    let invariance = invariance_report(
        &fam_a,
        &fam_p,
        &c,
        theta,
        2.0,
        horizon,
        4,
        Scheme::ImplicitEuler,
        11,
    )?;
    let closed = ScalarTable {
        u_end: (-a * horizon).exp(),
        v_end: (-(a + p_pert) * horizon).exp(),
        gamma_u: decay_l2(a, horizon),
        gamma_v: decay_l2(a + p_pert, horizon),
        c_hat: p_pert * decay_l2(a, horizon),
    };
    let measured = ScalarTable {
        u_end,
        v_end,
        gamma_u: invariance.gamma_u.gamma_hat,
        gamma_v: invariance.gamma_v.gamma_hat,
        c_hat: invariance.c_hat,
    };
    let pairs = [
        (measured.u_end, closed.u_end),
        (measured.v_end, closed.v_end),
        (measured.gamma_u, closed.gamma_u),
        (measured.gamma_v, closed.gamma_v),
        (measured.c_hat, closed.c_hat),
    ];
    let max_rel_err = pairs
        .iter()
        .map(|&(m, c)| (m - c).abs() / c.abs().max(1e-9))
        .fold(0.0f64, f64::max);
    Ok(ScalarBundle {
        a,
        p_pert,
        horizon,
        theta,
        dt,
        closed,
        measured,
        max_rel_err,
        discrepancy: pair.discrepancy,
        invariance,
    })
}
