//! Mixed displacement/flux Laplacian with a time-dependent nonlocal boundary
//! feedback: the second shipped desk system. The drift lives entirely in the
//! boundary kernel, so its operator modulus factors exactly through the trace
//! map, and that factorization is cross-checked here against quadrature and a
//! closed form.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::admiss::{
    b_relative_transfer, frozen_vs_evolution, invariance_report, BTransferReport,
    FrozenComparison, InvarianceReport,
};
use crate::error::{Error, Result};
use crate::evofam::propagate;
use crate::models::config::{ModelConfig, ObservationChoice, PerturbationChoice};
use crate::models::ModelOperators;
use crate::opalg::{
    assemble_mixed_laplacian, assemble_nonlocal_perturbation, dini_modulus, fractional_power,
    kernel_modulus, make_grid, weighted_op_norm, weighted_op_norm_rect, BoundarySpec, DNorm,
    DiniModulus, ObservationMap, OperatorFamily,
};
use crate::perturb::{h2_constant, H2Report};
use crate::probe::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixedBundle {
    pub config: ModelConfig,
    pub dini: DiniModulus,
    /// Lag actually used for the modulus cross-check (snapped to the grid).
    pub modulus_lag: f64,
    /// Closed-form kernel modulus psi_scale·lag/sqrt(3) for the linear-in-x
    /// boundary kernel on the unit interval.
    pub psi_modulus_closed: f64,
    /// Same quantity from the quadrature of the kernel difference.
    pub psi_modulus_quadrature: f64,
    /// Weighted operator norm of the generator drift over the same lag.
    pub drift_norm_measured: f64,
    /// Exact norm of the flux-trace observation map.
    pub trace_map_norm: f64,
    pub b_transfer: BTransferReport,
    pub frozen: FrozenComparison,
    pub h2: H2Report,
    pub invariance: InvarianceReport,
}

/// The model's boundary kernel: psi(t, x, z) = psi_scale·(1+t)·x[0].
fn boundary_kernel(psi_scale: f64) -> impl Fn(f64, &[f64], &[f64]) -> f64 + Copy {
    move |t, x, _z| psi_scale * (1.0 + t) * x[0]
}

/// Assembles the nonlocally perturbed family, the fractional perturbation
/// (b_scale·strength)·L^alpha, and the flux-trace observation at the
/// config's resolution, without running any estimator.
pub fn mixed_nonlocal_operators(config: &ModelConfig) -> Result<ModelOperators> {
    config.validate()?;
    if config.space.dimension != 1 {
        return Err(Error::invalid(
            "the nonlocal-flux model is one-dimensional; set space.dimension = 1",
        ));
    }
    if config.observation.kind != ObservationChoice::Trace {
        return Err(Error::invalid(
            "the nonlocal-flux model needs observation.kind = \"trace\"",
        ));
    }
    if config.perturbation.kind != PerturbationChoice::Fractional {
        return Err(Error::invalid(
            "the nonlocal-flux model needs perturbation.kind = \"fractional\"",
        ));
    }
    let alpha = config.perturbation.alpha;
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::ExponentOutOfRange {
            name: "alpha",
            value: alpha,
            range: "(0, 1/2)",
        });
    }
    let grid = Arc::new(make_grid(
        1,
        &[(0.0, 1.0)],
        config.space.n_per_dim,
        BoundarySpec::DirichletLeftNeumannRest,
    )?);
    let tgrid = crate::quad::uniform_grid(1.25 * config.time.horizon, config.time.dt)?;
    let base = assemble_mixed_laplacian(grid.clone())?;
    let l = base.matrix.clone();
    let psi = boundary_kernel(config.coefficients.psi_scale);
    let nonlocal = assemble_nonlocal_perturbation(grid.clone(), psi, |_| 1.0, tgrid.clone())?;
    let node_count = tgrid.len();
    let mut samples = Vec::with_capacity(node_count);
    for k in 0..node_count {
        samples.push(&l - nonlocal.sample(k));
    }
    let a_fam = OperatorFamily::from_samples(
        grid.clone(),
        tgrid.clone(),
        samples,
        DNorm::new(Arc::new(l.clone())),
    )?;
    let frac = fractional_power(&base, alpha)?;
    let amp = config.coefficients.b_scale * config.perturbation.strength;
    let p_fam = OperatorFamily::from_samples(
        grid,
        tgrid,
        vec![&frac.matrix * amp],
        DNorm::new(Arc::new(l)),
    )?;
    let c = ObservationMap::boundary_trace(&a_fam.grid)?;
    Ok(ModelOperators {
        family: Arc::new(a_fam),
        perturbation: Arc::new(p_fam),
        observation: c,
    })
}

/// Boundary kernel psi(t, x, z) = psi_scale·(1+t)·x[0]; perturbation for the
/// invariance certificate is (b_scale·strength)·L^alpha with L the mixed
/// Laplacian.
pub fn mixed_nonlocal_model(config: &ModelConfig) -> Result<MixedBundle> {
    let ops = mixed_nonlocal_operators(config)?;
    let arc_a = &ops.family;
    let arc_p = &ops.perturbation;
    let c = &ops.observation;
    let tau = config.time.horizon;
    let dt = config.time.dt;
    let tgrid = &arc_a.time_grid;
    let node_count = tgrid.len();
    let psi_scale = config.coefficients.psi_scale;
    let psi = boundary_kernel(psi_scale);

    let mut lags: Vec<f64> = [4.0 * dt, 16.0 * dt, 64.0 * dt, tau / 4.0]
        .into_iter()
        .filter(|&v| v < tau / 2.0)
        .collect();
    lags.push(tau / 2.0);
    let dini = dini_modulus(arc_a, config.exponents.nu, &lags)?;
    if dini.divergent {
        return Err(Error::invalid(
            "drift modulus fails the integrability gate; no downstream constant is meaningful",
        ));
    }

    // Modulus factorization check at a grid-snapped lag from t = 0.
    let ib = ((tau / 4.0) / dt).round().max(1.0) as usize;
    let ib = ib.min(node_count - 1);
    let lag = tgrid[ib];
    let psi_modulus_quadrature = kernel_modulus(&arc_a.grid, &psi, lag, 0.0);
    let psi_modulus_closed = psi_scale * lag / 3f64.sqrt();
    let diff = arc_a.sample(ib) - arc_a.sample(0);
    let drift_norm_measured = weighted_op_norm(&diff, &arc_a.x_norm.weights);
    let trace_map_norm =
        weighted_op_norm_rect(&c.matrix, &c.y_norm.weights, &arc_a.x_norm.weights);

    let theta = config.exponents.theta;
    let mu = config.exponents.mu;
    let probes = config.probe_count;
    let seed = config.seed;
    let transfer_steps = ((tau / dt).round() as usize).clamp(8, 256);
    let b_transfer = b_relative_transfer(
        arc_a,
        c,
        c,
        theta,
        transfer_steps,
        probes,
        derive_seed(seed, 0x6D42),
    )?;

    let u = propagate(arc_a, 0.0, config.scheme)?;
    let frozen = frozen_vs_evolution(
        &u,
        c,
        theta,
        3,
        transfer_steps,
        probes,
        derive_seed(seed, 0x6D46),
    )?;

    let invariance = invariance_report(
        arc_a,
        arc_p,
        c,
        theta,
        mu,
        tau,
        probes,
        config.scheme,
        derive_seed(seed, 0x6D49),
    )?;
    let h2 = h2_constant(arc_p, &u, mu, 0.0, tau, probes, derive_seed(seed, 0x6D4A))?;

    Ok(MixedBundle {
        config: config.clone(),
        dini,
        modulus_lag: lag,
        psi_modulus_closed,
        psi_modulus_quadrature,
        drift_norm_measured,
        trace_map_norm,
        b_transfer,
        frozen,
        h2,
        invariance,
    })
}
