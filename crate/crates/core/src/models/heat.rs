//! Variable-diffusion heat flow observed at a point, perturbed by a
//! fractional power of the generator: the first of the two shipped desk
//! systems, wired through drift diagnostics, interval constants,
//! admissibility, and the invariance certificate.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::admiss::{invariance_report, AdmissibilityReport, InvarianceReport};
use crate::error::{Error, Result};
use crate::evofam::{propagate, EvolutionFamily};
use crate::models::config::{ModelConfig, ObservationChoice, PerturbationChoice};
use crate::models::ModelOperators;
use crate::opalg::{
    assemble_variable_heat, dini_modulus, fractional_power_family, isotropic, make_grid,
    BoundarySpec, DiniModulus, ObservationMap, OperatorFamily,
};
use crate::perturb::{h2_constant, H2Report};
use crate::probe::{derive_seed, gaussian_probes, orthonormalize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatPointBundle {
    pub config: ModelConfig,
    /// Smallest coefficient-ellipticity eigenvalue over sampled (t, x).
    pub beta_hat: f64,
    /// Dimension-dependent lower limit the integrability exponent should
    /// clear; recorded, not enforced.
    pub q_requirement: f64,
    pub q_ok: bool,
    pub dini: DiniModulus,
    pub h2: H2Report,
    /// Measured sup of t^alpha·‖P(t)U(t,0)x‖ over unit probes.
    pub smoothing_alpha: f64,
    /// Singular-quadrature budget the interval constant must sit under:
    /// smoothing·(tau^(1-alpha·p)/(1-alpha·p))^(1/p).
    pub h2_budget: f64,
    pub gamma: AdmissibilityReport,
    pub invariance: InvarianceReport,
    /// Fitted early-time exponent of t ↦ ‖C U(t,0)x‖; reported without a
    /// tolerance because none is available for the discrete decay rate.
    pub decay_exponent: f64,
}

/// Desk defaults: diffusion a_base + a_slope·t, constant potential b0.
pub fn heat_point_model(config: &ModelConfig) -> Result<HeatPointBundle> {
    let a_base = config.coefficients.a_base;
    let a_slope = config.coefficients.a_slope;
    let b0 = config.coefficients.b0;
    heat_point_model_with(config, move |t, _| a_base + a_slope * t, move |_, _| b0)
}

/// Assembles the driving family, the fractional perturbation, and the point
/// observation at the config's resolution, without running any estimator.
pub fn heat_point_operators(config: &ModelConfig) -> Result<ModelOperators> {
    let a_base = config.coefficients.a_base;
    let a_slope = config.coefficients.a_slope;
    let b0 = config.coefficients.b0;
    heat_point_operators_with(config, move |t, _| a_base + a_slope * t, move |_, _| b0)
}

fn heat_point_operators_with(
    config: &ModelConfig,
    a: impl Fn(f64, &[f64]) -> f64,
    b0: impl Fn(f64, &[f64]) -> f64,
) -> Result<ModelOperators> {
    config.validate()?;
    if config.observation.kind != ObservationChoice::Point {
        return Err(Error::invalid(
            "the point-observation model needs observation.kind = \"point\"",
        ));
    }
    if config.perturbation.kind != PerturbationChoice::Fractional {
        return Err(Error::invalid(
            "the point-observation model needs perturbation.kind = \"fractional\"",
        ));
    }
    let p = config.exponents.p;
    let alpha = config.perturbation.alpha;
    if !(alpha > 0.0 && alpha < 1.0 / p) {
        return Err(Error::ExponentOutOfRange {
            name: "alpha",
            value: alpha,
            range: "(0, 1/p)",
        });
    }
    let d = config.space.dimension;
    let extent = vec![(0.0, 1.0); d];
    let grid = Arc::new(make_grid(
        d,
        &extent,
        config.space.n_per_dim,
        BoundarySpec::AllDirichlet,
    )?);
    let tgrid = crate::quad::uniform_grid(1.25 * config.time.horizon, config.time.dt)?;
    let family = assemble_variable_heat(grid.clone(), isotropic(a), b0, tgrid)?;
    let mut p_fam = fractional_power_family(&family, alpha)?;
    if (config.perturbation.strength - 1.0).abs() > 0.0 {
        let s = config.perturbation.strength;
        p_fam = p_fam.map_samples(|m| Ok(m * s))?;
    }
    let location = config
        .observation
        .location
        .clone()
        .unwrap_or_else(|| vec![0.5; d]);
    let c = ObservationMap::point(&grid, &location)?;
    Ok(ModelOperators {
        family: Arc::new(family),
        perturbation: Arc::new(p_fam),
        observation: c,
    })
}

/// As heat_point_model with arbitrary isotropic diffusion and potential
/// callbacks.
pub fn heat_point_model_with(
    config: &ModelConfig,
    a: impl Fn(f64, &[f64]) -> f64,
    b0: impl Fn(f64, &[f64]) -> f64,
) -> Result<HeatPointBundle> {
    let ops = heat_point_operators_with(config, a, b0)?;
    let arc_a = &ops.family;
    let arc_p = &ops.perturbation;
    let c = &ops.observation;
    let beta_hat = arc_a.ellipticity.unwrap_or(0.0);
    let p = config.exponents.p;
    let alpha = config.perturbation.alpha;
    let tau = config.time.horizon;

    let dt = config.time.dt;
    let mut lags: Vec<f64> = [4.0 * dt, 16.0 * dt, 64.0 * dt, tau / 4.0]
        .into_iter()
        .filter(|&l| l < tau / 2.0)
        .collect();
    lags.push(tau / 2.0);
    let dini = dini_modulus(arc_a, config.exponents.nu, &lags)?;
    if dini.divergent {
        return Err(Error::invalid(
            "drift modulus fails the integrability gate; no downstream constant is meaningful",
        ));
    }

    let u = propagate(arc_a, 0.0, config.scheme)?;
    let seed = config.seed;
    let invariance = invariance_report(
        arc_a,
        arc_p,
        c,
        config.exponents.theta,
        p,
        tau,
        config.probe_count,
        config.scheme,
        derive_seed(seed, 0x6870),
    )?;
    let h2 = h2_constant(
        arc_p,
        &u,
        p,
        0.0,
        tau,
        config.probe_count,
        derive_seed(seed, 0x6871),
    )?;
    let smoothing_alpha = alpha_smoothing(
        arc_a,
        arc_p,
        &u,
        alpha,
        tau,
        config.probe_count,
        derive_seed(seed, 0x6872),
    )?;
    let h2_budget =
        smoothing_alpha * (tau.powf(1.0 - alpha * p) / (1.0 - alpha * p)).powf(1.0 / p);
    let decay_exponent = early_decay_exponent(arc_a, &u, c, derive_seed(seed, 0x6873))?;
    let q_requirement = config.space.dimension as f64 * p / 2.0;
    let gamma = invariance.gamma_u.clone();
    Ok(HeatPointBundle {
        config: config.clone(),
        beta_hat,
        q_requirement,
        q_ok: config.exponents.q > q_requirement,
        dini,
        h2,
        smoothing_alpha,
        h2_budget,
        gamma,
        invariance,
        decay_exponent,
    })
}

/// Sup over unit probes and grid times in (0, tau] of t^alpha·‖P(t)U(t,0)x‖.
fn alpha_smoothing(
    a: &Arc<OperatorFamily>,
    p_fam: &Arc<OperatorFamily>,
    u: &EvolutionFamily,
    alpha: f64,
    tau: f64,
    probe_count: usize,
    seed: u64,
) -> Result<f64> {
    let n = a.dim();
    let mut probes = gaussian_probes(n, probe_count, seed);
    orthonormalize(&mut probes, &a.x_norm.weights);
    let iq = a.node_index(tau)?;
    let mut best: f64 = 0.0;
    for x in &probes {
        let traj = u.apply_from(0, x)?;
        for (k, state) in traj.iter().enumerate().take(iq + 1).skip(1) {
            let t = a.time_grid[k];
            let v = a.x_norm.eval(&(p_fam.sample(k) * state));
            best = best.max(t.powf(alpha) * v);
        }
    }
    Ok(best)
}

/// Log-log slope of ‖C U(t,0)x‖ between the first two steps.
fn early_decay_exponent(
    a: &Arc<OperatorFamily>,
    u: &EvolutionFamily,
    c: &ObservationMap,
    seed: u64,
) -> Result<f64> {
    let n = a.dim();
    let mut probes = gaussian_probes(n, 1, seed);
    orthonormalize(&mut probes, &a.x_norm.weights);
    let traj = u.apply_from(0, &probes[0])?;
    let v1 = c.y_norm_of(&c.apply(&traj[1]));
    let v2 = c.y_norm_of(&c.apply(&traj[2]));
    if v1 <= 1e-300 || v2 <= 1e-300 {
        return Ok(0.0);
    }
    let t1 = a.time_grid[1];
    let t2 = a.time_grid[2];
    Ok((v2 / v1).ln() / (t2 / t1).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_config(n: usize, steps: usize) -> ModelConfig {
        let mut cfg = ModelConfig::heat_point_default();
        cfg.space.n_per_dim = n;
        cfg.time.dt = 1.0 / steps as f64;
        cfg.probe_count = 4;
        cfg
    }

    #[test]
    fn desk_defaults_certify_the_bundle() {
        let b = heat_point_model(&desk_config(24, 256)).unwrap();
        assert!((b.beta_hat - 1.0).abs() <= 1e-12, "beta_hat {}", b.beta_hat);
        assert!(!b.dini.divergent);
        assert!(b.dini.dini_integral.is_finite());
        assert!(b.q_ok);
        assert!(b.invariance.verdict, "forward certificate failed");
        assert!(b.invariance.reverse_verdict, "reverse certificate failed");
        let c_hat = b.h2.intervals[0].c_hat;
        assert!(c_hat > 0.0 && c_hat.is_finite());
        assert!(
            c_hat <= 1.1 * b.h2_budget,
            "interval constant {c_hat} above budget {}",
            b.h2_budget
        );
        assert!(b.gamma.gamma_hat > 0.0);
        assert!(b.decay_exponent.is_finite());
    }

    #[test]
    fn interval_constant_sits_under_the_singular_budget_toward_the_limit() {
        let mut prev_c = 0.0;
        let mut normalized = Vec::new();
        for alpha in [0.35, 0.45] {
            let mut cfg = desk_config(16, 256);
            cfg.perturbation.alpha = alpha;
            let b = heat_point_model(&cfg).unwrap();
            let c_hat = b.h2.intervals[0].c_hat;
            assert!(
                c_hat >= prev_c,
                "interval constant shrank: {c_hat} after {prev_c}"
            );
            prev_c = c_hat;
            assert!(
                c_hat <= 1.1 * b.h2_budget,
                "alpha {alpha}: constant {c_hat} above budget {}",
                b.h2_budget
            );
            let p = cfg.exponents.p;
            normalized.push(b.h2_budget * (1.0 - alpha * p).powf(1.0 / p));
        }
        let spread = normalized
            .iter()
            .fold(0.0f64, |m, &v| m.max(v))
            / normalized.iter().fold(f64::INFINITY, |m, &v| m.min(v));
        assert!(
            spread <= 1.2,
            "budget does not track the singular growth law: {normalized:?}"
        );
    }

    #[test]
    fn exponents_at_or_past_the_limit_are_rejected() {
        for alpha in [0.5, 0.6] {
            let mut cfg = desk_config(8, 32);
            cfg.perturbation.alpha = alpha;
            let err = heat_point_model(&cfg).unwrap_err();
            assert!(
                matches!(err, Error::ExponentOutOfRange { name: "alpha", .. }),
                "alpha {alpha}: {err}"
            );
        }
    }

    #[test]
    fn bounded_potential_shifts_the_constant_by_at_most_its_exponential() {
        // A constant potential multiplies the continuum flow by e^(-b0 t), so
        // gamma moves by at most e^(b0 tau) either way. The discrete flow
        // damps modes at slightly different rates, so allow 2% on top.
        let cfg0 = desk_config(16, 128);
        let base = heat_point_model(&cfg0).unwrap();
        let mut cfgb = desk_config(16, 128);
        cfgb.coefficients.b0 = 0.5;
        let shifted = heat_point_model(&cfgb).unwrap();
        let g0 = base.gamma.gamma_hat;
        let gb = shifted.gamma.gamma_hat;
        let factor = (0.5f64 * cfg0.time.horizon).exp();
        assert!(
            gb <= g0 * factor * 1.02,
            "shift exceeded the bounded-perturbation factor: {gb} vs {g0}·{factor}"
        );
        assert!(
            gb >= g0 / factor / 1.02,
            "shift exceeded the bounded-perturbation factor: {gb} vs {g0}/{factor}"
        );
    }

    #[test]
    fn wrong_observation_or_perturbation_kind_is_rejected() {
        let mut cfg = desk_config(8, 32);
        cfg.observation.kind = ObservationChoice::Trace;
        assert!(heat_point_model(&cfg).is_err());
        let mut cfg = desk_config(8, 32);
        cfg.perturbation.kind = PerturbationChoice::Nonlocal;
        assert!(heat_point_model(&cfg).is_err());
    }
}
