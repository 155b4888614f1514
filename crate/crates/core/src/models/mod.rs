//! Runnable desk systems: config ingestion plus three end-to-end model
//! pipelines (closed-form scalar fixture, point-observed variable heat flow,
//! nonlocal boundary feedback with mixed conditions), each returning a
//! serializable bundle of every measured constant and verdict.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::evofam::propagate;
use crate::opalg::{ObservationMap, OperatorFamily};

pub mod config;
pub mod heat;
pub mod mixed;
pub mod scalar;

pub use config::{
    CoefficientSpec, ExponentSpec, ModelConfig, ObservationChoice, ObservationSpec,
    PerturbationChoice, PerturbationSpec, SpaceSpec, TimeSpec,
};
pub use heat::{heat_point_model, heat_point_model_with, heat_point_operators, HeatPointBundle};
pub use mixed::{mixed_nonlocal_model, mixed_nonlocal_operators, MixedBundle};
pub use scalar::{scalar_fixture, scalar_operators, ScalarBundle, ScalarTable};

#[cfg(test)]
mod dispatch_tests {
    use super::*;

    #[test]
    fn operators_dispatch_on_the_model_name() {
        for (cfg, dim) in [
            (ModelConfig::scalar_default(), 1),
            (ModelConfig::heat_point_default(), 62),
        ] {
            let mut cfg = cfg;
            cfg.time.dt = 1.0 / 64.0;
            let ops = model_operators(&cfg).unwrap();
            assert_eq!(ops.family.dim(), dim);
            assert_eq!(ops.family.dim(), ops.perturbation.dim());
        }
        let mut cfg = ModelConfig::heat_point_default();
        cfg.name = "warp-drive".to_string();
        assert!(model_operators(&cfg).is_err());
    }

    #[test]
    fn canonical_trajectory_decays_from_one() {
        let mut cfg = ModelConfig::scalar_default();
        cfg.time.dt = 1.0 / 256.0;
        let rows = observation_trajectory(&cfg).unwrap();
        assert_eq!(rows.len(), 257);
        assert!((rows[0].1 - 1.0).abs() <= 1e-12);
        let end = rows.last().unwrap();
        assert!((end.0 - 1.0).abs() <= 1e-12);
        // Implicit Euler at dt = 1/256 sits within first-order error of the
        // closed form e^{-1}.
        assert!((end.1 - (-1.0f64).exp()).abs() <= 1e-3);
        assert!(rows.windows(2).all(|w| w[1].1 < w[0].1));
    }
}

/// Assembled operators of a model at the config's resolution, before any
/// estimator runs: the driving family, the perturbation family, and the
/// observation map.
pub struct ModelOperators {
    pub family: Arc<OperatorFamily>,
    pub perturbation: Arc<OperatorFamily>,
    pub observation: ObservationMap,
}

/// Dispatches on the config's model name.
pub fn model_operators(config: &ModelConfig) -> Result<ModelOperators> {
    match config.name.as_str() {
        "scalar" => scalar_operators(config),
        "heat-point" => heat_point_operators(config),
        "mixed-nonlocal" => mixed_nonlocal_operators(config),
        other => Err(Error::invalid(format!(
            "unknown model '{other}'; expected scalar, heat-point, or mixed-nonlocal"
        ))),
    }
}

/// Observation magnitude along the flow from the canonical state (the
/// normalized constant vector): rows (t, ‖C U(t,0)x0‖) up to the config
/// horizon. This is the integrand of the admissibility functional before the
/// exponent is applied.
pub fn observation_trajectory(config: &ModelConfig) -> Result<Vec<(f64, f64)>> {
    let ops = model_operators(config)?;
    let fam = &ops.family;
    let mut x0 = DVector::from_element(fam.dim(), 1.0);
    let scale = fam.x_norm.eval(&x0);
    x0 /= scale;
    let u = propagate(fam, 0.0, config.scheme)?;
    let traj = u.apply_from(0, &x0)?;
    let end = fam.node_index(config.time.horizon)?;
    Ok((0..=end)
        .map(|k| {
            let value = ops.observation.y_norm_of(&ops.observation.apply(&traj[k]));
            (fam.time_grid[k], value)
        })
        .collect())
}
