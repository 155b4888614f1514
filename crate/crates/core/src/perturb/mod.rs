//! Perturbation laboratory: the perturbed flow as a Volterra fixed point,
//! the perturbed-observation constant, and gap certificates.

pub mod gap;
pub mod h2;
pub mod volterra;

pub use gap::{
    contraction_ratio, gap_probe, mr_gap_bound, neumann_contraction, ContractionReport,
    GapReport,
};
pub use h2::{h2_constant, h2_probe_value, h2_profile, H2Interval, H2Report};
pub use volterra::{
    consistency_ladder, perturbation_consistency, perturbed_family, perturbed_pair,
    PerturbedPair, VolterraEngine,
};

use serde::{Deserialize, Serialize};

use crate::evofam::stepper::Scheme;

/// Wire summary of one base-plus-perturbation experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSummary {
    pub scheme: Scheme,
    pub dt: f64,
    pub discrepancy: f64,
    pub h2: H2Summary,
    pub contraction: ContractionSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct H2Summary {
    pub mu: f64,
    pub c_hat: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSummary {
    pub norm: f64,
    pub critical_length: Option<f64>,
}

impl PairSummary {
    pub fn assemble(
        pair: &PerturbedPair,
        h2: &H2Report,
        contraction: &ContractionReport,
    ) -> Self {
        let grid = &pair.base.time_grid;
        let interval = h2
            .intervals
            .first()
            .map(|i| H2Summary {
                mu: h2.mu,
                c_hat: i.c_hat,
            })
            .unwrap_or(H2Summary {
                mu: h2.mu,
                c_hat: 0.0,
            });
        PairSummary {
            scheme: pair.scheme,
            dt: grid[1] - grid[0],
            discrepancy: pair.discrepancy,
            h2: interval,
            contraction: ContractionSummary {
                norm: contraction.norm,
                critical_length: contraction.critical_length,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_summary_round_trips_with_the_agreed_field_names() {
        let json = r#"{
            "scheme": "implicit-euler",
            "dt": 0.001,
            "discrepancy": 1e-6,
            "h2": { "mu": 2.0, "c_hat": 0.65 },
            "contraction": { "norm": 0.4, "critical_length": 1.0 }
        }"#;
        let parsed: PairSummary = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.scheme, Scheme::ImplicitEuler);
        assert_eq!(parsed.h2.mu, 2.0);
        let back = serde_json::to_value(&parsed).unwrap();
        assert_eq!(back["h2"]["c_hat"], 0.65);
        assert_eq!(back["contraction"]["norm"], 0.4);
    }
}
