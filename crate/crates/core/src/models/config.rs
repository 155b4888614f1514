//! Model configuration: plain data describing grid, time marching,
//! coefficients, observation, perturbation, and exponents, loadable from
//! TOML (key-value with nested tables) or JSON. Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evofam::stepper::Scheme;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_probes")]
    pub probe_count: usize,
    pub space: SpaceSpec,
    pub time: TimeSpec,
    #[serde(default)]
    pub coefficients: CoefficientSpec,
    pub observation: ObservationSpec,
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub exponents: ExponentSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    pub dimension: usize,
    pub n_per_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub horizon: f64,
    pub dt: f64,
}

/// Parameters of the shipped coefficient menu: diffusion a(t,x) =
/// a_base + a_slope·t, potential b0, boundary kernel
/// psi(t,x,z) = psi_scale·(1+t)·x_0, perturbation multiplier b(t) = b_scale.
/// Model builders with `_with` suffixes accept arbitrary callbacks instead.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    #[serde(default = "one")]
    pub a_base: f64,
    #[serde(default)]
    pub a_slope: f64,
    #[serde(default)]
    pub b0: f64,
    #[serde(default = "one")]
    pub psi_scale: f64,
    #[serde(default = "one")]
    pub b_scale: f64,
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        CoefficientSpec {
            a_base: 1.0,
            a_slope: 0.0,
            b0: 0.0,
            psi_scale: 1.0,
            b_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    pub kind: ObservationChoice,
    /// Point location for kind = "point"; defaults to the domain center.
    #[serde(default)]
    pub location: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationChoice {
    Point,
    Trace,
    Identity,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationChoice,
    #[serde(default = "quarter")]
    pub alpha: f64,
    #[serde(default = "one")]
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationChoice {
    /// P(t) = strength·b(t)·A^alpha, powers of the positive operator.
    Fractional,
    /// P(t) = the boundary-kernel map itself.
    Nonlocal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentSpec {
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default = "two")]
    pub q: f64,
    #[serde(default = "two")]
    pub theta: f64,
    #[serde(default = "two")]
    pub mu: f64,
    #[serde(default = "two")]
    pub nu: f64,
}

impl Default for ExponentSpec {
    fn default() -> Self {
        ExponentSpec {
            p: 2.0,
            q: 2.0,
            theta: 2.0,
            mu: 2.0,
            nu: 2.0,
        }
    }
}

fn default_scheme() -> Scheme {
    Scheme::ImplicitEuler
}

fn default_probes() -> usize {
    8
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn quarter() -> f64 {
    0.25
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text)
            .map_err(|e| Error::invalid(format!("config parse failed: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)
            .map_err(|e| Error::invalid(format!("config parse failed: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads by extension: .json parses as JSON, anything else as TOML.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    /// Structural checks shared by every model; model builders add their own.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("model name must be nonempty"));
        }
        if self.space.dimension == 0 || self.space.dimension > 2 {
            return Err(Error::invalid(format!(
                "dimension {} unsupported; desk models run 1D and 2D",
                self.space.dimension
            )));
        }
        if self.space.n_per_dim < 3 {
            return Err(Error::GridTooCoarse(self.space.n_per_dim));
        }
        if !(self.time.horizon > 0.0 && self.time.horizon.is_finite()) {
            return Err(Error::invalid("horizon must be positive and finite"));
        }
        if !(self.time.dt > 0.0 && self.time.dt < self.time.horizon) {
            return Err(Error::invalid("dt must lie in (0, horizon)"));
        }
        if self.probe_count == 0 {
            return Err(Error::invalid("at least one probe is required"));
        }
        for (name, value) in [
            ("p", self.exponents.p),
            ("q", self.exponents.q),
            ("theta", self.exponents.theta),
            ("mu", self.exponents.mu),
            ("nu", self.exponents.nu),
        ] {
            if !(value > 1.0 && value.is_finite()) {
                return Err(Error::invalid(format!(
                    "exponent {name} = {value} must lie in (1, inf)"
                )));
            }
        }
        if let Some(loc) = &self.observation.location {
            if loc.len() != self.space.dimension {
                return Err(Error::ShapeMismatch {
                    context: "observation location vs dimension",
                    left: loc.len(),
                    right: self.space.dimension,
                });
            }
        }
        Ok(())
    }

    /// Desk default of the variable-diffusion point-observation model.
    pub fn heat_point_default() -> Self {
        ModelConfig {
            name: "heat-point".to_string(),
            seed: 7,
            scheme: Scheme::ImplicitEuler,
            probe_count: 8,
            space: SpaceSpec {
                dimension: 1,
                n_per_dim: 64,
            },
            time: TimeSpec {
                horizon: 1.0,
                dt: 1.0 / 1024.0,
            },
            coefficients: CoefficientSpec {
                a_base: 1.0,
                a_slope: 0.5,
                b0: 0.0,
                psi_scale: 1.0,
                b_scale: 1.0,
            },
            observation: ObservationSpec {
                kind: ObservationChoice::Point,
                location: Some(vec![0.5]),
            },
            perturbation: PerturbationSpec {
                kind: PerturbationChoice::Fractional,
                alpha: 0.25,
                strength: 1.0,
            },
            exponents: ExponentSpec::default(),
        }
    }

    /// Default of the closed-form scalar fixture: decay a_base, perturbation
    /// rate perturbation.strength, identity observation.
    pub fn scalar_default() -> Self {
        ModelConfig {
            name: "scalar".to_string(),
            seed: 7,
            scheme: Scheme::ImplicitEuler,
            probe_count: 4,
            space: SpaceSpec {
                dimension: 1,
                n_per_dim: 3,
            },
            time: TimeSpec {
                horizon: 1.0,
                dt: 1.0 / 1024.0,
            },
            coefficients: CoefficientSpec {
                a_base: 1.0,
                a_slope: 0.0,
                b0: 0.0,
                psi_scale: 1.0,
                b_scale: 1.0,
            },
            observation: ObservationSpec {
                kind: ObservationChoice::Identity,
                location: None,
            },
            perturbation: PerturbationSpec {
                kind: PerturbationChoice::Fractional,
                alpha: 0.25,
                strength: 0.5,
            },
            exponents: ExponentSpec::default(),
        }
    }

    /// Desk default of the mixed-boundary non-local model.
    pub fn mixed_nonlocal_default() -> Self {
        ModelConfig {
            name: "mixed-nonlocal".to_string(),
            seed: 7,
            scheme: Scheme::ImplicitEuler,
            probe_count: 8,
            space: SpaceSpec {
                dimension: 1,
                n_per_dim: 64,
            },
            time: TimeSpec {
                horizon: 1.0,
                dt: 1.0 / 1024.0,
            },
            coefficients: CoefficientSpec {
                a_base: 1.0,
                a_slope: 0.0,
                b0: 0.0,
                psi_scale: 1.0,
                b_scale: 1.0,
            },
            observation: ObservationSpec {
                kind: ObservationChoice::Trace,
                location: None,
            },
            perturbation: PerturbationSpec {
                kind: PerturbationChoice::Fractional,
                alpha: 0.25,
                strength: 1.0,
            },
            exponents: ExponentSpec::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_preserves_every_field() {
        let cfg = ModelConfig::heat_point_default();
        let text = toml::to_string(&cfg).unwrap();
        let back = ModelConfig::from_toml_str(&text).unwrap();
        assert_eq!(serde_json::to_string(&cfg).unwrap(), serde_json::to_string(&back).unwrap());
    }

    #[test]
    fn json_text_is_accepted() {
        let cfg = ModelConfig::mixed_nonlocal_default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = ModelConfig::from_json_str(&text).unwrap();
        assert_eq!(back.name, "mixed-nonlocal");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"
name = "x"
flux_capacitor = 1
[space]
dimension = 1
n_per_dim = 8
[time]
horizon = 1.0
dt = 0.01
[observation]
kind = "identity"
[perturbation]
kind = "fractional"
"#;
        let err = ModelConfig::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("config parse failed"), "{err}");
    }

    #[test]
    fn defaults_fill_optional_tables() {
        let text = r#"
name = "tiny"
[space]
dimension = 1
n_per_dim = 8
[time]
horizon = 1.0
dt = 0.01
[observation]
kind = "identity"
[perturbation]
kind = "fractional"
"#;
        let cfg = ModelConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.exponents.p, 2.0);
        assert_eq!(cfg.perturbation.alpha, 0.25);
        assert_eq!(cfg.coefficients.a_base, 1.0);
        assert_eq!(cfg.probe_count, 8);
    }

    #[test]
    fn structural_violations_are_reported() {
        let mut cfg = ModelConfig::heat_point_default();
        cfg.time.dt = 2.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::heat_point_default();
        cfg.exponents.p = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ModelConfig::heat_point_default();
        cfg.observation.location = Some(vec![0.5, 0.5]);
        assert!(cfg.validate().is_err());
    }
}
