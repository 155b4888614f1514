//! Numerical laboratory for non-autonomous evolution problems at desk scale:
//! evolution families driven by time-dependent elliptic operators, their
//! structured perturbations, and measured certificates for regularity,
//! perturbed-observation, and admissibility constants.
//!
//! Everything is dense, deterministic, and sized for a workstation: grids up
//! to a few thousand unknowns, one-step time marching, probe-based norm
//! estimation with fixed seeds.

pub mod admiss;
pub mod error;
pub mod evofam;
pub mod linalg;
pub mod models;
pub mod opalg;
pub mod perturb;
pub mod probe;
pub mod quad;

pub use admiss::{
    b_relative_transfer, duhamel_frozen_residual, frozen_vs_evolution, gamma_evolution,
    gamma_global, gamma_semigroup, invariance_report, timevarying_gamma, tr_beta_transfer,
    AdmissibilityReport, BTransferReport, FrozenComparison, GammaMethod, GammaRow,
    GlobalGammaReport, InvarianceReport, TraceTransferReport,
};
pub use error::{Error, Result};
pub use models::{
    heat_point_model, mixed_nonlocal_model, model_operators, observation_trajectory,
    scalar_fixture, HeatPointBundle, MixedBundle, ModelConfig, ModelOperators, ScalarBundle,
    ScalarTable,
};
pub use evofam::{
    cocycle_residual, expm_oracle, mr_constant, propagate, smoothing_constant,
    solve_nonhomogeneous, EvolutionFamily, MRSolution, MrEstimate, Scheme, SmoothingEstimate,
};
pub use opalg::{
    assemble_mixed_laplacian, assemble_nonlocal_perturbation, assemble_variable_heat,
    dini_modulus, fractional_power, fractional_power_family, fractional_power_schur, make_grid,
    trace_norm, BoundarySpec, DiniModulus, DiscreteOperator, Grid, ObservationMap,
    OperatorFamily, XNorm,
};
pub use perturb::{
    h2_constant, h2_profile, mr_gap_bound, neumann_contraction, perturbation_consistency,
    perturbed_family, perturbed_pair, ContractionReport, GapReport, H2Report, PairSummary,
    PerturbedPair, VolterraEngine,
};
