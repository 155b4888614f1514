//! Operator algebra: grids, norms, assembly, spectral calculus, and the
//! structural estimates (drift modulus, trace norm) the certification layers
//! build on.

pub mod assembly;
pub mod dini;
pub mod family;
pub mod fractional;
pub mod grid;
pub mod nonlocal;
pub mod norms;
pub mod operator;
pub mod spectral;
pub mod trace;

pub use assembly::{assemble_mixed_laplacian, assemble_variable_heat, isotropic};
pub use dini::{dini_modulus, geometric_lags, DiniModulus};
pub use family::OperatorFamily;
pub use fractional::{fractional_power, fractional_power_family, fractional_power_schur};
pub use grid::{make_grid, BoundarySpec, Grid, NodeRole};
pub use nonlocal::{assemble_nonlocal_perturbation, kernel_l2, kernel_modulus};
pub use norms::{
    graph_to_out_norm, weighted_op_norm, weighted_op_norm_rect, DNorm, EstimateMethod,
    NormEstimate, XNorm,
};
pub use operator::{DiscreteOperator, ObservationKind, ObservationMap};
pub use spectral::{operator_eig, real_spectrum, OperatorEig};
pub use trace::trace_norm;
