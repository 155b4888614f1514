//! Discrete evolution systems: one-step propagation on a time grid, the
//! nonhomogeneous solver with zero initial data, and sampled estimates of
//! the regularity and smoothing constants attached to a family.

pub mod mr;
pub mod stepper;

pub use mr::{
    mr_constant, mr_ratio, smoothing_constant, solve_nonhomogeneous, source_lp_norm,
    MRSolution, MrEstimate, SmoothingEstimate,
};
pub use stepper::{
    cocycle_residual, expm_oracle, propagate, EvolutionFamily, Scheme, DEFAULT_MEMO_BUDGET,
};
