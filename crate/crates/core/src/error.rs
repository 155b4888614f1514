use thiserror::Error;

/// Errors surfaced by grid construction, assembly, stepping, and estimators.
///
/// Variants carry enough location data (node, time, step index) to point at
/// the offending input rather than just the failing routine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid needs at least 3 nodes per dimension, got {0}")]
    GridTooCoarse(usize),

    #[error("invalid domain extent [{lo}, {hi}]")]
    BadExtent { lo: f64, hi: f64 },

    #[error("boundary partition leaves no Dirichlet nodes but a Dirichlet model was requested")]
    EmptyDirichletBoundary,

    #[error("coefficient matrix loses ellipticity at t = {t}, x = {x:?} (min eigenvalue {min_eig:.3e})")]
    EllipticityLost { t: f64, x: Vec<f64>, min_eig: f64 },

    #[error("kernel evaluation returned a non-finite value at t = {t}, x = {x:?}, z = {z:?}")]
    NonFiniteKernel { t: f64, x: Vec<f64>, z: Vec<f64> },

    #[error("operator shapes disagree: {context} ({left} vs {right})")]
    ShapeMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("time grid must start at 0, end at the horizon, and increase strictly")]
    BadTimeGrid,

    #[error("anchor time {0} is not a node of the time grid")]
    AnchorOffGrid(f64),

    #[error("step {index} at t = {t} produced a singular one-step matrix")]
    SingularStep { index: usize, t: f64 },

    #[error("step size {0} is below the 1e-12 quadrature floor")]
    StepUnderflow(f64),

    #[error("matrix is defective to working precision (eigenvector condition {cond:.3e} exceeds {limit:.1e}); use the Schur-based fractional power instead")]
    DefectiveMatrix { cond: f64, limit: f64 },

    #[error("spectrum is not in the open right half-plane (min real part {0:.3e})")]
    SpectrumNotPositive(f64),

    #[error("complex eigenvalues encountered where a real spectrum is required (max imaginary part {0:.3e})")]
    ComplexSpectrum(f64),

    #[error("exponent {name} = {value} outside the valid range {range}")]
    ExponentOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("sub-interval [{s}, {tau_prime}] must satisfy s < tau' < horizon {tau}")]
    BadSubInterval { s: f64, tau_prime: f64, tau: f64 },

    #[error("{0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for free-form parameter validation failures.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
