//! The moment-integral trace norm ‖x‖ + (∫₀^∞ ‖A e^{−tA} x‖^p dt)^{1/p},
//! the equivalent norm of the initial-value trace space.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::opalg::operator::DiscreteOperator;
use crate::opalg::spectral::{operator_eig, OperatorEig};
use crate::quad::adaptive_simpson;

/// Relative tolerance handed to the adaptive quadrature.
const QUAD_TOL: f64 = 1e-13;

pub fn trace_norm(op: &DiscreteOperator, x: &DVector<f64>, p: f64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::ExponentOutOfRange {
            name: "p",
            value: p,
            range: "(1, inf)",
        });
    }
    if x.len() != op.dim() {
        return Err(Error::ShapeMismatch {
            context: "trace norm input vs operator",
            left: x.len(),
            right: op.dim(),
        });
    }
    if x.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let eig = operator_eig(&op.matrix, Some(&op.x_norm.weights))?;
    let lambda_min = eig.values[0];
    if lambda_min <= 0.0 {
        return Err(Error::SpectrumNotPositive(lambda_min));
    }

    let coords = &eig.vectors_inv * x;
    let modal = modal_weights(op, &eig);
    let w = &op.x_norm.weights;
    let n = op.dim();

    // ‖A e^{−tA} x‖ at one time, through the eigenbasis.
    let flow_norm = |t: f64| -> f64 {
        match &modal {
            Some(gram_diag) => {
                let mut sq = 0.0f64;
                for j in 0..n {
                    let amp = coords[j] * eig.values[j] * (-eig.values[j] * t).exp();
                    sq += amp * amp * gram_diag[j];
                }
                sq.sqrt()
            }
            None => {
                let mut v: DVector<f64> = DVector::zeros(n);
                for j in 0..n {
                    let amp = coords[j] * eig.values[j] * (-eig.values[j] * t).exp();
                    for i in 0..n {
                        v[i] += amp * eig.vectors[(i, j)];
                    }
                }
                let mut sq = 0.0f64;
                for i in 0..n {
                    sq += w[i] * v[i] * v[i];
                }
                sq.sqrt()
            }
        }
    };

    // Beyond the cutoff the integrand has decayed by e^{−40} relative.
    let cutoff = 40.0 / (p * lambda_min);
    let integrand = |t: f64| flow_norm(t).powf(p);
    let integral = adaptive_simpson(&integrand, 0.0, cutoff, QUAD_TOL);
    Ok(op.x_norm.eval(x) + integral.powf(1.0 / p))
}

/// Squared X norms of the eigenvectors when they are X-orthogonal, enabling
/// the diagonal (per-mode) evaluation; None forces full vector assembly.
fn modal_weights(op: &DiscreteOperator, eig: &OperatorEig) -> Option<Vec<f64>> {
    let n = op.dim();
    let w = &op.x_norm.weights;
    let mut gram = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let mut dot = 0.0;
            for i in 0..n {
                dot += eig.vectors[(i, a)] * w[i] * eig.vectors[(i, b)];
            }
            gram[a * n + b] = dot;
        }
    }
    for a in 0..n {
        for b in (a + 1)..n {
            let scale = (gram[a * n + a] * gram[b * n + b]).sqrt();
            if gram[a * n + b].abs() > 1e-10 * scale {
                return None;
            }
        }
    }
    Some((0..n).map(|j| gram[j * n + j]).collect())
}
