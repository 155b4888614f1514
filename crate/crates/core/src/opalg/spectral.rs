//! Eigendecompositions that respect the quadrature inner product.
//!
//! Assembled flux rows are not symmetric in the plain euclidean sense, but
//! W·M is, so D^{1/2} M D^{-1/2} (D = diag of quadrature weights) restores a
//! symmetric eigenproblem. Truly non-normal matrices fall through to the
//! general real eigendecomposition.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{eig_real, is_symmetric, sorted_symmetric_eigen};

/// Real eigendecomposition with eigenvalues ascending. On the symmetric and
/// weight-symmetrizable paths the columns are orthonormal in the matching
/// inner product and `condition` is exact; the general path reports the
/// euclidean condition number of the eigenvector matrix.
#[derive(Debug, Clone)]
pub struct OperatorEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
    pub vectors_inv: DMatrix<f64>,
    pub condition: f64,
}

impl OperatorEig {
    /// Applies f(λ) mode by mode: V·diag(f(λ))·V⁻¹.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        &scaled * &self.vectors_inv
    }
}

pub fn operator_eig(
    matrix: &DMatrix<f64>,
    weights: Option<&DVector<f64>>,
) -> Result<OperatorEig> {
    if is_symmetric(matrix, 1e-12) {
        let (values, vectors) = sorted_symmetric_eigen(matrix);
        let vectors_inv = vectors.transpose();
        return Ok(OperatorEig {
            values,
            vectors,
            vectors_inv,
            condition: 1.0,
        });
    }
    if let Some(w) = weights {
        if w.len() == matrix.nrows() && w.iter().all(|&wi| wi > 0.0) {
            let sqrt_w: Vec<f64> = w.iter().map(|wi| wi.sqrt()).collect();
            let mut sym = matrix.clone();
            for i in 0..sym.nrows() {
                for j in 0..sym.ncols() {
                    sym[(i, j)] *= sqrt_w[i] / sqrt_w[j];
                }
            }
            if is_symmetric(&sym, 1e-10) {
                // Symmetrize exactly before factoring so roundoff from the
                // scaling cannot leak into complex pairs.
                let sym = (&sym + sym.transpose()) * 0.5;
                let (values, q) = sorted_symmetric_eigen(&sym);
                let n = q.nrows();
                let mut vectors = q.clone();
                let mut vectors_inv = q.transpose();
                for i in 0..n {
                    for j in 0..n {
                        vectors[(i, j)] /= sqrt_w[i];
                        vectors_inv[(j, i)] *= sqrt_w[i];
                    }
                }
                let wmax = w.iter().cloned().fold(f64::MIN, f64::max);
                let wmin = w.iter().cloned().fold(f64::MAX, f64::min);
                return Ok(OperatorEig {
                    values,
                    vectors,
                    vectors_inv,
                    condition: (wmax / wmin).sqrt(),
                });
            }
        }
    }
    let eig = eig_real(matrix)?;
    Ok(OperatorEig {
        values: eig.values,
        vectors: eig.vectors,
        vectors_inv: eig.vectors_inv,
        condition: eig.condition,
    })
}

/// Just the (real) spectrum, ascending.
pub fn real_spectrum(
    matrix: &DMatrix<f64>,
    weights: Option<&DVector<f64>>,
) -> Result<Vec<f64>> {
    Ok(operator_eig(matrix, weights)?.values.iter().copied().collect())
}
