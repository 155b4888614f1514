//! Norm descriptors and operator-norm estimation.
//!
//! The state norm is a weighted l^q norm with the grid quadrature weights;
//! the domain norm is the graph norm of a designated reference operator.
//! Operator norms between weighted l^2 spaces are exact (SVD); anything
//! involving the graph norm or q != 2 is estimated by probes and reported
//! as a certified lower bound next to a quadratic upper bound.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::probe;

/// Weighted l^q norm descriptor. Exponent 2 is the workhorse; other
/// exponents evaluate pointwise but give up exact operator norms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XNorm {
    pub weights: DVector<f64>,
    pub exponent: f64,
}

impl XNorm {
    pub fn weighted_l2(weights: DVector<f64>) -> Self {
        XNorm {
            weights,
            exponent: 2.0,
        }
    }

    pub fn eval(&self, v: &DVector<f64>) -> f64 {
        debug_assert_eq!(v.len(), self.weights.len());
        if (self.exponent - 2.0).abs() < 1e-14 {
            let mut s = 0.0;
            for i in 0..v.len() {
                s += self.weights[i] * v[i] * v[i];
            }
            s.sqrt()
        } else {
            let mut s = 0.0;
            for i in 0..v.len() {
                s += self.weights[i] * v[i].abs().powf(self.exponent);
            }
            s.powf(1.0 / self.exponent)
        }
    }

    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        probe::weighted_inner(x, y, &self.weights)
    }

    pub fn is_hilbert(&self) -> bool {
        (self.exponent - 2.0).abs() < 1e-14
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

/// Graph norm ||x|| + ||R x|| of a reference operator, measured in a state
/// norm supplied at evaluation time.
#[derive(Debug, Clone)]
pub struct DNorm {
    pub reference: Arc<DMatrix<f64>>,
}

impl DNorm {
    pub fn new(reference: Arc<DMatrix<f64>>) -> Self {
        DNorm { reference }
    }

    pub fn eval(&self, v: &DVector<f64>, x_norm: &XNorm) -> f64 {
        x_norm.eval(v) + x_norm.eval(&(self.reference.as_ref() * v))
    }
}

/// Result of an operator-norm estimate with its provenance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NormEstimate {
    /// Certified lower bound (attained by a concrete vector) or the exact
    /// value when `method` says so.
    pub value: f64,
    /// Upper bound from the quadratic relaxation of the graph norm.
    pub upper: f64,
    pub method: EstimateMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateMethod {
    SvdExact,
    CommutingExact,
    ProbeLowerBound,
}

/// Exact weighted-l^2 operator norm of a square map on one space.
pub fn weighted_op_norm(m: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    weighted_op_norm_rect(m, w, w)
}

/// Exact operator norm between weighted-l^2 spaces: sigma_max of
/// W_out^(1/2) M W_in^(-1/2).
pub fn weighted_op_norm_rect(
    m: &DMatrix<f64>,
    out_w: &DVector<f64>,
    in_w: &DVector<f64>,
) -> f64 {
    let mut scaled = m.clone();
    for i in 0..m.nrows() {
        let oi = out_w[i].sqrt();
        for j in 0..m.ncols() {
            scaled[(i, j)] *= oi / in_w[j].sqrt();
        }
    }
    linalg::spectral_norm(&scaled)
}

/// Operator norm from the graph norm of `reference` into a weighted-l^2
/// output norm: sup ||M x||_out / (||x||_in + ||reference x||_in).
///
/// When `m` and `reference` commute and share a real eigenbasis the value is
/// exact per mode. Otherwise the quadratic relaxation gives an upper bound
/// (the sum norm dominates the stacked norm) and gradient ascent from the
/// relaxed maximizer certifies a lower bound.
pub fn graph_to_out_norm(
    m: &DMatrix<f64>,
    out_w: &DVector<f64>,
    reference: &DMatrix<f64>,
    in_w: &DVector<f64>,
) -> NormEstimate {
    let n = reference.nrows();
    debug_assert_eq!(m.ncols(), n);

    if m.nrows() == n && out_w == in_w {
        if let Some(exact) = commuting_graph_norm(m, reference, in_w) {
            return exact;
        }
    }

    // Gram matrix of the quadratic graph norm: G = W + R^T W R.
    let wr = {
        let mut t = reference.clone();
        for i in 0..n {
            for j in 0..n {
                t[(i, j)] *= in_w[i];
            }
        }
        t
    };
    let g = DMatrix::from_diagonal(in_w) + reference.transpose() * wr;
    let (g_vals, g_vecs) = linalg::sorted_symmetric_eigen(&g);
    let g_inv_half = {
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            d[(i, i)] = 1.0 / g_vals[i].max(1e-300).sqrt();
        }
        &g_vecs * d * g_vecs.transpose()
    };
    let mut scaled = m * &g_inv_half;
    for i in 0..m.nrows() {
        let s = out_w[i].sqrt();
        for j in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    let svd = scaled.svd(false, true);
    let upper = svd.singular_values.max();
    // Right singular vector of the largest singular value, mapped back.
    let vt = svd.v_t.expect("requested V^T");
    let mut argmax = 0;
    for (i, sv) in svd.singular_values.iter().enumerate() {
        if *sv > svd.singular_values[argmax] {
            argmax = i;
        }
    }
    let x0 = &g_inv_half * vt.row(argmax).transpose();

    let out_norm = XNorm::weighted_l2(out_w.clone());
    let in_norm = XNorm::weighted_l2(in_w.clone());
    let ratio = |x: &DVector<f64>| -> f64 {
        let denom = in_norm.eval(x) + in_norm.eval(&(reference * x));
        if denom <= 0.0 {
            0.0
        } else {
            out_norm.eval(&(m * x)) / denom
        }
    };

    let mut best = x0.clone();
    let mut best_val = ratio(&best);
    // Normalized gradient ascent on the sum-norm ratio.
    let mut step = 0.5;
    for _ in 0..60 {
        let mx = m * &best;
        let rx = reference * &best;
        let nm = out_norm.eval(&mx).max(1e-30);
        let nx = in_norm.eval(&best).max(1e-30);
        let nr = in_norm.eval(&rx).max(1e-30);
        let denom = nx + nr;
        // d/dx of ||Mx||/(||x|| + ||Rx||) in the weighted inner products.
        let mut grad = DVector::zeros(n);
        for i in 0..m.nrows() {
            let c = out_w[i] * mx[i] / nm / denom;
            for j in 0..n {
                grad[j] += c * m[(i, j)];
            }
        }
        let coeff = best_val / denom;
        for j in 0..n {
            grad[j] -= coeff * in_w[j] * best[j] / nx;
        }
        for i in 0..n {
            let c = coeff * in_w[i] * rx[i] / nr;
            for j in 0..n {
                grad[j] -= c * reference[(i, j)];
            }
        }
        let gn: f64 = grad.norm();
        if gn < 1e-14 {
            break;
        }
        let trial = &best + grad * (step / gn);
        let tv = ratio(&trial);
        if tv > best_val {
            best = trial;
            best_val = tv;
            step *= 1.3;
        } else {
            step *= 0.5;
            if step < 1e-10 {
                break;
            }
        }
    }

    NormEstimate {
        value: best_val,
        upper,
        method: EstimateMethod::ProbeLowerBound,
    }
}

/// Exact graph-norm ratio for a pair sharing a real eigenbasis:
/// max_j |m_j| / (1 + |r_j|), valid because |M x| <= k |(I + |R|) x| per
/// mode and the triangle inequality closes the gap.
fn commuting_graph_norm(
    m: &DMatrix<f64>,
    reference: &DMatrix<f64>,
    w: &DVector<f64>,
) -> Option<NormEstimate> {
    let scale_m = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale_r = reference.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale_m == 0.0 {
        return Some(NormEstimate {
            value: 0.0,
            upper: 0.0,
            method: EstimateMethod::CommutingExact,
        });
    }
    let comm = m * reference - reference * m;
    let comm_scale = comm.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if comm_scale > 1e-10 * scale_m * scale_r {
        return None;
    }
    let eig = linalg::eig_real(reference).ok()?;
    if eig.condition > 1e10 {
        return None;
    }
    // Diagonalize m in the same basis; bail out if it refuses.
    let m_diag = &eig.vectors_inv * m * &eig.vectors;
    let mut off = 0.0f64;
    let mut best = 0.0f64;
    for i in 0..m_diag.nrows() {
        for j in 0..m_diag.ncols() {
            if i != j {
                off = off.max(m_diag[(i, j)].abs());
            }
        }
        let v = m_diag[(i, i)].abs() / (1.0 + eig.values[i].abs());
        best = best.max(v);
    }
    if off > 1e-8 * scale_m {
        return None;
    }
    // The per-mode bound needs a W-orthogonal eigenbasis (true for any
    // W-self-adjoint reference with simple spectrum).
    let n = reference.nrows();
    let mut wv = eig.vectors.clone();
    for i in 0..n {
        for j in 0..n {
            wv[(i, j)] *= w[i];
        }
    }
    let gram = eig.vectors.transpose() * wv;
    for i in 0..n {
        for j in 0..n {
            if i != j && gram[(i, j)].abs() > 1e-8 * (gram[(i, i)] * gram[(j, j)]).sqrt() {
                return None;
            }
        }
    }
    Some(NormEstimate {
        value: best,
        upper: best,
        method: EstimateMethod::CommutingExact,
    })
}
