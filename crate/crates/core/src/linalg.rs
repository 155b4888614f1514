//! Dense kernels shared by the operator and stepping layers: matrix
//! exponential, Schur-based spectral decompositions, and triangular matrix
//! functions.
//!
//! Everything here works on plain `DMatrix<f64>` with no awareness of grids
//! or quadrature weights; weighted-norm logic stays in the operator layer.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Degree-13 Pade numerator coefficients for the matrix exponential.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Norm thresholds below which the degree-(3,5,7,9) approximants are
/// accurate to double precision; above the last one the argument is scaled.
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

const PADE_LOW: [&[f64]; 4] = [
    &[120.0, 60.0, 12.0, 1.0],
    &[30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0],
    &[
        17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
    ],
    &[
        17643225600.0,
        8821612800.0,
        2075673600.0,
        302702400.0,
        30270240.0,
        2162160.0,
        110880.0,
        3960.0,
        90.0,
        1.0,
    ],
];

fn one_norm(m: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|v| v.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Matrix exponential by scaling and squaring with Pade approximants.
///
/// Relative accuracy is near machine precision for arguments with norm up to
/// about 1e3, which covers every stiffness level the grids here produce.
pub fn expm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "expm needs a square matrix");
    let norm = one_norm(m);
    if !norm.is_finite() {
        return DMatrix::from_element(n, n, f64::NAN);
    }

    for &(deg, theta) in THETA.iter() {
        if norm <= theta {
            return pade_low(m, deg);
        }
    }

    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = m / 2f64.powi(s);
    let mut result = pade13(&scaled);
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

fn pade_low(a: &DMatrix<f64>, deg: usize) -> DMatrix<f64> {
    let b = PADE_LOW
        .iter()
        .find(|c| c.len() == deg + 1)
        .expect("tabulated degree");
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    // Odd coefficients multiply powers of A^2 inside U = A * (...), even ones V.
    let mut u_inner = &id * b[1];
    let mut v = &id * b[0];
    let mut pow = id.clone();
    for k in 1..=(deg / 2) {
        pow = &pow * &a2;
        u_inner += &pow * b[2 * k + 1];
        v += &pow * b[2 * k];
    }
    let u = a * u_inner;
    solve_pade(&v, &u)
}

fn pade13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let b = &PADE13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u = a * (&a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1]);
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    solve_pade(&v, &u)
}

/// Solves (V - U) X = (V + U).
fn solve_pade(v: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let lhs = v - u;
    let rhs = v + u;
    lhs.lu()
        .solve(&rhs)
        .expect("Pade denominator is singular; argument norm outside supported range")
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Smallest and largest singular values, for condition estimates.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending and
/// deterministic column signs (largest-magnitude entry positive).
pub fn sorted_symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let se = nalgebra::SymmetricEigen::new(m.clone());
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = se.eigenvalues[src];
        let col = se.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 0..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, dst)] = sign * col[i];
        }
    }
    (values, vectors)
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > rel_tol * scale {
                return false;
            }
        }
    }
    true
}

/// Complex Schur form A = Z T Z^H computed from the real Schur form by
/// rotating each 2x2 bump on the subdiagonal into triangular shape.
pub fn complex_schur(m: &DMatrix<f64>) -> Result<(DMatrix<Complex<f64>>, DMatrix<Complex<f64>>)> {
    let n = m.nrows();
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::invalid("Schur iteration failed to converge"))?;
    let (q, t) = schur.unpack();
    let mut tc: DMatrix<Complex<f64>> = t.map(|v| Complex::new(v, 0.0));
    let mut zc: DMatrix<Complex<f64>> = q.map(|v| Complex::new(v, 0.0));

    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    for mrow in (1..n).rev() {
        let k = mrow - 1;
        let sub = tc[(mrow, k)];
        if sub.norm() > f64::EPSILON * scale {
            // Eigenvalue of the trailing 2x2 block, shifted by the corner entry.
            let a = tc[(k, k)];
            let b = tc[(k, mrow)];
            let c = tc[(mrow, k)];
            let d = tc[(mrow, mrow)];
            let half = (a - d) * Complex::new(0.5, 0.0);
            let disc = (half * half + b * c).sqrt();
            let mu = if (half + disc).norm() >= (half - disc).norm() {
                half + disc
            } else {
                half - disc
            };
            let r = (mu.norm_sqr() + c.norm_sqr()).sqrt();
            let cs = mu / r;
            let sn = c / r;
            for j in k..n {
                let t1 = tc[(k, j)];
                let t2 = tc[(mrow, j)];
                tc[(k, j)] = cs.conj() * t1 + sn.conj() * t2;
                tc[(mrow, j)] = -sn * t1 + cs * t2;
            }
            for i in 0..=mrow {
                let t1 = tc[(i, k)];
                let t2 = tc[(i, mrow)];
                tc[(i, k)] = t1 * cs + t2 * sn;
                tc[(i, mrow)] = -t1 * sn.conj() + t2 * cs.conj();
            }
            for i in 0..n {
                let z1 = zc[(i, k)];
                let z2 = zc[(i, mrow)];
                zc[(i, k)] = z1 * cs + z2 * sn;
                zc[(i, mrow)] = -z1 * sn.conj() + z2 * cs.conj();
            }
        }
        tc[(mrow, k)] = Complex::new(0.0, 0.0);
    }
    Ok((zc, tc))
}

/// Dense eigendecomposition of a real matrix with real spectrum.
pub struct Eig {
    /// Eigenvalues, ascending.
    pub values: DVector<f64>,
    /// Eigenvector columns, unit Euclidean norm.
    pub vectors: DMatrix<f64>,
    /// Inverse of the eigenvector matrix.
    pub vectors_inv: DMatrix<f64>,
    /// Euclidean condition number of the eigenvector matrix.
    pub condition: f64,
}

/// Eigendecomposition via the symmetric solver when possible, otherwise via
/// the complex Schur form plus triangular back-substitution.
///
/// Fails with `ComplexSpectrum` when the matrix has eigenvalue pairs off the
/// real axis beyond roundoff.
pub fn eig_real(m: &DMatrix<f64>) -> Result<Eig> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::ShapeMismatch {
            context: "eigendecomposition needs a square matrix",
            left: n,
            right: m.ncols(),
        });
    }
    if is_symmetric(m, 1e-12) {
        let (values, vectors) = sorted_symmetric_eigen(m);
        let vectors_inv = vectors.transpose();
        return Ok(Eig {
            values,
            vectors,
            vectors_inv,
            condition: 1.0,
        });
    }

    let (z, t) = complex_schur(m)?;
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let max_imag = (0..n).fold(0.0f64, |a, i| a.max(t[(i, i)].im.abs()));
    if max_imag > 1e-9 * scale {
        return Err(Error::ComplexSpectrum(max_imag));
    }

    // Real triangular factor; eigenvector of lambda_j by back-substitution.
    let tr: DMatrix<f64> = t.map(|v| v.re);
    let zr: DMatrix<f64> = z.map(|v| v.re);
    let mut y = DMatrix::<f64>::zeros(n, n);
    let floor = f64::EPSILON * scale.max(1.0);
    for j in 0..n {
        let lambda = tr[(j, j)];
        y[(j, j)] = 1.0;
        for k in (0..j).rev() {
            let mut s = 0.0;
            for l in (k + 1)..=j {
                s += tr[(k, l)] * y[(l, j)];
            }
            let mut denom = tr[(k, k)] - lambda;
            if denom.abs() < floor {
                denom = if denom < 0.0 { -floor } else { floor };
            }
            y[(k, j)] = -s / denom;
        }
    }
    let mut vectors = &zr * y;
    for j in 0..n {
        let norm = vectors.column(j).norm();
        let col = vectors.column(j);
        let mut pivot = 0;
        for i in 0..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, j)] *= sign / norm;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| tr[(a, a)].total_cmp(&tr[(b, b)]));
    let mut values = DVector::zeros(n);
    let mut sorted_vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = tr[(src, src)];
        sorted_vectors.set_column(dst, &vectors.column(src));
    }

    let condition = condition_number(&sorted_vectors);
    let vectors_inv = sorted_vectors
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::DefectiveMatrix {
            cond: condition,
            limit: f64::INFINITY,
        })?;
    Ok(Eig {
        values,
        vectors: sorted_vectors,
        vectors_inv,
        condition,
    })
}

/// Applies an analytic function to a complex upper-triangular matrix by the
/// Parlett recurrence.
///
/// Confluent diagonal entries fall back to the first-derivative substitution,
/// which is exact for 2-chains; longer Jordan chains keep finite output with
/// reduced accuracy.
pub fn triangular_function(
    t: &DMatrix<Complex<f64>>,
    f: impl Fn(Complex<f64>) -> Complex<f64>,
    fprime: impl Fn(Complex<f64>) -> Complex<f64>,
) -> DMatrix<Complex<f64>> {
    let n = t.nrows();
    let mut ft = DMatrix::<Complex<f64>>::zeros(n, n);
    for i in 0..n {
        ft[(i, i)] = f(t[(i, i)]);
    }
    let scale = t.iter().fold(0.0f64, |a, v| a.max(v.norm())).max(1e-300);
    let confluent = 1e-10 * scale;
    for p in 1..n {
        for i in 0..(n - p) {
            let j = i + p;
            let mut s = t[(i, j)] * (ft[(j, j)] - ft[(i, i)]);
            for k in (i + 1)..j {
                s += t[(i, k)] * ft[(k, j)] - ft[(i, k)] * t[(k, j)];
            }
            let denom = t[(j, j)] - t[(i, i)];
            ft[(i, j)] = if denom.norm() > confluent {
                s / denom
            } else {
                let mid = (t[(i, i)] + t[(j, j)]) * Complex::new(0.5, 0.0);
                t[(i, j)] * fprime(mid)
            };
        }
    }
    ft
}

/// Real part of Z F Z^H for a complex Schur pair; the imaginary part of the
/// product is roundoff whenever the input matrix was real.
pub fn from_schur(
    z: &DMatrix<Complex<f64>>,
    f: &DMatrix<Complex<f64>>,
) -> DMatrix<f64> {
    let prod = z * f * z.adjoint();
    prod.map(|v| v.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn expm_of_zero_is_identity() {
        let z = DMatrix::<f64>::zeros(4, 4);
        let e = expm(&z);
        assert_eq!(e, DMatrix::<f64>::identity(4, 4));
    }

    #[test]
    fn expm_matches_scalar_exponential_on_diagonals() {
        for &t in &[1e-4, 0.3, 2.0, 17.0, 350.0] {
            let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-t, -0.5 * t, 0.25 * t]));
            let e = expm(&d);
            for (i, &lam) in [-t, -0.5 * t, 0.25 * t].iter().enumerate() {
                assert_relative_eq!(e[(i, i)], lam.exp(), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn expm_of_nilpotent_truncates() {
        let n = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&(-n.clone()));
        let expect = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 1.0]);
        assert!((e - expect).abs().max() <= 1e-15);
    }

    #[test]
    fn expm_group_law_on_rotation_block() {
        // exp of a skew block is a rotation; exp(A)exp(A) = exp(2A).
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.3, 1.3, 0.0]);
        let e1 = expm(&a);
        let e2 = expm(&(2.0 * &a));
        let prod = &e1 * &e1;
        assert!((prod - e2).abs().max() <= 1e-13);
    }

    #[test]
    fn eig_real_recovers_tridiagonal_toeplitz_spectrum() {
        // Closed form (2/h^2)(1 - cos(k pi h)) for the scaled second difference.
        let m = 7usize;
        let h = 1.0 / (m as f64 + 1.0);
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            a[(i, i)] = 2.0 / (h * h);
            if i > 0 {
                a[(i, i - 1)] = -1.0 / (h * h);
            }
            if i + 1 < m {
                a[(i, i + 1)] = -1.0 / (h * h);
            }
        }
        let eig = eig_real(&a).unwrap();
        for k in 1..=m {
            let expect = 2.0 / (h * h) * (1.0 - (k as f64 * std::f64::consts::PI * h).cos());
            assert_relative_eq!(eig.values[k - 1], expect, max_relative = 1e-11);
        }
    }

    #[test]
    fn eig_real_handles_nonsymmetric_real_spectrum() {
        // Diagonal scaling of an SPD matrix keeps the spectrum real.
        let s = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 5.0]);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5]));
        let a = &d * &s;
        let eig = eig_real(&a).unwrap();
        let recomposed = &eig.vectors * DMatrix::from_diagonal(&eig.values) * &eig.vectors_inv;
        assert!((recomposed - a).abs().max() <= 1e-10);
    }

    #[test]
    fn eig_real_rejects_rotation_spectrum() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!(matches!(eig_real(&a), Err(Error::ComplexSpectrum(_))));
    }

    #[test]
    fn complex_schur_recomposes() {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, -2.0, 0.3, 2.0, 0.0, 0.1, 0.0, 0.0, 1.5],
        );
        let (z, t) = complex_schur(&a).unwrap();
        // Strictly lower part vanishes.
        for i in 0..3 {
            for j in 0..i {
                assert!(t[(i, j)].norm() <= 1e-12);
            }
        }
        let back = &z * &t * z.adjoint();
        let diff = (0..9).fold(0.0f64, |acc, k| {
            let (i, j) = (k / 3, k % 3);
            acc.max((back[(i, j)] - Complex::new(a[(i, j)], 0.0)).norm())
        });
        assert!(diff <= 1e-12, "recomposition error {diff}");
    }

    #[test]
    fn triangular_function_square_root_squares_back() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 0.0, 3.0, 1.0, 0.0, 0.0, 4.5]);
        let (z, t) = complex_schur(&a).unwrap();
        let f = triangular_function(
            &t,
            |lam| lam.sqrt(),
            |lam| Complex::new(0.5, 0.0) / lam.sqrt(),
        );
        let root = from_schur(&z, &f);
        assert!((&root * &root - a).abs().max() <= 1e-11);
    }

    #[test]
    fn triangular_function_is_exact_on_jordan_2_chain() {
        // [[4, 1], [0, 4]]^(1/2) = [[2, 1/4], [0, 2]].
        let t = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 0.0, 4.0]).map(|v| Complex::new(v, 0.0));
        let f = triangular_function(
            &t,
            |lam| lam.sqrt(),
            |lam| Complex::new(0.5, 0.0) / lam.sqrt(),
        );
        assert_relative_eq!(f[(0, 0)].re, 2.0, max_relative = 1e-14);
        assert_relative_eq!(f[(0, 1)].re, 0.25, max_relative = 1e-14);
        assert_relative_eq!(f[(1, 1)].re, 2.0, max_relative = 1e-14);
    }
}
