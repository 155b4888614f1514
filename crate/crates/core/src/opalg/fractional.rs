//! Principal-branch fractional powers of positive discrete operators.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{complex_schur, from_schur, triangular_function};
use crate::opalg::family::OperatorFamily;
use crate::opalg::operator::DiscreteOperator;
use crate::opalg::spectral::operator_eig;

/// Eigenvector condition beyond which the eigendecomposition route is
/// numerically meaningless and the Schur route must be used.
pub const DEFECT_LIMIT: f64 = 1e8;

/// A^α by dense eigendecomposition, for α ∈ (0, 1]. α = 1 returns the matrix
/// unchanged, bit for bit. Complex (but right-half-plane) spectra fall
/// through to the Schur route transparently; defective matrices are refused
/// with a pointer to [`fractional_power_schur`].
pub fn fractional_power(op: &DiscreteOperator, alpha: f64) -> Result<DiscreteOperator> {
    validate_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(op.clone());
    }
    let matrix = fractional_matrix(op, alpha)?;
    Ok(DiscreteOperator {
        grid: op.grid.clone(),
        matrix,
        x_norm: op.x_norm.clone(),
        d_norm: op.d_norm.clone(),
    })
}

/// A^α through the complex Schur form and the triangular substitution
/// recurrence. Handles defective matrices (with the accuracy loss inherent
/// to confluent eigenvalues) and complex spectra in the right half-plane.
pub fn fractional_power_schur(op: &DiscreteOperator, alpha: f64) -> Result<DiscreteOperator> {
    validate_alpha(alpha)?;
    if alpha == 1.0 {
        return Ok(op.clone());
    }
    let matrix = schur_power(&op.matrix, alpha)?;
    Ok(DiscreteOperator {
        grid: op.grid.clone(),
        matrix,
        x_norm: op.x_norm.clone(),
        d_norm: op.d_norm.clone(),
    })
}

/// Applies the fractional power node by node across a family, keeping the
/// family's norms (every A(t)^α acts on the same domain).
pub fn fractional_power_family(family: &OperatorFamily, alpha: f64) -> Result<OperatorFamily> {
    validate_alpha(alpha)?;
    if alpha == 1.0 {
        return family.map_samples(|m| Ok(m.clone()));
    }
    family.map_samples(|m| {
        let op = DiscreteOperator {
            grid: family.grid.clone(),
            matrix: m.clone(),
            x_norm: family.x_norm.clone(),
            d_norm: family.d_norm.clone(),
        };
        fractional_matrix(&op, alpha)
    })
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::ExponentOutOfRange {
            name: "alpha",
            value: alpha,
            range: "(0, 1]",
        });
    }
    Ok(())
}

fn fractional_matrix(
    op: &DiscreteOperator,
    alpha: f64,
) -> Result<nalgebra::DMatrix<f64>> {
    match operator_eig(&op.matrix, Some(&op.x_norm.weights)) {
        Ok(eig) => {
            if eig.condition > DEFECT_LIMIT {
                return Err(Error::DefectiveMatrix {
                    cond: eig.condition,
                    limit: DEFECT_LIMIT,
                });
            }
            let min = eig.values[0];
            if min <= 0.0 {
                return Err(Error::SpectrumNotPositive(min));
            }
            Ok(eig.map(|l| l.powf(alpha)))
        }
        Err(Error::ComplexSpectrum(_)) => schur_power(&op.matrix, alpha),
        Err(e) => Err(e),
    }
}

fn schur_power(m: &nalgebra::DMatrix<f64>, alpha: f64) -> Result<nalgebra::DMatrix<f64>> {
    let (z, t) = complex_schur(m)?;
    let min_re = (0..t.nrows())
        .map(|i| t[(i, i)].re)
        .fold(f64::INFINITY, f64::min);
    if min_re <= 0.0 {
        return Err(Error::SpectrumNotPositive(min_re));
    }
    let f = |lambda: Complex<f64>| (lambda.ln() * alpha).exp();
    let fprime = |lambda: Complex<f64>| (lambda.ln() * (alpha - 1.0)).exp() * alpha;
    let powered = triangular_function(&t, f, fprime);
    Ok(from_schur(&z, &powered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opalg::assembly::{assemble_mixed_laplacian, assemble_variable_heat, isotropic};
    use crate::opalg::grid::{make_grid, BoundarySpec};
    use crate::opalg::spectral::real_spectrum;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use std::sync::Arc;

    fn diag_op(entries: &[f64]) -> DiscreteOperator {
        let n = entries.len();
        let grid = Arc::new(
            make_grid(1, &[(0.0, 1.0)], n + 2, BoundarySpec::AllDirichlet).unwrap(),
        );
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(entries));
        DiscreteOperator::new(grid, m).unwrap()
    }

    fn laplacian_op() -> DiscreteOperator {
        let fam = assemble_variable_heat(
            Arc::new(make_grid(1, &[(0.0, 1.0)], 5, BoundarySpec::AllDirichlet).unwrap()),
            isotropic(|_, _| 1.0),
            |_, _| 0.0,
            vec![0.0, 1.0],
        )
        .unwrap();
        fam.frozen(0)
    }

    #[test]
    fn diagonal_square_root() {
        let op = diag_op(&[1.0, 4.0]);
        let half = fractional_power(&op, 0.5).unwrap();
        assert_relative_eq!(half.matrix[(0, 0)], 1.0, max_relative = 1e-14);
        assert_relative_eq!(half.matrix[(1, 1)], 2.0, max_relative = 1e-14);
        assert_relative_eq!(half.matrix[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn powers_compose_back_to_the_operator() {
        let op = laplacian_op();
        let quarter = fractional_power(&op, 0.25).unwrap();
        let rest = fractional_power(&op, 0.75).unwrap();
        let recomposed = &quarter.matrix * &rest.matrix;
        assert_relative_eq!(
            (recomposed - &op.matrix).norm(),
            0.0,
            epsilon = 1e-10 * op.matrix.norm()
        );
    }

    #[test]
    fn unit_exponent_is_the_identity_map() {
        let op = laplacian_op();
        let one = fractional_power(&op, 1.0).unwrap();
        assert_eq!(one.matrix, op.matrix);
    }

    #[test]
    fn laplacian_square_root_has_square_root_spectrum() {
        let op = laplacian_op();
        let half = fractional_power(&op, 0.5).unwrap();
        let base = real_spectrum(&op.matrix, Some(&op.x_norm.weights)).unwrap();
        let powered = real_spectrum(&half.matrix, Some(&half.x_norm.weights)).unwrap();
        for (b, p) in base.iter().zip(&powered) {
            assert_relative_eq!(p, &b.sqrt(), max_relative = 1e-10);
        }
    }

    #[test]
    fn weighted_nonsymmetric_operator_keeps_semigroup_property() {
        let g = Arc::new(
            make_grid(1, &[(0.0, 1.0)], 9, BoundarySpec::DirichletLeftNeumannRest).unwrap(),
        );
        let op = assemble_mixed_laplacian(g).unwrap();
        let half = fractional_power(&op, 0.5).unwrap();
        let squared = &half.matrix * &half.matrix;
        assert_relative_eq!(
            (squared - &op.matrix).norm(),
            0.0,
            epsilon = 1e-9 * op.matrix.norm()
        );
    }

    #[test]
    fn defective_matrix_is_refused_then_served_by_the_schur_route() {
        let grid = Arc::new(
            make_grid(1, &[(0.0, 1.0)], 4, BoundarySpec::AllDirichlet).unwrap(),
        );
        let jordan = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let op = DiscreteOperator::new(grid, jordan.clone()).unwrap();
        match fractional_power(&op, 0.5) {
            Err(Error::DefectiveMatrix { cond, .. }) => assert!(cond > DEFECT_LIMIT),
            other => panic!("expected defectiveness refusal, got {other:?}"),
        }
        let half = fractional_power_schur(&op, 0.5).unwrap();
        let squared = &half.matrix * &half.matrix;
        assert_relative_eq!((squared - &jordan).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn complex_spectrum_in_right_half_plane_falls_through_to_schur() {
        let grid = Arc::new(
            make_grid(1, &[(0.0, 1.0)], 4, BoundarySpec::AllDirichlet).unwrap(),
        );
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]);
        let op = DiscreteOperator::new(grid, m.clone()).unwrap();
        let half = fractional_power(&op, 0.5).unwrap();
        let squared = &half.matrix * &half.matrix;
        assert_relative_eq!((squared - &m).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn negative_spectrum_is_rejected() {
        let op = diag_op(&[1.0, -2.0]);
        assert!(matches!(
            fractional_power(&op, 0.5),
            Err(Error::SpectrumNotPositive(_))
        ));
    }

    #[test]
    fn exponent_range_is_enforced() {
        let op = diag_op(&[1.0, 2.0]);
        assert!(fractional_power(&op, 0.0).is_err());
        assert!(fractional_power(&op, 1.5).is_err());
    }
}
