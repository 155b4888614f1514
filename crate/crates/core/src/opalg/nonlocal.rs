//! Non-local boundary-feedback perturbations: state maps built from a kernel
//! integrated over the flux boundary, composed with the boundary trace.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::opalg::family::OperatorFamily;
use crate::opalg::grid::Grid;
use crate::opalg::norms::DNorm;
use crate::quad::validate_time_grid;

/// Kernel-to-state matrix at time `t`: column k sends the boundary value at
/// flux node k to b(t)·ψ(t, ·, z_k)·(boundary weight of z_k). Applying it to
/// the trace of u discretizes u ↦ b(t)·∫ ψ(t, ·, z) u(z) dz.
pub fn boundary_kernel_matrix(
    grid: &Grid,
    psi: &impl Fn(f64, &[f64], &[f64]) -> f64,
    b_of_t: &impl Fn(f64) -> f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    let n = grid.dof_count();
    let flux = grid.flux_dofs();
    let b = b_of_t(t);
    if !b.is_finite() {
        return Err(Error::invalid(format!(
            "time multiplier is non-finite at t = {t}"
        )));
    }
    let mut m = DMatrix::zeros(n, flux.len());
    for (k, &zk_dof) in flux.iter().enumerate() {
        let z = grid.dof_coord(zk_dof).to_vec();
        let wk = grid.flux_weights()[k];
        for i in 0..n {
            let x = grid.dof_coord(i).to_vec();
            let val = psi(t, &x, &z);
            if !val.is_finite() {
                return Err(Error::NonFiniteKernel { t, x, z });
            }
            m[(i, k)] = b * val * wk;
        }
    }
    Ok(m)
}

/// Family of state-space perturbation matrices N(t) = (kernel map) ∘ (trace):
/// N(t)u discretizes b(t)·∫ψ(t,·,z)u(z)dz over the flux boundary.
///
/// The perturbation is bounded on the state space, so the family's domain
/// norm uses a zero reference (graph norm degenerates to the state norm).
pub fn assemble_nonlocal_perturbation(
    grid: Arc<Grid>,
    psi: impl Fn(f64, &[f64], &[f64]) -> f64,
    b_of_t: impl Fn(f64) -> f64,
    time_grid: Vec<f64>,
) -> Result<OperatorFamily> {
    validate_time_grid(&time_grid)?;
    let n = grid.dof_count();
    let flux: Vec<usize> = grid.flux_dofs().to_vec();
    let mut samples = Vec::with_capacity(time_grid.len());
    for &t in &time_grid {
        let kernel = boundary_kernel_matrix(&grid, &psi, &b_of_t, t)?;
        let mut m = DMatrix::zeros(n, n);
        for (k, &dof) in flux.iter().enumerate() {
            for i in 0..n {
                m[(i, dof)] = kernel[(i, k)];
            }
        }
        samples.push(m);
    }
    if samples.len() > 1 && samples.iter().skip(1).all(|s| s == &samples[0]) {
        samples.truncate(1);
    }
    let d_norm = DNorm::new(Arc::new(DMatrix::zeros(n, n)));
    OperatorFamily::from_samples(grid, time_grid, samples, d_norm)
}

/// Quadrature L² norm of ψ(t,·,·) − ψ(s,·,·) over domain × flux boundary;
/// the closed-form modulus cross-check target.
pub fn kernel_modulus(
    grid: &Grid,
    psi: &impl Fn(f64, &[f64], &[f64]) -> f64,
    t: f64,
    s: f64,
) -> f64 {
    kernel_weighted_sum(grid, |x, z| {
        let d = psi(t, x, z) - psi(s, x, z);
        d * d
    })
    .sqrt()
}

/// Quadrature L² norm of ψ(t,·,·) itself.
pub fn kernel_l2(grid: &Grid, psi: &impl Fn(f64, &[f64], &[f64]) -> f64, t: f64) -> f64 {
    kernel_weighted_sum(grid, |x, z| {
        let v = psi(t, x, z);
        v * v
    })
    .sqrt()
}

fn kernel_weighted_sum(grid: &Grid, f: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
    let w = grid.dof_weights();
    let mut total = 0.0;
    for (k, &zk_dof) in grid.flux_dofs().iter().enumerate() {
        let z = grid.dof_coord(zk_dof).to_vec();
        let wk = grid.flux_weights()[k];
        for i in 0..grid.dof_count() {
            let x = grid.dof_coord(i).to_vec();
            total += w[i] * wk * f(&x, &z);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opalg::grid::{make_grid, BoundarySpec};
    use crate::opalg::norms::weighted_op_norm_rect;
    use approx::assert_relative_eq;

    fn mixed_grid(n: usize) -> Arc<Grid> {
        Arc::new(make_grid(1, &[(0.0, 1.0)], n, BoundarySpec::DirichletLeftNeumannRest).unwrap())
    }

    #[test]
    fn zero_kernel_gives_zero_family() {
        let fam = assemble_nonlocal_perturbation(
            mixed_grid(5),
            |_, _, _| 0.0,
            |_| 1.0,
            vec![0.0, 0.5, 1.0],
        )
        .unwrap();
        assert!(fam.is_constant());
        assert_relative_eq!(fam.sample(0).norm(), 0.0);
    }

    #[test]
    fn unit_kernel_copies_the_boundary_value_to_every_node() {
        // One flux node at x = 1 with counting weight 1: N u = u(1)·(1,...,1).
        let g = mixed_grid(5);
        let fam = assemble_nonlocal_perturbation(
            g.clone(),
            |_, _, _| 1.0,
            |_| 1.0,
            vec![0.0, 1.0],
        )
        .unwrap();
        let m = fam.sample(0);
        let boundary_dof = g.flux_dofs()[0];
        for i in 0..g.dof_count() {
            for j in 0..g.dof_count() {
                let expect = if j == boundary_dof { 1.0 } else { 0.0 };
                assert_relative_eq!(m[(i, j)], expect, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn separable_kernel_modulus_matches_closed_form() {
        // ψ(t,x,z) = (1+t)·x: the time increment has L²(Ω×∂Ω) norm
        // |t−s|·(∫x²dx)^(1/2) = |t−s|/√3; trapezoid quadrature converges to
        // it at second order.
        let psi = |t: f64, x: &[f64], _z: &[f64]| (1.0 + t) * x[0];
        let g = mixed_grid(65);
        let measured = kernel_modulus(&g, &psi, 0.9, 0.4);
        assert_relative_eq!(measured, 0.5 / 3.0_f64.sqrt(), max_relative = 1e-3);
    }

    #[test]
    fn nonfinite_kernel_is_rejected_with_location() {
        let err = assemble_nonlocal_perturbation(
            mixed_grid(5),
            |t, x, _| {
                if t > 0.4 && x[0] > 0.6 {
                    f64::NAN
                } else {
                    1.0
                }
            },
            |_| 1.0,
            vec![0.0, 0.5],
        )
        .unwrap_err();
        match err {
            Error::NonFiniteKernel { t, x, .. } => {
                assert_relative_eq!(t, 0.5, max_relative = 1e-15);
                assert!(x[0] > 0.6);
            }
            other => panic!("expected kernel error, got {other}"),
        }
    }

    #[test]
    fn boundary_map_norm_obeys_the_kernel_bound() {
        // ‖B(t)g‖ ≤ (sup modulus + ‖ψ(0)‖)·‖g‖ via Cauchy–Schwarz; the
        // Hilbert–Schmidt quadrature sum dominates the operator norm.
        let psi = |t: f64, x: &[f64], z: &[f64]| (1.0 + t) * x[0] + 0.2 * z[0];
        let b = |_: f64| 1.0;
        let g = mixed_grid(33);
        let horizon = 1.0;
        let mut sup_modulus: f64 = 0.0;
        for k in 0..=10 {
            let t = horizon * k as f64 / 10.0;
            sup_modulus = sup_modulus.max(kernel_modulus(&g, &psi, t, 0.0));
        }
        let c = sup_modulus + kernel_l2(&g, &psi, 0.0);
        for &t in &[0.0, 0.5, 1.0] {
            let kernel = boundary_kernel_matrix(&g, &psi, &b, t).unwrap();
            let norm = weighted_op_norm_rect(&kernel, g.dof_weights(), g.flux_weights());
            assert!(
                norm <= c + 1e-12,
                "boundary map norm {norm} exceeds kernel bound {c}"
            );
        }
    }
}
