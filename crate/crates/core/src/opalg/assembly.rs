//! Finite-difference assembly of the model operators: variable-coefficient
//! heat operators in non-divergence form and the constant-coefficient
//! mixed-boundary Laplacian.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::opalg::family::OperatorFamily;
use crate::opalg::grid::Grid;
use crate::opalg::norms::DNorm;
use crate::opalg::operator::DiscreteOperator;
use crate::quad::validate_time_grid;

/// Wraps a scalar diffusion coefficient as an isotropic matrix coefficient.
pub fn isotropic(
    f: impl Fn(f64, &[f64]) -> f64,
) -> impl Fn(f64, &[f64]) -> [[f64; 2]; 2] {
    move |t, x| {
        let v = f(t, x);
        [[v, 0.0], [0.0, v]]
    }
}

/// Second-order operator u ↦ −Σ a_ij ∂_i∂_j u − b0·u sampled on the time
/// grid. Coefficients are evaluated at the nodes (non-divergence form), so a
/// spatially constant coefficient scales the Laplacian matrix exactly.
///
/// The coefficient matrix must stay elliptic at every sampled (t, x); the
/// smallest symmetric-part eigenvalue seen is recorded on the family.
pub fn assemble_variable_heat(
    grid: Arc<Grid>,
    a: impl Fn(f64, &[f64]) -> [[f64; 2]; 2],
    b0: impl Fn(f64, &[f64]) -> f64,
    time_grid: Vec<f64>,
) -> Result<OperatorFamily> {
    validate_time_grid(&time_grid)?;
    let mut beta_hat = f64::INFINITY;
    let mut samples = Vec::with_capacity(time_grid.len());
    for &t in &time_grid {
        let (m, beta) = assemble_at(&grid, t, &a, &b0)?;
        beta_hat = beta_hat.min(beta);
        samples.push(m);
    }
    if samples.len() > 1 && samples.iter().skip(1).all(|s| s == &samples[0]) {
        samples.truncate(1);
    }
    let d_norm = DNorm::new(Arc::new(samples[0].clone()));
    let mut fam = OperatorFamily::from_samples(grid, time_grid, samples, d_norm)?;
    fam.set_ellipticity(beta_hat);
    Ok(fam)
}

/// −Δ with displacement rows eliminated and flux rows closed by ghost-node
/// reflection. Rejects grids without a displacement boundary (the operator
/// would be singular) or without a flux boundary (nothing mixed about it).
pub fn assemble_mixed_laplacian(grid: Arc<Grid>) -> Result<DiscreteOperator> {
    let has_dirichlet = (0..grid.dof_count()).count() < grid.n_per_dim.pow(grid.dimension as u32);
    if !has_dirichlet {
        return Err(Error::EmptyDirichletBoundary);
    }
    if grid.flux_dofs().is_empty() {
        return Err(Error::invalid(
            "grid has no flux boundary; use the variable-coefficient assembly for pure displacement conditions",
        ));
    }
    let identity = |_t: f64, _x: &[f64]| [[1.0, 0.0], [0.0, 1.0]];
    let zero = |_t: f64, _x: &[f64]| 0.0;
    let (m, _) = assemble_at(&grid, 0.0, &identity, &zero)?;
    DiscreteOperator::new(grid, m)
}

/// One assembled matrix plus the smallest coefficient-ellipticity eigenvalue
/// over the grid at this time.
fn assemble_at(
    grid: &Grid,
    t: f64,
    a: &impl Fn(f64, &[f64]) -> [[f64; 2]; 2],
    b0: &impl Fn(f64, &[f64]) -> f64,
) -> Result<(DMatrix<f64>, f64)> {
    let n = grid.dof_count();
    let dim = grid.dimension;
    let mut m = DMatrix::zeros(n, n);
    let mut beta = f64::INFINITY;

    for i in 0..n {
        let x = grid.dof_coord(i).to_vec();
        let coeff = a(t, &x);
        let min_eig = coeff_min_eig(&coeff, dim);
        if !(min_eig > 0.0) {
            return Err(Error::EllipticityLost {
                t,
                x,
                min_eig,
            });
        }
        beta = beta.min(min_eig);
        let b = b0(t, &x);
        if !b.is_finite() {
            return Err(Error::invalid(format!(
                "zero-order coefficient is non-finite at t = {t}, x = {x:?}"
            )));
        }

        let idx = grid.dof_lattice(i);
        for d in 0..dim {
            let c = coeff[d][d] / (grid.h[d] * grid.h[d]);
            m[(i, i)] += 2.0 * c;
            for offset in [-1isize, 1] {
                if let Some(j) = resolve_neighbor(grid, &idx, d, offset, 0, 0) {
                    m[(i, j)] -= c;
                }
            }
        }
        if dim == 2 {
            let cross = (coeff[0][1] + coeff[1][0]) / (4.0 * grid.h[0] * grid.h[1]);
            if cross != 0.0 {
                for (dx, dy, sign) in
                    [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)]
                {
                    if let Some(j) = resolve_neighbor(grid, &idx, 0, dx, 1, dy) {
                        m[(i, j)] -= cross * sign;
                    }
                }
            }
        }
        m[(i, i)] -= b;
    }
    Ok((m, beta))
}

/// Smallest eigenvalue of the symmetric part of the coefficient matrix.
fn coeff_min_eig(a: &[[f64; 2]; 2], dim: usize) -> f64 {
    if dim == 1 {
        a[0][0]
    } else {
        let mean = 0.5 * (a[0][0] + a[1][1]);
        let radius =
            ((0.5 * (a[0][0] - a[1][1])).powi(2) + (0.5 * (a[0][1] + a[1][0])).powi(2)).sqrt();
        mean - radius
    }
}

/// DOF index of the lattice neighbor offset by (off_a in dim_a, off_b in
/// dim_b). Out-of-range steps reflect across the boundary (ghost nodes of the
/// zero-flux condition); displacement-boundary neighbors carry value 0 and
/// resolve to None.
fn resolve_neighbor(
    grid: &Grid,
    idx: &[usize; 2],
    dim_a: usize,
    off_a: isize,
    dim_b: usize,
    off_b: isize,
) -> Option<usize> {
    let n = grid.n_per_dim as isize;
    let mut target = *idx;
    for (d, off) in [(dim_a, off_a), (dim_b, off_b)] {
        if off == 0 {
            continue;
        }
        let mut raw = target[d] as isize + off;
        if raw < 0 {
            raw = -raw;
        }
        if raw >= n {
            raw = 2 * (n - 1) - raw;
        }
        target[d] = raw as usize;
    }
    grid.dof_of_lattice(&target[..grid.dimension])
}

/// Row sums of the flux rows vanish on constant vectors; used as an assembly
/// self-check in tests and diagnostics.
pub fn flux_row_defect(grid: &Grid, matrix: &DMatrix<f64>) -> f64 {
    let ones = nalgebra::DVector::from_element(grid.dof_count(), 1.0);
    let image = matrix * ones;
    grid.flux_dofs()
        .iter()
        .map(|&dof| image[dof].abs())
        .fold(0.0, f64::max)
}
