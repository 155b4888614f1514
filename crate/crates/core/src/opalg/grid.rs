//! Uniform tensor grids with trapezoidal quadrature and tagged boundaries.
//!
//! Degrees of freedom are the interior nodes plus the flux-boundary nodes;
//! displacement-boundary nodes are eliminated from every assembled operator
//! but still participate in the quadrature identity (total weight = domain
//! measure).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What happens to a node under assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRole {
    Interior,
    /// Homogeneous displacement boundary; eliminated from the DOF set.
    Dirichlet,
    /// Flux boundary (zero normal derivative); kept as a DOF.
    Neumann,
}

/// How the boundary splits into the displacement part and the flux part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundarySpec {
    AllDirichlet,
    /// Dirichlet on the face x_0 = min, flux conditions everywhere else.
    DirichletLeftNeumannRest,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    pub dimension: usize,
    pub extent: Vec<(f64, f64)>,
    pub n_per_dim: usize,
    pub boundary_spec: BoundarySpec,
    /// Mesh width per dimension.
    pub h: Vec<f64>,
    /// Coordinates of every tensor node, row-major with x fastest.
    nodes: Vec<Vec<f64>>,
    roles: Vec<NodeRole>,
    /// Trapezoid weight of every node; sums to the domain measure.
    node_weights: Vec<f64>,
    /// Node indices that carry degrees of freedom, ascending.
    dof_nodes: Vec<usize>,
    /// Quadrature weight per DOF, in DOF order.
    dof_weights: DVector<f64>,
    /// DOF positions of the flux-boundary nodes, ascending.
    flux_dofs: Vec<usize>,
    /// Boundary-measure weight per flux DOF (counting measure in 1D,
    /// arc-length trapezoid in 2D).
    flux_weights: DVector<f64>,
}

pub fn make_grid(
    dimension: usize,
    extent: &[(f64, f64)],
    n_per_dim: usize,
    boundary_spec: BoundarySpec,
) -> Result<Grid> {
    if dimension == 0 || dimension > 2 {
        return Err(Error::invalid(format!(
            "dimension {dimension} unsupported; this laboratory runs 1D and 2D grids"
        )));
    }
    if n_per_dim < 3 {
        return Err(Error::GridTooCoarse(n_per_dim));
    }
    if extent.len() != dimension {
        return Err(Error::ShapeMismatch {
            context: "extent entries vs dimension",
            left: extent.len(),
            right: dimension,
        });
    }
    for &(lo, hi) in extent {
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::BadExtent { lo, hi });
        }
    }

    let h: Vec<f64> = extent
        .iter()
        .map(|&(lo, hi)| (hi - lo) / (n_per_dim as f64 - 1.0))
        .collect();
    let axis_weight = |idx: usize, dim: usize| -> f64 {
        if idx == 0 || idx == n_per_dim - 1 {
            0.5 * h[dim]
        } else {
            h[dim]
        }
    };

    let total = n_per_dim.pow(dimension as u32);
    let mut nodes = Vec::with_capacity(total);
    let mut roles = Vec::with_capacity(total);
    let mut node_weights = Vec::with_capacity(total);
    for flat in 0..total {
        let mut idx = [0usize; 2];
        let mut rest = flat;
        for d in 0..dimension {
            idx[d] = rest % n_per_dim;
            rest /= n_per_dim;
        }
        let coord: Vec<f64> = (0..dimension)
            .map(|d| extent[d].0 + idx[d] as f64 * h[d])
            .collect();
        let on_boundary = (0..dimension).any(|d| idx[d] == 0 || idx[d] == n_per_dim - 1);
        let role = if !on_boundary {
            NodeRole::Interior
        } else {
            match boundary_spec {
                BoundarySpec::AllDirichlet => NodeRole::Dirichlet,
                BoundarySpec::DirichletLeftNeumannRest => {
                    if idx[0] == 0 {
                        NodeRole::Dirichlet
                    } else {
                        NodeRole::Neumann
                    }
                }
            }
        };
        let weight: f64 = (0..dimension).map(|d| axis_weight(idx[d], d)).product();
        nodes.push(coord);
        roles.push(role);
        node_weights.push(weight);
    }

    let dof_nodes: Vec<usize> = (0..total)
        .filter(|&i| roles[i] != NodeRole::Dirichlet)
        .collect();
    let dof_weights = DVector::from_iterator(
        dof_nodes.len(),
        dof_nodes.iter().map(|&i| node_weights[i]),
    );

    let mut flux_dofs = Vec::new();
    let mut flux_weights = Vec::new();
    for (dof, &node) in dof_nodes.iter().enumerate() {
        if roles[node] == NodeRole::Neumann {
            flux_dofs.push(dof);
            flux_weights.push(boundary_measure_weight(
                dimension, n_per_dim, &h, node, &roles,
            ));
        }
    }

    let grid = Grid {
        dimension,
        extent: extent.to_vec(),
        n_per_dim,
        boundary_spec,
        h,
        nodes,
        roles,
        node_weights,
        dof_nodes,
        dof_weights,
        flux_dofs,
        flux_weights: DVector::from_vec(flux_weights),
    };
    grid.validate()?;
    Ok(grid)
}

/// Weight of a flux node in the boundary quadrature: counting measure for the
/// 0-dimensional boundary of an interval, trapezoid along edges in 2D with
/// half-segments credited per adjacent flux segment.
fn boundary_measure_weight(
    dimension: usize,
    n: usize,
    h: &[f64],
    node: usize,
    roles: &[NodeRole],
) -> f64 {
    if dimension == 1 {
        return 1.0;
    }
    let ix = node % n;
    let iy = node / n;
    let mut w = 0.0;
    // Walk the four lattice neighbors; a boundary segment contributes when it
    // lies along the boundary and joins two flux nodes.
    let on_h_edge = iy == 0 || iy == n - 1;
    let on_v_edge = ix == 0 || ix == n - 1;
    let neighbors: [(isize, isize, bool, f64); 4] = [
        (-1, 0, on_h_edge, h[0]),
        (1, 0, on_h_edge, h[0]),
        (0, -1, on_v_edge, h[1]),
        (0, 1, on_v_edge, h[1]),
    ];
    for (dx, dy, along_boundary, step) in neighbors {
        if !along_boundary {
            continue;
        }
        let (jx, jy) = (ix as isize + dx, iy as isize + dy);
        if jx < 0 || jy < 0 || jx >= n as isize || jy >= n as isize {
            continue;
        }
        let j = jy as usize * n + jx as usize;
        if roles[j] == NodeRole::Neumann {
            w += 0.5 * step;
        }
    }
    w
}

impl Grid {
    fn validate(&self) -> Result<()> {
        let measure: f64 = self.extent.iter().map(|&(lo, hi)| hi - lo).product();
        let total: f64 = self.node_weights.iter().sum();
        if self.node_weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::invalid("non-positive quadrature weight"));
        }
        if ((total - measure) / measure).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "quadrature weights sum to {total}, expected the domain measure {measure}"
            )));
        }
        Ok(())
    }

    /// Number of degrees of freedom.
    pub fn dof_count(&self) -> usize {
        self.dof_nodes.len()
    }

    /// Coordinates of a DOF.
    pub fn dof_coord(&self, dof: usize) -> &[f64] {
        &self.nodes[self.dof_nodes[dof]]
    }

    pub fn dof_role(&self, dof: usize) -> NodeRole {
        self.roles[self.dof_nodes[dof]]
    }

    /// Quadrature weights in DOF order; these define the X inner product.
    pub fn dof_weights(&self) -> &DVector<f64> {
        &self.dof_weights
    }

    /// DOF positions of the flux-boundary nodes.
    pub fn flux_dofs(&self) -> &[usize] {
        &self.flux_dofs
    }

    /// Boundary quadrature weights aligned with `flux_dofs`.
    pub fn flux_weights(&self) -> &DVector<f64> {
        &self.flux_weights
    }

    /// Lattice index of a DOF along each dimension.
    pub fn dof_lattice(&self, dof: usize) -> [usize; 2] {
        let node = self.dof_nodes[dof];
        let mut idx = [0usize; 2];
        let mut rest = node;
        for d in 0..self.dimension {
            idx[d] = rest % self.n_per_dim;
            rest /= self.n_per_dim;
        }
        idx
    }

    /// DOF index of a lattice node, if that node carries one.
    pub fn dof_of_lattice(&self, idx: &[usize]) -> Option<usize> {
        let mut flat = 0usize;
        for d in (0..self.dimension).rev() {
            flat = flat * self.n_per_dim + idx[d];
        }
        if self.roles[flat] == NodeRole::Dirichlet {
            return None;
        }
        self.dof_nodes.binary_search(&flat).ok()
    }

    pub fn role_of_lattice(&self, idx: &[usize]) -> NodeRole {
        let mut flat = 0usize;
        for d in (0..self.dimension).rev() {
            flat = flat * self.n_per_dim + idx[d];
        }
        self.roles[flat]
    }

    /// Linear interpolation stencil for point evaluation at `point`, as
    /// (dof, weight) pairs. Contributions from displacement-boundary nodes
    /// vanish and are dropped.
    pub fn interpolation_stencil(&self, point: &[f64]) -> Result<Vec<(usize, f64)>> {
        if point.len() != self.dimension {
            return Err(Error::ShapeMismatch {
                context: "evaluation point vs grid dimension",
                left: point.len(),
                right: self.dimension,
            });
        }
        let mut cells = [[0usize; 2]; 2];
        let mut fracs = [0.0f64; 2];
        for d in 0..self.dimension {
            let (lo, hi) = self.extent[d];
            if point[d] < lo - 1e-12 || point[d] > hi + 1e-12 {
                return Err(Error::invalid(format!(
                    "evaluation point {:?} outside the domain",
                    point
                )));
            }
            let rel = ((point[d] - lo) / self.h[d]).clamp(0.0, (self.n_per_dim - 1) as f64);
            let cell = (rel.floor() as usize).min(self.n_per_dim - 2);
            cells[d] = [cell, cell + 1];
            fracs[d] = rel - cell as f64;
        }
        let mut stencil = Vec::new();
        let corners = 1usize << self.dimension;
        for corner in 0..corners {
            let mut idx = [0usize; 2];
            let mut weight = 1.0;
            for d in 0..self.dimension {
                let side = (corner >> d) & 1;
                idx[d] = cells[d][side];
                weight *= if side == 0 { 1.0 - fracs[d] } else { fracs[d] };
            }
            if weight == 0.0 {
                continue;
            }
            if let Some(dof) = self.dof_of_lattice(&idx[..self.dimension]) {
                stencil.push((dof, weight));
            }
        }
        if stencil.is_empty() {
            return Err(Error::invalid(
                "evaluation point is supported only by displacement-boundary nodes",
            ));
        }
        Ok(stencil)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_dimensional_dirichlet_grid_matches_hand_count() {
        let g = make_grid(1, &[(0.0, 1.0)], 5, BoundarySpec::AllDirichlet).unwrap();
        assert_eq!(g.dof_count(), 3);
        for (k, x) in [0.25, 0.5, 0.75].iter().enumerate() {
            assert_relative_eq!(g.dof_coord(k)[0], x, max_relative = 1e-15);
            assert_relative_eq!(g.dof_weights()[k], 0.25, max_relative = 1e-15);
        }
        assert!(g.flux_dofs().is_empty());
    }

    #[test]
    fn minimal_grid_has_single_interior_node() {
        let g = make_grid(1, &[(0.0, 1.0)], 3, BoundarySpec::AllDirichlet).unwrap();
        assert_eq!(g.dof_count(), 1);
        assert_relative_eq!(g.dof_coord(0)[0], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn mixed_grid_keeps_flux_node_as_dof() {
        let g = make_grid(1, &[(0.0, 1.0)], 5, BoundarySpec::DirichletLeftNeumannRest).unwrap();
        assert_eq!(g.dof_count(), 4);
        assert_relative_eq!(g.dof_coord(3)[0], 1.0, max_relative = 1e-15);
        assert_eq!(g.flux_dofs(), &[3]);
        // 1D boundary carries counting measure.
        assert_relative_eq!(g.flux_weights()[0], 1.0, max_relative = 1e-15);
        // Quadrature weight at the boundary node is the half-cell.
        assert_relative_eq!(g.dof_weights()[3], 0.125, max_relative = 1e-15);
    }

    #[test]
    fn two_dimensional_tags_follow_left_edge_rule() {
        let g = make_grid(
            2,
            &[(0.0, 1.0), (0.0, 1.0)],
            5,
            BoundarySpec::DirichletLeftNeumannRest,
        )
        .unwrap();
        // 25 nodes, 5 on the left edge eliminated.
        assert_eq!(g.dof_count(), 20);
        for dof in 0..g.dof_count() {
            let c = g.dof_coord(dof);
            assert!(c[0] > 0.0);
            if g.dof_role(dof) == NodeRole::Neumann {
                let on_rim = c[0] >= 1.0 - 1e-12
                    || c[1] <= 1e-12
                    || c[1] >= 1.0 - 1e-12;
                assert!(on_rim);
            }
        }
        // Flux part of the rim: three sides of length 1 each, minus the two
        // segments whose far endpoint sits on the eliminated left edge.
        let flux_total: f64 = g.flux_weights().iter().sum();
        assert_relative_eq!(flux_total, 3.0 - 0.5, max_relative = 1e-12);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        assert!(matches!(
            make_grid(1, &[(0.0, 1.0)], 2, BoundarySpec::AllDirichlet),
            Err(Error::GridTooCoarse(2))
        ));
        assert!(make_grid(1, &[(1.0, 0.0)], 5, BoundarySpec::AllDirichlet).is_err());
        assert!(make_grid(3, &[(0.0, 1.0); 3], 5, BoundarySpec::AllDirichlet).is_err());
    }

    #[test]
    fn interpolation_stencil_is_convex_combination() {
        let g = make_grid(1, &[(0.0, 1.0)], 9, BoundarySpec::AllDirichlet).unwrap();
        let st = g.interpolation_stencil(&[0.3]).unwrap();
        let total: f64 = st.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    }
}
