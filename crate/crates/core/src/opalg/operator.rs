//! Discrete operators on grid DOFs and observation maps into small output
//! spaces, together with their JSON wire format.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opalg::grid::Grid;
use crate::opalg::norms::{DNorm, XNorm};

/// Dense operator on the DOFs of a grid, with its norm descriptors.
///
/// The sign convention is fixed so that the negative of the matrix generates
/// a decaying flow whenever the continuous operator is elliptic.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub grid: Arc<Grid>,
    pub matrix: DMatrix<f64>,
    pub x_norm: XNorm,
    pub d_norm: DNorm,
}

impl DiscreteOperator {
    /// Wraps a matrix with the grid's quadrature norm and a self-referenced
    /// graph norm.
    pub fn new(grid: Arc<Grid>, matrix: DMatrix<f64>) -> Result<Self> {
        let n = grid.dof_count();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::ShapeMismatch {
                context: "operator matrix vs grid DOFs",
                left: matrix.nrows(),
                right: n,
            });
        }
        let x_norm = XNorm::weighted_l2(grid.dof_weights().clone());
        let d_norm = DNorm::new(Arc::new(matrix.clone()));
        Ok(DiscreteOperator {
            grid,
            matrix,
            x_norm,
            d_norm,
        })
    }

    pub fn with_reference(mut self, reference: Arc<DMatrix<f64>>) -> Self {
        self.d_norm = DNorm::new(reference);
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    pub fn x_norm_of(&self, v: &DVector<f64>) -> f64 {
        self.x_norm.eval(v)
    }

    pub fn d_norm_of(&self, v: &DVector<f64>) -> f64 {
        self.d_norm.eval(v, &self.x_norm)
    }
}

/// Observation map from grid DOFs into a low-dimensional output space with
/// its own weighted norm.
#[derive(Debug, Clone)]
pub struct ObservationMap {
    pub matrix: DMatrix<f64>,
    pub y_norm: XNorm,
    pub kind: ObservationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    PointEvaluation,
    BoundaryTrace,
    Identity,
    Custom,
}

impl ObservationMap {
    /// Point evaluation by the grid's linear interpolation stencil.
    pub fn point(grid: &Grid, location: &[f64]) -> Result<Self> {
        let stencil = grid.interpolation_stencil(location)?;
        let mut row = DMatrix::zeros(1, grid.dof_count());
        for (dof, w) in stencil {
            row[(0, dof)] = w;
        }
        Ok(ObservationMap {
            matrix: row,
            y_norm: XNorm::weighted_l2(DVector::from_element(1, 1.0)),
            kind: ObservationKind::PointEvaluation,
        })
    }

    /// Restriction onto the flux boundary, normed by the boundary measure.
    pub fn boundary_trace(grid: &Grid) -> Result<Self> {
        let flux = grid.flux_dofs();
        if flux.is_empty() {
            return Err(Error::invalid(
                "grid has no flux boundary to trace onto",
            ));
        }
        let mut m = DMatrix::zeros(flux.len(), grid.dof_count());
        for (row, &dof) in flux.iter().enumerate() {
            m[(row, dof)] = 1.0;
        }
        Ok(ObservationMap {
            matrix: m,
            y_norm: XNorm::weighted_l2(grid.flux_weights().clone()),
            kind: ObservationKind::BoundaryTrace,
        })
    }

    pub fn identity(grid: &Grid) -> Self {
        let n = grid.dof_count();
        ObservationMap {
            matrix: DMatrix::identity(n, n),
            y_norm: XNorm::weighted_l2(grid.dof_weights().clone()),
            kind: ObservationKind::Identity,
        }
    }

    pub fn custom(matrix: DMatrix<f64>, y_norm: XNorm) -> Self {
        ObservationMap {
            matrix,
            y_norm,
            kind: ObservationKind::Custom,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ObservationMap {
            matrix: &self.matrix * factor,
            y_norm: self.y_norm.clone(),
            kind: ObservationKind::Custom,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    pub fn y_norm_of(&self, v: &DVector<f64>) -> f64 {
        self.y_norm.eval(v)
    }
}

/// Wire format: matrices row-major, norms by name, grid by its metadata.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorWire {
    pub schema: String,
    pub grid: Grid,
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub matrix: Vec<f64>,
    pub x_norm: NormWire,
    pub d_norm: DNormWire,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormWire {
    pub name: String,
    pub exponent: f64,
    pub weights: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DNormWire {
    pub name: String,
    /// Row-major reference matrix; empty means "the operator itself".
    pub reference: Vec<f64>,
}

pub const OPERATOR_SCHEMA: &str = "evolab.operator.v1";

impl DiscreteOperator {
    pub fn to_wire(&self) -> OperatorWire {
        let same_ref = self.d_norm.reference.as_ref() == &self.matrix;
        OperatorWire {
            schema: OPERATOR_SCHEMA.to_string(),
            grid: self.grid.as_ref().clone(),
            rows: self.matrix.nrows(),
            cols: self.matrix.ncols(),
            matrix: row_major(&self.matrix),
            x_norm: NormWire {
                name: "weighted-lq".to_string(),
                exponent: self.x_norm.exponent,
                weights: self.x_norm.weights.iter().copied().collect(),
            },
            d_norm: DNormWire {
                name: "graph".to_string(),
                reference: if same_ref {
                    Vec::new()
                } else {
                    row_major(&self.d_norm.reference)
                },
            },
        }
    }

    pub fn from_wire(wire: OperatorWire) -> Result<Self> {
        if wire.schema != OPERATOR_SCHEMA {
            return Err(Error::Config(format!(
                "unknown operator schema {:?}",
                wire.schema
            )));
        }
        if wire.rows * wire.cols != wire.matrix.len() {
            return Err(Error::ShapeMismatch {
                context: "wire matrix length vs declared shape",
                left: wire.matrix.len(),
                right: wire.rows * wire.cols,
            });
        }
        let matrix = DMatrix::from_row_slice(wire.rows, wire.cols, &wire.matrix);
        let grid = Arc::new(wire.grid);
        if grid.dof_count() != wire.rows {
            return Err(Error::ShapeMismatch {
                context: "wire grid DOFs vs matrix",
                left: grid.dof_count(),
                right: wire.rows,
            });
        }
        let x_norm = XNorm {
            weights: DVector::from_vec(wire.x_norm.weights),
            exponent: wire.x_norm.exponent,
        };
        let d_norm = if wire.d_norm.reference.is_empty() {
            DNorm::new(Arc::new(matrix.clone()))
        } else {
            DNorm::new(Arc::new(DMatrix::from_row_slice(
                wire.rows,
                wire.cols,
                &wire.d_norm.reference,
            )))
        };
        Ok(DiscreteOperator {
            grid,
            matrix,
            x_norm,
            d_norm,
        })
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opalg::grid::{make_grid, BoundarySpec};
    use approx::assert_relative_eq;

    fn tiny_grid() -> Arc<Grid> {
        Arc::new(make_grid(1, &[(0.0, 1.0)], 5, BoundarySpec::AllDirichlet).unwrap())
    }

    #[test]
    fn point_observation_is_a_convex_stencil_row() {
        let g = tiny_grid();
        let c = ObservationMap::point(&g, &[0.5]).unwrap();
        assert_eq!(c.out_dim(), 1);
        let row_sum: f64 = c.matrix.iter().sum();
        assert_relative_eq!(row_sum, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn wire_roundtrip_preserves_matrix_and_norms() {
        let g = tiny_grid();
        let m = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 * 0.5 - 1.0);
        let op = DiscreteOperator::new(g, m.clone()).unwrap();
        let json = serde_json::to_string(&op.to_wire()).unwrap();
        let back = DiscreteOperator::from_wire(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.matrix, m);
        assert_eq!(back.x_norm.weights, op.x_norm.weights);
    }

    #[test]
    fn wire_rejects_foreign_schema() {
        let g = tiny_grid();
        let op =
            DiscreteOperator::new(g, DMatrix::identity(3, 3)).unwrap();
        let mut wire = op.to_wire();
        wire.schema = "something.else".into();
        assert!(DiscreteOperator::from_wire(wire).is_err());
    }
}
