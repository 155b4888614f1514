//! Time-sampled operator families sharing one grid, one domain norm, and one
//! state norm.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::opalg::grid::Grid;
use crate::opalg::norms::{DNorm, XNorm};
use crate::opalg::operator::DiscreteOperator;
use crate::quad::validate_time_grid;

/// A(t) sampled on a fixed time grid. A single stored sample means the family
/// is constant in time; steppers exploit that by reusing one factorization.
#[derive(Debug, Clone)]
pub struct OperatorFamily {
    pub grid: Arc<Grid>,
    pub time_grid: Vec<f64>,
    /// Either one matrix (constant family) or one per time node.
    samples: Vec<DMatrix<f64>>,
    pub x_norm: XNorm,
    pub d_norm: DNorm,
    /// Smallest coefficient-matrix eigenvalue seen during assembly, when the
    /// family came from an elliptic assembly routine.
    pub ellipticity: Option<f64>,
}

impl OperatorFamily {
    pub fn from_samples(
        grid: Arc<Grid>,
        time_grid: Vec<f64>,
        samples: Vec<DMatrix<f64>>,
        d_norm: DNorm,
    ) -> Result<Self> {
        validate_time_grid(&time_grid)?;
        if samples.is_empty() {
            return Err(Error::invalid("operator family needs at least one sample"));
        }
        if samples.len() != 1 && samples.len() != time_grid.len() {
            return Err(Error::ShapeMismatch {
                context: "family samples vs time nodes",
                left: samples.len(),
                right: time_grid.len(),
            });
        }
        let n = grid.dof_count();
        for s in &samples {
            if s.nrows() != n || s.ncols() != n {
                return Err(Error::ShapeMismatch {
                    context: "family sample vs grid DOFs",
                    left: s.nrows(),
                    right: n,
                });
            }
        }
        let x_norm = XNorm::weighted_l2(grid.dof_weights().clone());
        Ok(OperatorFamily {
            grid,
            time_grid,
            samples,
            x_norm,
            d_norm,
            ellipticity: None,
        })
    }

    /// Family that never changes: one sample reused at every node.
    pub fn constant(op: &DiscreteOperator, time_grid: Vec<f64>) -> Result<Self> {
        let mut fam = OperatorFamily::from_samples(
            op.grid.clone(),
            time_grid,
            vec![op.matrix.clone()],
            op.d_norm.clone(),
        )?;
        fam.x_norm = op.x_norm.clone();
        Ok(fam)
    }

    /// Builds per-node samples from a callback; collapses to constant storage
    /// when every sample equals the first one bitwise.
    pub fn from_fn(
        grid: Arc<Grid>,
        time_grid: Vec<f64>,
        d_norm: DNorm,
        mut at: impl FnMut(f64) -> Result<DMatrix<f64>>,
    ) -> Result<Self> {
        let mut samples = Vec::with_capacity(time_grid.len());
        for &t in &time_grid {
            samples.push(at(t)?);
        }
        if samples.len() > 1 && samples.iter().skip(1).all(|s| s == &samples[0]) {
            samples.truncate(1);
        }
        OperatorFamily::from_samples(grid, time_grid, samples, d_norm)
    }

    pub fn is_constant(&self) -> bool {
        self.samples.len() == 1
    }

    pub fn dim(&self) -> usize {
        self.samples[0].nrows()
    }

    pub fn node_count(&self) -> usize {
        self.time_grid.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.time_grid.last().unwrap()
    }

    /// Sample at time node `k` (a constant family answers every node).
    pub fn sample(&self, k: usize) -> &DMatrix<f64> {
        if self.samples.len() == 1 {
            &self.samples[0]
        } else {
            &self.samples[k]
        }
    }

    /// The family frozen at node `k`, as a standalone operator sharing the
    /// family's domain norm.
    pub fn frozen(&self, k: usize) -> DiscreteOperator {
        DiscreteOperator {
            grid: self.grid.clone(),
            matrix: self.sample(k).clone(),
            x_norm: self.x_norm.clone(),
            d_norm: self.d_norm.clone(),
        }
    }

    /// Index of a time value that must be a grid node (within a half-step
    /// tolerance floor).
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * self.horizon().max(1.0);
        self.time_grid
            .iter()
            .position(|&tk| (tk - t).abs() <= tol)
            .ok_or(Error::AnchorOffGrid(t))
    }

    /// Applies `f` to every stored sample, keeping grid and norms.
    pub fn map_samples(
        &self,
        mut f: impl FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    ) -> Result<OperatorFamily> {
        let mut samples = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            samples.push(f(s)?);
        }
        let mut fam = OperatorFamily::from_samples(
            self.grid.clone(),
            self.time_grid.clone(),
            samples,
            self.d_norm.clone(),
        )?;
        fam.x_norm = self.x_norm.clone();
        fam.ellipticity = self.ellipticity;
        Ok(fam)
    }

    /// Pointwise sum with another family on the same grid and time grid.
    pub fn add(&self, other: &OperatorFamily) -> Result<OperatorFamily> {
        if self.time_grid != other.time_grid {
            return Err(Error::BadTimeGrid);
        }
        if self.dim() != other.dim() {
            return Err(Error::ShapeMismatch {
                context: "family dimensions in sum",
                left: self.dim(),
                right: other.dim(),
            });
        }
        let len = if self.is_constant() && other.is_constant() {
            1
        } else {
            self.time_grid.len()
        };
        let samples: Vec<DMatrix<f64>> = (0..len)
            .map(|k| self.sample(k) + other.sample(k))
            .collect();
        let mut fam = OperatorFamily::from_samples(
            self.grid.clone(),
            self.time_grid.clone(),
            samples,
            self.d_norm.clone(),
        )?;
        fam.x_norm = self.x_norm.clone();
        Ok(fam)
    }

    pub fn set_ellipticity(&mut self, beta: f64) {
        self.ellipticity = Some(beta);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opalg::grid::{make_grid, BoundarySpec};
    use crate::quad::uniform_grid;

    fn grid3() -> Arc<Grid> {
        Arc::new(make_grid(1, &[(0.0, 1.0)], 5, BoundarySpec::AllDirichlet).unwrap())
    }

    #[test]
    fn constant_storage_detected_and_reused() {
        let g = grid3();
        let tgrid = uniform_grid(1.0, 0.25).unwrap();
        let m = DMatrix::identity(3, 3);
        let fam = OperatorFamily::from_fn(
            g,
            tgrid,
            DNorm::new(Arc::new(m.clone())),
            |_t| Ok(m.clone()),
        )
        .unwrap();
        assert!(fam.is_constant());
        assert_eq!(fam.sample(4), &m);
    }

    #[test]
    fn node_lookup_rejects_off_grid_times() {
        let g = grid3();
        let tgrid = uniform_grid(1.0, 0.25).unwrap();
        let fam = OperatorFamily::from_samples(
            g,
            tgrid,
            vec![DMatrix::identity(3, 3)],
            DNorm::new(Arc::new(DMatrix::identity(3, 3))),
        )
        .unwrap();
        assert_eq!(fam.node_index(0.75).unwrap(), 3);
        assert!(matches!(fam.node_index(0.3), Err(Error::AnchorOffGrid(_))));
    }

    #[test]
    fn varying_family_keeps_one_sample_per_node() {
        let g = grid3();
        let tgrid = uniform_grid(1.0, 0.5).unwrap();
        let fam = OperatorFamily::from_fn(
            g,
            tgrid,
            DNorm::new(Arc::new(DMatrix::identity(3, 3))),
            |t| Ok(DMatrix::identity(3, 3) * (1.0 + t)),
        )
        .unwrap();
        assert!(!fam.is_constant());
        assert_eq!(fam.sample(2)[(0, 0)], 2.0);
    }
}
