//! The perturbed propagator by two independent routes: direct stepping of
//! the summed family, and marching the second-kind integral equation
//!
//!   V(t,s) = U(t,s) - integral_s^t U(t,r) P(r) V(r,s) dr
//!
//! with composite-trapezoid product integration in r. The memory integral is
//! propagated by running sums, so each anchor column costs one forward
//! sweep: the sum R is advanced by the same one-step maps as U, and the new
//! diagonal node is absorbed into an implicit solve with I + (dt/2) P.

use std::sync::Arc;

use nalgebra::linalg::LU;
use nalgebra::{DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::evofam::stepper::{propagate, EvolutionFamily, FactorCache, Scheme};
use crate::opalg::family::OperatorFamily;
use crate::opalg::norms::weighted_op_norm;

type StepLu = LU<f64, Dyn, Dyn>;

enum EndpointCache {
    Shared(StepLu),
    /// Entry k factors the solve that lands on node k + 1.
    PerNode(Vec<StepLu>),
}

/// Caches everything anchor-independent: the one-step maps of U and the
/// diagonal-node solves. Columns for different anchors reuse both.
pub struct VolterraEngine<'a> {
    u: &'a EvolutionFamily,
    p: &'a OperatorFamily,
    ucache: FactorCache,
    endpoints: EndpointCache,
}

impl<'a> VolterraEngine<'a> {
    pub fn new(u: &'a EvolutionFamily, p: &'a OperatorFamily) -> Result<Self> {
        let fam = u.family.as_ref();
        if fam.time_grid != p.time_grid {
            return Err(Error::BadTimeGrid);
        }
        if fam.dim() != p.dim() {
            return Err(Error::ShapeMismatch {
                context: "perturbation dimension vs family dimension",
                left: p.dim(),
                right: fam.dim(),
            });
        }
        let k = fam.node_count();
        let n = fam.dim();
        let ucache = FactorCache::build(fam, 0, k - 1, u.scheme);
        let dts: Vec<f64> = fam.time_grid.windows(2).map(|w| w[1] - w[0]).collect();
        if let Some(&bad) = dts.iter().find(|&&d| d < 1e-12) {
            return Err(Error::StepUnderflow(bad));
        }
        let dt0 = dts[0];
        let uniform = dts.iter().all(|&d| (d - dt0).abs() <= 1e-12 * dt0.max(1.0));
        let factor = |k_step: usize| -> StepLu {
            let m =
                DMatrix::identity(n, n) + p.sample(k_step + 1) * (0.5 * dts[k_step]);
            m.lu()
        };
        let endpoints = if p.is_constant() && uniform {
            EndpointCache::Shared(factor(0))
        } else {
            EndpointCache::PerNode((0..dts.len()).map(factor).collect())
        };
        Ok(VolterraEngine {
            u,
            p,
            ucache,
            endpoints,
        })
    }

    fn endpoint(&self, k_step: usize) -> &StepLu {
        match &self.endpoints {
            EndpointCache::Shared(lu) => lu,
            EndpointCache::PerNode(v) => &v[k_step],
        }
    }

    /// Settled trapezoid weight of node m once it is interior to the memory
    /// integral anchored at `anchor`.
    fn settled_weight(&self, anchor: usize, m: usize) -> f64 {
        let t = &self.u.family.time_grid;
        if m == anchor {
            0.5 * (t[m + 1] - t[m])
        } else {
            0.5 * (t[m + 1] - t[m - 1])
        }
    }

    /// Anchor column [V(t_anchor, t_anchor), ..., V(t_K, t_anchor)].
    pub fn column_matrices(&self, anchor: usize) -> Result<Vec<DMatrix<f64>>> {
        let fam = self.u.family.as_ref();
        let k = fam.node_count();
        if anchor >= k {
            return Err(Error::invalid("anchor index beyond the time grid"));
        }
        let n = fam.dim();
        let t = &fam.time_grid;
        let mut u_state = DMatrix::identity(n, n);
        let mut running = DMatrix::zeros(n, n);
        let mut column = vec![DMatrix::identity(n, n)];
        for m in anchor..k - 1 {
            let pv = self.p.sample(m) * column.last().unwrap();
            let step = self.ucache.at(m);
            u_state = step.advance_block(&u_state, m, t[m])?;
            running = step.advance_block(
                &(&running + pv * self.settled_weight(anchor, m)),
                m,
                t[m],
            )?;
            let rhs = &u_state - &running;
            let next = self.endpoint(m).solve(&rhs).ok_or(Error::SingularStep {
                index: m + 1,
                t: t[m + 1],
            })?;
            column.push(next);
        }
        Ok(column)
    }

    /// Vector trajectory V(t_m, t_anchor) x for one probe.
    pub fn column_vectors(&self, anchor: usize, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let fam = self.u.family.as_ref();
        let k = fam.node_count();
        if anchor >= k {
            return Err(Error::invalid("anchor index beyond the time grid"));
        }
        let t = &fam.time_grid;
        let mut u_state = x.clone();
        let mut running = DVector::zeros(fam.dim());
        let mut column = vec![x.clone()];
        for m in anchor..k - 1 {
            let pv = self.p.sample(m) * column.last().unwrap();
            let step = self.ucache.at(m);
            u_state = step.advance_vector(&u_state, m, t[m])?;
            running = step.advance_vector(
                &(&running + pv * self.settled_weight(anchor, m)),
                m,
                t[m],
            )?;
            let rhs = &u_state - &running;
            let next = self.endpoint(m).solve(&rhs).ok_or(Error::SingularStep {
                index: m + 1,
                t: t[m + 1],
            })?;
            column.push(next);
        }
        Ok(column)
    }
}

/// The two propagator constructions for A(·) + P(·) side by side.
pub struct PerturbedPair {
    pub u: EvolutionFamily,
    pub v_direct: EvolutionFamily,
    pub base: Arc<OperatorFamily>,
    pub perturbation: Arc<OperatorFamily>,
    pub perturbed: Arc<OperatorFamily>,
    pub scheme: Scheme,
    /// Max sampled operator-norm gap between the direct and integral
    /// constructions of V.
    pub discrepancy: f64,
}

/// Samplewise sum A(t) + P(t); the domain norm is re-referenced to the
/// summed first sample so graph norms see the perturbed operator.
pub fn perturbed_family(
    a: &OperatorFamily,
    p: &OperatorFamily,
) -> Result<OperatorFamily> {
    let mut sum = a.add(p)?;
    sum.d_norm = crate::opalg::norms::DNorm::new(Arc::new(sum.sample(0).clone()));
    Ok(sum)
}

/// Builds both V constructions and records their sampled discrepancy.
pub fn perturbed_pair(
    a: &Arc<OperatorFamily>,
    p: &Arc<OperatorFamily>,
    scheme: Scheme,
) -> Result<PerturbedPair> {
    let perturbed = Arc::new(perturbed_family(a, p)?);
    let u = propagate(a, a.time_grid[0], scheme)?;
    let v_direct = propagate(&perturbed, a.time_grid[0], scheme)?;
    let mut pair = PerturbedPair {
        u,
        v_direct,
        base: a.clone(),
        perturbation: p.clone(),
        perturbed,
        scheme,
        discrepancy: 0.0,
    };
    pair.discrepancy = perturbation_consistency(&pair)?;
    Ok(pair)
}

/// Worst sampled operator-norm gap between the integral-equation V and the
/// directly stepped V, over a deterministic anchor/stop sample.
pub fn perturbation_consistency(pair: &PerturbedPair) -> Result<f64> {
    let k = pair.u.node_count();
    let w = &pair.u.family.x_norm.weights;
    let engine = VolterraEngine::new(&pair.u, pair.perturbation.as_ref())?;
    let mut worst: f64 = 0.0;
    for anchor in [0, k / 2] {
        if anchor + 1 >= k {
            continue;
        }
        let column = engine.column_matrices(anchor)?;
        let mut stops = vec![anchor + (k - 1 - anchor) / 2, k - 1];
        stops.dedup();
        let snaps = pair.v_direct.walk_snapshots(anchor, &stops)?;
        for (j, direct) in snaps {
            let diff = &column[j - anchor] - &direct;
            worst = worst.max(weighted_op_norm(&diff, w));
        }
    }
    Ok(worst)
}

/// Discrepancy at each step size, for measuring the convergence order of
/// the integral construction against direct stepping. The builder returns
/// the (base, perturbation) families sampled at that step size.
pub fn consistency_ladder(
    build: impl Fn(f64) -> Result<(Arc<OperatorFamily>, Arc<OperatorFamily>)>,
    dts: &[f64],
    scheme: Scheme,
) -> Result<Vec<(f64, f64)>> {
    let mut rungs = Vec::with_capacity(dts.len());
    for &dt in dts {
        let (a, p) = build(dt)?;
        let pair = perturbed_pair(&a, &p, scheme)?;
        rungs.push((dt, pair.discrepancy));
    }
    Ok(rungs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{expm, spectral_norm};
    use crate::opalg::grid::{make_grid, BoundarySpec};
    use crate::opalg::norms::{DNorm, XNorm};
    use crate::probe::{rng_for, standard_normal};
    use crate::quad::{ladder_order, uniform_grid};

    fn scalar_family(value: f64, horizon: f64, dt: f64) -> Arc<OperatorFamily> {
        let grid =
            Arc::new(make_grid(1, &[(0.0, 1.0)], 3, BoundarySpec::AllDirichlet).unwrap());
        let mut fam = OperatorFamily::from_fn(
            grid,
            uniform_grid(horizon, dt).unwrap(),
            DNorm::new(Arc::new(DMatrix::from_element(1, 1, value))),
            |_| Ok(DMatrix::from_element(1, 1, value)),
        )
        .unwrap();
        fam.x_norm = XNorm::weighted_l2(DVector::from_element(1, 1.0));
        Arc::new(fam)
    }

    #[test]
    fn summing_a_zero_perturbation_changes_no_sample() {
        let grid =
            Arc::new(make_grid(1, &[(0.0, 1.0)], 6, BoundarySpec::AllDirichlet).unwrap());
        let tg = uniform_grid(1.0, 0.25).unwrap();
        let a = OperatorFamily::from_fn(
            grid.clone(),
            tg.clone(),
            DNorm::new(Arc::new(DMatrix::identity(4, 4))),
            |t| Ok(DMatrix::from_fn(4, 4, |i, j| (1.0 + t) * ((i * 7 + j) as f64 / 9.0))),
        )
        .unwrap();
        let p = OperatorFamily::from_fn(
            grid,
            tg,
            DNorm::new(Arc::new(DMatrix::identity(4, 4))),
            |_| Ok(DMatrix::zeros(4, 4)),
        )
        .unwrap();
        let sum = perturbed_family(&a, &p).unwrap();
        for k in 0..a.node_count() {
            assert_eq!(sum.sample(k), a.sample(k));
        }
    }

    #[test]
    fn summing_constants_collapses_to_one_constant_sample() {
        let a = scalar_family(1.0, 1.0, 0.25);
        let p = scalar_family(0.5, 1.0, 0.25);
        let sum = perturbed_family(&a, &p).unwrap();
        assert!(sum.is_constant());
        assert_eq!(sum.sample(0)[(0, 0)], 1.5);
    }

    #[test]
    fn drift_modulus_of_a_sum_is_subadditive_on_common_lags() {
        use crate::opalg::dini::dini_modulus;
        let grid =
            Arc::new(make_grid(1, &[(0.0, 1.0)], 9, BoundarySpec::AllDirichlet).unwrap());
        let tg = uniform_grid(1.0, 1.0 / 64.0).unwrap();
        let lap = crate::opalg::assembly::assemble_variable_heat(
            grid.clone(),
            crate::opalg::assembly::isotropic(|_, _| 1.0),
            |_, _| 0.0,
            tg.clone(),
        )
        .unwrap();
        let reference = DNorm::new(Arc::new(lap.sample(0).clone()));
        let shape = lap.sample(0).clone();
        let mk = |scale: f64, rate: f64| {
            let mut fam = OperatorFamily::from_fn(
                grid.clone(),
                tg.clone(),
                reference.clone(),
                |t| Ok(&shape * (scale * (1.0 + rate * t))),
            )
            .unwrap();
            fam.x_norm = lap.x_norm.clone();
            fam
        };
        let a = mk(1.0, 1.0);
        let p = mk(0.4, 0.5);
        let mut sum = perturbed_family(&a, &p).unwrap();
        sum.d_norm = reference.clone();
        let lags = [1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0];
        let wa = dini_modulus(&a, 2.0, &lags).unwrap();
        let wp = dini_modulus(&p, 2.0, &lags).unwrap();
        let ws = dini_modulus(&sum, 2.0, &lags).unwrap();
        for i in 0..lags.len() {
            assert!(
                ws.omega_hat[i] <= wa.omega_hat[i] + wp.omega_hat[i] + 1e-9,
                "lag {}: {} > {} + {}",
                ws.lags[i],
                ws.omega_hat[i],
                wa.omega_hat[i],
                wp.omega_hat[i]
            );
        }
    }

    #[test]
    fn zero_perturbation_reproduces_u_exactly() {
        let a = scalar_family(1.0, 1.0, 0.125);
        let p = scalar_family(0.0, 1.0, 0.125);
        let pair = perturbed_pair(&a, &p, Scheme::ImplicitEuler).unwrap();
        assert_eq!(pair.discrepancy, 0.0);
        let engine = VolterraEngine::new(&pair.u, pair.perturbation.as_ref()).unwrap();
        let col = engine.column_matrices(0).unwrap();
        let u_col = pair.u.anchor_column(0).unwrap();
        for (v, u) in col.iter().zip(u_col.iter()) {
            assert!((v - u).norm() <= 1e-15);
        }
    }

    #[test]
    fn scalar_fixture_pins_the_sign_convention() {
        let dt = 1.0 / 1024.0;
        let a = scalar_family(1.0, 1.0, dt);
        let p = scalar_family(0.5, 1.0, dt);
        let pair = perturbed_pair(&a, &p, Scheme::ImplicitEuler).unwrap();
        let engine = VolterraEngine::new(&pair.u, pair.perturbation.as_ref()).unwrap();
        let col = engine.column_matrices(0).unwrap();
        let v_end = col.last().unwrap()[(0, 0)];
        let u_end = pair.u.propagator(1024, 0).unwrap()[(0, 0)];
        assert!(
            (v_end - (-1.5f64).exp()).abs() <= 2e-3,
            "V(1,0) = {v_end}, expected about {}",
            (-1.5f64).exp()
        );
        let gap = v_end - u_end;
        assert!(
            (gap - (-0.144749)).abs() <= 2e-3,
            "V-U = {gap}, the integral term must damp the propagator"
        );
        assert!(pair.discrepancy <= 5e-3);
    }

    #[test]
    fn constant_matrix_column_converges_to_the_exponential() {
        let dim = 4;
        let mut rng = rng_for(0x7E57);
        let g = DMatrix::from_fn(dim, dim, |_, _| standard_normal(&mut rng));
        let a_mat = &g * g.transpose() * (1.0 / dim as f64) + DMatrix::identity(dim, dim);
        let h = DMatrix::from_fn(dim, dim, |_, _| standard_normal(&mut rng));
        let p_mat = (&h * h.transpose()) * (0.25 / dim as f64);
        let grid =
            Arc::new(make_grid(1, &[(0.0, 1.0)], dim + 2, BoundarySpec::AllDirichlet).unwrap());
        let exact = expm(&(-(&a_mat + &p_mat)));

        let mut rungs = Vec::new();
        for k in 0..4 {
            let dt = 1.0 / (16 << k) as f64;
            let tgrid = uniform_grid(1.0, dt).unwrap();
            let a = Arc::new(
                OperatorFamily::from_samples(
                    grid.clone(),
                    tgrid.clone(),
                    vec![a_mat.clone()],
                    DNorm::new(Arc::new(a_mat.clone())),
                )
                .unwrap(),
            );
            let p = Arc::new(
                OperatorFamily::from_samples(
                    grid.clone(),
                    tgrid,
                    vec![p_mat.clone()],
                    DNorm::new(Arc::new(p_mat.clone())),
                )
                .unwrap(),
            );
            let pair = perturbed_pair(&a, &p, Scheme::ImplicitEuler).unwrap();
            let engine =
                VolterraEngine::new(&pair.u, pair.perturbation.as_ref()).unwrap();
            let col = engine.column_matrices(0).unwrap();
            rungs.push((dt, spectral_norm(&(col.last().unwrap() - &exact))));
        }
        let order = ladder_order(&rungs);
        assert!(order >= 0.9, "measured order {order:.3} from {rungs:?}");
    }

    #[test]
    fn integral_and_direct_constructions_converge_together() {
        let build = |dt: f64| {
            Ok((scalar_family(1.0, 1.0, dt), scalar_family(0.5, 1.0, dt)))
        };
        let dts = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0, 1.0 / 512.0];
        let rungs = consistency_ladder(build, &dts, Scheme::ImplicitEuler).unwrap();
        let order = ladder_order(&rungs);
        assert!(order >= 0.9, "measured order {order:.3} from {rungs:?}");
    }

    #[test]
    fn volterra_column_satisfies_the_cocycle_to_quadrature_order() {
        let dt = 1.0 / 256.0;
        let a = scalar_family(1.0, 1.0, dt);
        let p = scalar_family(0.5, 1.0, dt);
        let pair = perturbed_pair(&a, &p, Scheme::ImplicitEuler).unwrap();
        let engine = VolterraEngine::new(&pair.u, pair.perturbation.as_ref()).unwrap();
        let from0 = engine.column_matrices(0).unwrap();
        let mid = 128;
        let from_mid = engine.column_matrices(mid).unwrap();
        let whole = from0.last().unwrap()[(0, 0)];
        let composed = from_mid.last().unwrap()[(0, 0)] * from0[mid][(0, 0)];
        assert!(
            (whole - composed).abs() <= 5e-3,
            "cocycle residual {}",
            (whole - composed).abs()
        );
        // The table stays inside the contractive range.
        let sup = from0.iter().map(|m| m[(0, 0)].abs()).fold(0.0, f64::max);
        assert!(sup <= 1.0 + 1e-12);
    }
}
