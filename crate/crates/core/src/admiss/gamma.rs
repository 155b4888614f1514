//! Admissibility constants: the L^theta norm of t ↦ C U(t,s)x against ‖x‖,
//! for semigroups (via the exponential oracle) and evolution families (via
//! the stepper), exact by SVD when everything is Hilbert and theta = 2,
//! probe-based otherwise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evofam::mr::validate_exponent;
use crate::evofam::stepper::{expm_oracle, EvolutionFamily, FactorCache};
use crate::linalg::spectral_norm;
use crate::opalg::family::OperatorFamily;
use crate::opalg::norms::{DNorm, XNorm};
use crate::opalg::operator::{DiscreteOperator, ObservationKind, ObservationMap};
use crate::probe::{gaussian_probes, orthonormalize};
use crate::quad::trapezoid_weights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMethod {
    /// Largest singular value of the discretized map between the weighted
    /// spaces; a genuine operator norm.
    SvdExact,
    /// Maximum over probes with ascent refinement; a certified lower bound.
    ProbeLowerBound,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub theta: f64,
    pub s: f64,
    pub tau_prime: f64,
    pub gamma_hat: f64,
    pub method: GammaMethod,
    pub probes: usize,
    /// (Δt, gamma_hat) rungs, coarsest first.
    pub refinement_history: Vec<(f64, f64)>,
    /// Power-law estimate of the mass omitted on the first step, where the
    /// quadrature does not sample because C need only act on smooth states.
    pub sliver: f64,
}

/// Discretized output map: node matrices C·M(t_k) with trapezoid weights and
/// the norms of both sides. Bounded observations include the anchor node;
/// point and trace maps discretize observations unbounded relative to the
/// state norm, so their quadrature starts one step in and the omitted sliver
/// is estimated separately.
pub(crate) struct OutputStack {
    mats: Vec<DMatrix<f64>>,
    tau: Vec<f64>,
    y_weights: Vec<DVector<f64>>,
    x_weights: DVector<f64>,
    hilbert_y: bool,
}

impl OutputStack {
    pub(crate) fn value(&self, x: &DVector<f64>, theta: f64) -> f64 {
        let mut s = 0.0;
        for (k, g) in self.mats.iter().enumerate() {
            let y = g * x;
            let mut norm2 = 0.0;
            for i in 0..y.len() {
                norm2 += self.y_weights[k][i] * y[i] * y[i];
            }
            s += self.tau[k] * norm2.sqrt().powf(theta);
        }
        s.powf(1.0 / theta)
    }

    fn x_norm(&self, x: &DVector<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..x.len() {
            s += self.x_weights[i] * x[i] * x[i];
        }
        s.sqrt()
    }

    fn svd_gamma(&self) -> f64 {
        let n = self.x_weights.len();
        let rows: usize = self.mats.iter().map(|m| m.nrows()).sum();
        let mut stacked = DMatrix::zeros(rows, n);
        let mut row = 0;
        for (k, g) in self.mats.iter().enumerate() {
            let tq = self.tau[k].max(0.0).sqrt();
            for r in 0..g.nrows() {
                let yw = self.y_weights[k][r].sqrt();
                for col in 0..n {
                    stacked[(row, col)] =
                        tq * yw * g[(r, col)] / self.x_weights[col].sqrt();
                }
                row += 1;
            }
        }
        spectral_norm(&stacked)
    }

    /// Gradient fixed-point step for the ratio; at theta = 2 this is power
    /// iteration on the weighted normal matrix.
    fn gradient_direction(&self, x: &DVector<f64>, theta: f64) -> DVector<f64> {
        let n = x.len();
        let mut g = DVector::zeros(n);
        for (k, mat) in self.mats.iter().enumerate() {
            let y = mat * x;
            let mut norm2 = 0.0;
            for i in 0..y.len() {
                norm2 += self.y_weights[k][i] * y[i] * y[i];
            }
            let norm = norm2.sqrt();
            if norm <= 1e-300 {
                continue;
            }
            let scaled = DVector::from_fn(y.len(), |i, _| self.y_weights[k][i] * y[i]);
            g += mat.transpose() * scaled * (self.tau[k] * norm.powf(theta - 2.0));
        }
        DVector::from_fn(n, |i, _| g[i] / self.x_weights[i])
    }

    /// Probe maximum refined by gradient fixed-point iterations and
    /// coordinate-ascent sweeps; every reported value is an evaluated ratio.
    fn probe_gamma(&self, theta: f64, probe_count: usize, seed: u64) -> f64 {
        let n = self.x_weights.len();
        let mut probes = gaussian_probes(n, probe_count, seed);
        orthonormalize(&mut probes, &self.x_weights);
        let mut best_x = probes[0].clone();
        let mut best = 0.0;
        for x in &probes {
            let v = self.value(x, theta) / self.x_norm(x);
            if v > best {
                best = v;
                best_x = x.clone();
            }
        }
        let mut x = best_x.clone();
        let mut prev = best;
        for _ in 0..200 {
            let g = self.gradient_direction(&x, theta);
            let norm = self.x_norm(&g);
            if norm <= 1e-300 {
                break;
            }
            x = g / norm;
            let v = self.value(&x, theta);
            if v > best {
                best = v;
                best_x = x.clone();
            }
            if (v - prev).abs() <= 1e-13 * v.max(1.0) {
                break;
            }
            prev = v;
        }
        let mut x = best_x;
        for &delta in &[0.3, 0.05, 0.01] {
            for _ in 0..3 {
                let mut improved = false;
                for i in 0..n {
                    for sign in [1.0, -1.0] {
                        let mut cand = x.clone();
                        cand[i] += sign * delta / self.x_weights[i].sqrt();
                        let norm = self.x_norm(&cand);
                        if norm <= 1e-300 {
                            continue;
                        }
                        cand /= norm;
                        let v = self.value(&cand, theta);
                        if v > best * (1.0 + 1e-14) {
                            best = v;
                            x = cand;
                            improved = true;
                        }
                    }
                }
                if !improved {
                    break;
                }
            }
        }
        best
    }

    fn gamma(&self, theta: f64, probe_count: usize, seed: u64) -> (f64, GammaMethod) {
        if (theta - 2.0).abs() <= 1e-12 && self.hilbert_y {
            (self.svd_gamma(), GammaMethod::SvdExact)
        } else {
            (
                self.probe_gamma(theta, probe_count, seed),
                GammaMethod::ProbeLowerBound,
            )
        }
    }

    /// Direction attaining (or near) the reported value, used only to probe
    /// the integrand shape for the sliver estimate.
    fn top_direction(&self, theta: f64, seed: u64) -> DVector<f64> {
        let n = self.x_weights.len();
        let mut probes = gaussian_probes(n, 4, seed);
        orthonormalize(&mut probes, &self.x_weights);
        let mut x = probes[0].clone();
        for _ in 0..80 {
            let g = self.gradient_direction(&x, theta);
            let norm = self.x_norm(&g);
            if norm <= 1e-300 {
                break;
            }
            x = g / norm;
        }
        x
    }

    /// Rectifies the first-step omission by fitting val ≈ a·t^b to the first
    /// two sampled nodes and integrating the fit over the skipped interval.
    /// A fit too singular to integrate reports infinity.
    fn sliver(&self, theta: f64, first_dt: f64, seed: u64) -> f64 {
        if self.mats.len() < 2 {
            return 0.0;
        }
        let x = self.top_direction(theta, seed);
        let val = |k: usize| -> f64 {
            let y = &self.mats[k] * &x;
            let mut norm2 = 0.0;
            for i in 0..y.len() {
                norm2 += self.y_weights[k][i] * y[i] * y[i];
            }
            norm2.sqrt()
        };
        let v1 = val(0);
        let v2 = val(1);
        if v1 <= 1e-300 || v2 <= 1e-300 {
            return (first_dt * v1.powf(theta)).powf(1.0 / theta);
        }
        let b = (v2 / v1).ln() / 2.0f64.ln();
        let exponent = b * theta + 1.0;
        if exponent <= 0.05 {
            return f64::INFINITY;
        }
        let a = v1 / first_dt.powf(b);
        (a.powf(theta) * first_dt.powf(exponent) / exponent).powf(1.0 / theta)
    }
}

fn hilbert_y(maps: &[&ObservationMap]) -> bool {
    maps.iter()
        .all(|c| (c.y_norm.exponent - 2.0).abs() <= 1e-14)
}

/// Whether the observed integrand is regular at the anchor node. Point and
/// trace maps discretize observations unbounded relative to the state norm;
/// their integrand is singular at t = s, so quadrature starts one step in.
fn anchor_included(kind: ObservationKind) -> bool {
    matches!(kind, ObservationKind::Identity | ObservationKind::Custom)
}

/// Quadrature nodes of the admissibility integral for a semigroup over
/// [0, horizon].
fn semigroup_stack(
    op: &DiscreteOperator,
    c: &ObservationMap,
    horizon: f64,
    steps: usize,
    include_anchor: bool,
) -> Result<OutputStack> {
    let dt = horizon / steps as f64;
    let one = expm_oracle(op, dt)?;
    let mut cur = one.clone();
    let mut mats = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    if include_anchor {
        mats.push(c.matrix.clone());
        times.push(0.0);
    }
    for k in 1..=steps {
        mats.push(&c.matrix * &cur);
        times.push(k as f64 * dt);
        if k < steps {
            cur = &one * cur;
        }
    }
    let count = mats.len();
    Ok(OutputStack {
        mats,
        tau: trapezoid_weights(&times),
        y_weights: vec![c.y_norm.weights.clone(); count],
        x_weights: op.x_norm.weights.clone(),
        hilbert_y: hilbert_y(&[c]),
    })
}

/// Admissibility constant of an observation for a frozen generator:
/// the L^theta(0, horizon) norm of t ↦ C e^{-tA}x against ‖x‖.
pub fn gamma_semigroup(
    op: &DiscreteOperator,
    c: &ObservationMap,
    theta: f64,
    horizon: f64,
    steps: usize,
    probe_count: usize,
    seed: u64,
) -> Result<AdmissibilityReport> {
    validate_exponent("theta", theta)?;
    if !(horizon > 0.0) {
        return Err(Error::invalid("admissibility horizon must be positive"));
    }
    if steps < 4 {
        return Err(Error::invalid("admissibility quadrature needs >= 4 steps"));
    }
    if probe_count == 0 {
        return Err(Error::invalid("at least one probe is required"));
    }
    if c.matrix.ncols() != op.dim() {
        return Err(Error::ShapeMismatch {
            context: "observation columns vs operator dimension",
            left: c.matrix.ncols(),
            right: op.dim(),
        });
    }
    let include_anchor = anchor_included(c.kind);
    let mut history = Vec::new();
    let mut gamma_hat = 0.0;
    let mut method = GammaMethod::ProbeLowerBound;
    let mut sliver = 0.0;
    let mut rungs: Vec<usize> = vec![(steps / 4).max(2), (steps / 2).max(2), steps];
    rungs.dedup();
    let last = *rungs.last().unwrap();
    for rung in rungs {
        let stack = semigroup_stack(op, c, horizon, rung, include_anchor)?;
        let (g, m) = stack.gamma(theta, probe_count, seed);
        history.push((horizon / rung as f64, g));
        if rung == last {
            gamma_hat = g;
            method = m;
            if !include_anchor {
                sliver = stack.sliver(theta, horizon / rung as f64, seed);
            }
        }
    }
    Ok(AdmissibilityReport {
        theta,
        s: 0.0,
        tau_prime: horizon,
        gamma_hat,
        method,
        probes: probe_count,
        refinement_history: history,
        sliver,
    })
}

/// Walks the identity block along the family from the anchor, collecting
/// one observed matrix per quadrature node.
fn evolution_stack<'a>(
    u: &EvolutionFamily,
    maps: &dyn Fn(usize) -> &'a DMatrix<f64>,
    y_weights: &dyn Fn(usize) -> &'a DVector<f64>,
    hilbert: bool,
    ia: usize,
    iq: usize,
    include_anchor: bool,
) -> Result<OutputStack> {
    let fam = u.family.as_ref();
    let n = fam.dim();
    let cache = FactorCache::build(fam, ia, iq, u.scheme);
    let mut cur = DMatrix::identity(n, n);
    let mut mats = Vec::with_capacity(iq - ia + 1);
    let mut ywv = Vec::with_capacity(iq - ia + 1);
    if include_anchor {
        mats.push(maps(ia).clone());
        ywv.push(y_weights(ia).clone());
    }
    for j in ia..iq {
        cur = cache.at(j).advance_block(&cur, j, fam.time_grid[j])?;
        mats.push(maps(j + 1) * &cur);
        ywv.push(y_weights(j + 1).clone());
    }
    let first = if include_anchor { ia } else { ia + 1 };
    Ok(OutputStack {
        mats,
        tau: trapezoid_weights(&fam.time_grid[first..=iq]),
        y_weights: ywv,
        x_weights: fam.x_norm.weights.clone(),
        hilbert_y: hilbert,
    })
}

fn evolution_indices(
    fam: &OperatorFamily,
    c_cols: usize,
    s: f64,
    tau_prime: f64,
) -> Result<(usize, usize)> {
    if c_cols != fam.dim() {
        return Err(Error::ShapeMismatch {
            context: "observation columns vs family dimension",
            left: c_cols,
            right: fam.dim(),
        });
    }
    let ia = fam.node_index(s)?;
    let iq = fam.node_index(tau_prime)?;
    if iq <= ia {
        return Err(Error::BadSubInterval {
            s,
            tau_prime,
            tau: fam.horizon(),
        });
    }
    Ok((ia, iq))
}

/// Admissibility constant of an observation along an evolution family on
/// [s, tau_prime].
pub fn gamma_evolution(
    u: &EvolutionFamily,
    c: &ObservationMap,
    theta: f64,
    s: f64,
    tau_prime: f64,
    probe_count: usize,
    seed: u64,
) -> Result<AdmissibilityReport> {
    validate_exponent("theta", theta)?;
    if probe_count == 0 {
        return Err(Error::invalid("at least one probe is required"));
    }
    let fam = u.family.as_ref();
    let include_anchor = anchor_included(c.kind);
    let (ia, iq) = evolution_indices(fam, c.matrix.ncols(), s, tau_prime)?;
    let stack = evolution_stack(
        u,
        &|_| &c.matrix,
        &|_| &c.y_norm.weights,
        hilbert_y(&[c]),
        ia,
        iq,
        include_anchor,
    )?;
    let (gamma_hat, method) = stack.gamma(theta, probe_count, seed);
    let first_dt = fam.time_grid[ia + 1] - fam.time_grid[ia];
    let sliver = if include_anchor {
        0.0
    } else {
        stack.sliver(theta, first_dt, seed)
    };
    Ok(AdmissibilityReport {
        theta,
        s,
        tau_prime,
        gamma_hat,
        method,
        probes: probe_count,
        refinement_history: vec![(first_dt, gamma_hat)],
        sliver,
    })
}

/// As gamma_evolution with a time-sampled observation applied nodewise.
pub fn timevarying_gamma(
    u: &EvolutionFamily,
    c_nodes: &[ObservationMap],
    theta: f64,
    s: f64,
    tau_prime: f64,
    probe_count: usize,
    seed: u64,
) -> Result<AdmissibilityReport> {
    validate_exponent("theta", theta)?;
    if probe_count == 0 {
        return Err(Error::invalid("at least one probe is required"));
    }
    let fam = u.family.as_ref();
    if c_nodes.len() != fam.node_count() {
        return Err(Error::ShapeMismatch {
            context: "observation samples vs time nodes",
            left: c_nodes.len(),
            right: fam.node_count(),
        });
    }
    let cols = c_nodes[0].matrix.ncols();
    if c_nodes.iter().any(|c| c.matrix.ncols() != cols) {
        return Err(Error::invalid("observation samples disagree on dimension"));
    }
    let (ia, iq) = evolution_indices(fam, cols, s, tau_prime)?;
    let refs: Vec<&ObservationMap> = c_nodes.iter().collect();
    // The anchor cell enters only when every sampled map is regular there.
    let include_anchor = c_nodes.iter().all(|c| anchor_included(c.kind));
    let stack = evolution_stack(
        u,
        &|k| &c_nodes[k].matrix,
        &|k| &c_nodes[k].y_norm.weights,
        hilbert_y(&refs),
        ia,
        iq,
        include_anchor,
    )?;
    let (gamma_hat, method) = stack.gamma(theta, probe_count, seed);
    let first_dt = fam.time_grid[ia + 1] - fam.time_grid[ia];
    let sliver = if include_anchor {
        0.0
    } else {
        stack.sliver(theta, first_dt, seed)
    };
    Ok(AdmissibilityReport {
        theta,
        s,
        tau_prime,
        gamma_hat,
        method,
        probes: probe_count,
        refinement_history: vec![(first_dt, gamma_hat)],
        sliver,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplittingCheck {
    pub s: f64,
    pub t0: f64,
    /// theta-th power of the measured whole-interval constant.
    pub lhs_pow: f64,
    /// theta-th power of local constant plus smoothing tail term.
    pub rhs_pow: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalGammaReport {
    pub theta: f64,
    /// Sup over anchors of the up-to-horizon constants.
    pub gamma_hat: f64,
    pub per_anchor: Vec<AdmissibilityReport>,
    pub splitting: Vec<SplittingCheck>,
}

/// Smoothing-type constant for the splitting tail: sup over probes of the
/// graph-norm L^theta mass past t0, scaled by the window factor that the
/// splitting bound divides back out.
fn split_tail_constant(
    u: &EvolutionFamily,
    theta: f64,
    ia: usize,
    i0: usize,
    iend: usize,
    probe_count: usize,
    seed: u64,
) -> Result<f64> {
    let fam = u.family.as_ref();
    let n = fam.dim();
    let mut probes = gaussian_probes(n, probe_count, seed);
    orthonormalize(&mut probes, &fam.x_norm.weights);
    let tau = trapezoid_weights(&fam.time_grid[i0..=iend]);
    let window = fam.time_grid[i0] - fam.time_grid[ia];
    let theta_dual = theta / (theta - 1.0);
    let mut best: f64 = 0.0;
    for x in &probes {
        let traj = u.apply_from(ia, x)?;
        let mut s = 0.0;
        for (k, w) in tau.iter().enumerate() {
            let v = &traj[i0 - ia + k];
            s += w * fam.d_norm.eval(v, &fam.x_norm).powf(theta);
        }
        best = best.max(s.powf(1.0 / theta) * window.powf(1.0 / theta_dual));
    }
    Ok(best)
}

/// Sup over anchors of the whole-horizon admissibility constant, with the
/// local-plus-tail splitting inequality evaluated at t0 = s + alpha.
pub fn gamma_global(
    u: &EvolutionFamily,
    c: &ObservationMap,
    theta: f64,
    anchors: &[f64],
    alpha: f64,
    probe_count: usize,
    seed: u64,
) -> Result<GlobalGammaReport> {
    validate_exponent("theta", theta)?;
    if anchors.is_empty() {
        return Err(Error::invalid("at least one anchor is required"));
    }
    let fam = u.family.as_ref();
    let tau_end = fam.horizon();
    let obs = obs_norm_d_to_y(c, &fam.d_norm, &fam.x_norm, probe_count, seed);
    let mut per_anchor = Vec::with_capacity(anchors.len());
    let mut splitting = Vec::new();
    let mut gamma_hat: f64 = 0.0;
    for &s in anchors {
        let full = gamma_evolution(u, c, theta, s, tau_end, probe_count, seed)?;
        gamma_hat = gamma_hat.max(full.gamma_hat);
        let t0 = s + alpha;
        if t0 < tau_end - 1e-9 * tau_end.max(1.0) {
            let local = gamma_evolution(u, c, theta, s, t0, probe_count, seed)?;
            let ia = fam.node_index(s)?;
            let i0 = fam.node_index(t0)?;
            let iend = fam.node_index(tau_end)?;
            let c_split =
                split_tail_constant(u, theta, ia, i0, iend, probe_count, seed)?;
            let theta_dual = theta / (theta - 1.0);
            let lhs_pow = full.gamma_hat.powf(theta);
            let rhs_pow = local.gamma_hat.powf(theta)
                + (c_split * obs).powf(theta) / (t0 - s).powf(theta / theta_dual);
            splitting.push(SplittingCheck {
                s,
                t0,
                lhs_pow,
                rhs_pow,
                holds: lhs_pow <= 1.05 * rhs_pow,
            });
        }
        per_anchor.push(full);
    }
    Ok(GlobalGammaReport {
        theta,
        gamma_hat,
        per_anchor,
        splitting,
    })
}

/// Probe estimate of ‖C‖ from the graph norm to Y; coordinate ascent on the
/// ratio because the graph norm is a sum of two norms with no SVD form.
pub fn obs_norm_d_to_y(
    c: &ObservationMap,
    d_norm: &DNorm,
    x_norm: &XNorm,
    probe_count: usize,
    seed: u64,
) -> f64 {
    let n = c.matrix.ncols();
    let mut probes = gaussian_probes(n, probe_count.max(8), seed);
    orthonormalize(&mut probes, &x_norm.weights);
    let ratio = |x: &DVector<f64>| -> f64 {
        let d = d_norm.eval(x, x_norm);
        if d <= 1e-300 {
            return 0.0;
        }
        c.y_norm_of(&c.apply(x)) / d
    };
    let mut best = 0.0;
    let mut best_x = probes[0].clone();
    for x in &probes {
        let v = ratio(x);
        if v > best {
            best = v;
            best_x = x.clone();
        }
    }
    let mut x = best_x;
    for &delta in &[0.3, 0.05, 0.01] {
        for _ in 0..3 {
            let mut improved = false;
            for i in 0..n {
                for sign in [1.0, -1.0] {
                    let mut cand = x.clone();
                    cand[i] += sign * delta / x_norm.weights[i].sqrt();
                    let v = ratio(&cand);
                    if v > best * (1.0 + 1e-14) {
                        best = v;
                        x = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    best
}
