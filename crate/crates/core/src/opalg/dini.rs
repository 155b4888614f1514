//! Modulus-of-continuity estimation for operator families: how fast A(t)
//! drifts, measured from the domain graph norm into the state norm, with the
//! state-bounded part split off as a constant.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opalg::family::OperatorFamily;
use crate::opalg::norms::graph_to_out_norm;
use crate::opalg::spectral::operator_eig;
use crate::probe::gaussian_probes;

/// Estimated modulus ω̂ on a lag grid, the fitted state-bounded constant η,
/// and the midpoint-rule value of ∫ (ω̂(t)/t)^ν dt with its divergence
/// diagnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiniModulus {
    /// Sorted lags the modulus was sampled at.
    pub lags: Vec<f64>,
    /// Cumulative-max modulus estimate per lag; nondecreasing.
    pub omega_hat: Vec<f64>,
    /// Fitted constant for the state-bounded part of the drift.
    pub eta: f64,
    pub nu: f64,
    /// Midpoint-rule integral of (ω̂(t)/t)^ν over [smallest lag, horizon].
    pub dini_integral: f64,
    /// (lower limit, tail integral) with doubling lower limits; a finest/next
    /// ratio that stays ≥ 1.25 flags a non-integrable singularity.
    pub tail_integrals: Vec<(f64, f64)>,
    pub divergent: bool,
}

/// Probe pair with extreme domain amplification, used to separate the
/// ω·(graph norm) part of a drift from the η·(state norm) part.
struct ExtremeProbes {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

pub fn dini_modulus(
    family: &OperatorFamily,
    nu: f64,
    lag_set: &[f64],
) -> Result<DiniModulus> {
    if family.node_count() < 2 {
        return Err(Error::invalid(
            "modulus estimation needs at least two time samples",
        ));
    }
    if !(nu > 1.0) {
        return Err(Error::ExponentOutOfRange {
            name: "nu",
            value: nu,
            range: "(1, inf)",
        });
    }
    let horizon = family.horizon();
    let mut lags: Vec<f64> = lag_set
        .iter()
        .copied()
        .filter(|&d| d > 0.0 && d <= horizon)
        .collect();
    lags.sort_by(f64::total_cmp);
    lags.dedup();
    if lags.is_empty() {
        return Err(Error::invalid("lag set is empty after range filtering"));
    }

    if family.is_constant() {
        let omega_hat = vec![0.0; lags.len()];
        return Ok(DiniModulus {
            tail_integrals: vec![(lags[0], 0.0)],
            lags,
            omega_hat,
            eta: 0.0,
            nu,
            dini_integral: 0.0,
            divergent: false,
        });
    }

    let probes = extreme_probes(family);
    let w = &family.x_norm.weights;
    let reference = family.d_norm.reference.as_ref();

    // Pass 1: per lag, the sampled pairs' two-point data and the certified
    // graph-norm value of the drift.
    struct PairData {
        full: f64,
        r_lo: f64,
        a_lo: f64,
        r_hi: f64,
        a_hi: f64,
    }
    let mut per_lag: Vec<Vec<PairData>> = Vec::with_capacity(lags.len());
    let norm_lo = family.x_norm.eval(&probes.lo);
    let norm_hi = family.x_norm.eval(&probes.hi);
    let a_lo = 1.0 + family.x_norm.eval(&(reference * &probes.lo)) / norm_lo;
    let a_hi = 1.0 + family.x_norm.eval(&(reference * &probes.hi)) / norm_hi;
    for &lag in &lags {
        let mut data = Vec::new();
        for (i, j) in sampled_pairs(&family.time_grid, lag) {
            let delta = family.sample(j) - family.sample(i);
            let full = graph_to_out_norm(&delta, w, reference, w).value;
            let r_lo = family.x_norm.eval(&(&delta * &probes.lo)) / norm_lo;
            let r_hi = family.x_norm.eval(&(&delta * &probes.hi)) / norm_hi;
            data.push(PairData {
                full,
                r_lo,
                a_lo,
                r_hi,
                a_hi,
            });
        }
        per_lag.push(data);
    }

    // Two-point fit per pair: solve r = ω·a + η through the low- and
    // high-amplification probes, clamped to the feasible quadrant. The
    // family-wide constant is the largest fitted η (one constant must serve
    // every pair); zero for families whose drift is graph-norm dominated.
    let mut eta: f64 = 0.0;
    for data in per_lag.iter().flatten() {
        let denom = data.a_hi - data.a_lo;
        let eta_k = if denom.abs() < 1e-9 {
            0.0
        } else {
            let slope = (data.r_hi - data.r_lo) / denom;
            if slope < 0.0 {
                data.r_lo.max(data.r_hi)
            } else {
                (data.r_lo - slope * data.a_lo).max(0.0)
            }
        };
        eta = eta.max(eta_k);
    }

    // Pass 2: per-lag modulus with the shared η subtracted, then cumulative
    // max so ω̂ is a genuine modulus.
    let mut omega_hat = Vec::with_capacity(lags.len());
    let mut running: f64 = 0.0;
    for data in &per_lag {
        for pair in data {
            let omega_k = if eta == 0.0 {
                pair.full
            } else {
                let from_lo = (pair.r_lo - eta) / pair.a_lo;
                let from_hi = (pair.r_hi - eta) / pair.a_hi;
                from_lo.max(from_hi).clamp(0.0, pair.full)
            };
            running = running.max(omega_k);
        }
        omega_hat.push(running);
    }

    // Midpoint-rule integrals of (ω̂(t)/t)^ν with ω̂ held piecewise constant
    // from each lag to the next breakpoint.
    let integral_from = |lower: f64| -> f64 {
        let mut total = 0.0;
        let mut breaks: Vec<(f64, f64)> = Vec::new();
        for (k, &lag) in lags.iter().enumerate() {
            breaks.push((lag, omega_hat[k]));
        }
        breaks.push((horizon, *omega_hat.last().unwrap()));
        for win in breaks.windows(2) {
            let (b0, om) = win[0];
            let (b1, _) = win[1];
            let lo = b0.max(lower);
            if lo >= b1 {
                continue;
            }
            let mid = 0.5 * (lo + b1);
            total += (om / mid).powf(nu) * (b1 - lo);
        }
        total
    };

    let dini_integral = integral_from(lags[0]);
    let mut tail_integrals = Vec::new();
    let mut lower = lags[0];
    while lower <= horizon / 4.0 {
        tail_integrals.push((lower, integral_from(lower)));
        lower *= 2.0;
    }
    if tail_integrals.is_empty() {
        tail_integrals.push((lags[0], dini_integral));
    }
    let divergent = if tail_integrals.len() >= 2 {
        let finest = tail_integrals[0].1;
        let next = tail_integrals[1].1;
        next > 0.0 && finest / next >= 1.25
    } else {
        false
    };

    Ok(DiniModulus {
        lags,
        omega_hat,
        eta,
        nu,
        dini_integral,
        tail_integrals,
        divergent,
    })
}

/// Doubling lags dt, 2dt, 4dt, ... up to half the horizon; the natural lag
/// set for uniform time grids.
pub fn geometric_lags(time_grid: &[f64]) -> Vec<f64> {
    if time_grid.len() < 2 {
        return Vec::new();
    }
    let horizon = *time_grid.last().unwrap();
    let dt = time_grid[1] - time_grid[0];
    let mut lags = Vec::new();
    let mut lag = dt;
    while lag <= 0.5 * horizon {
        lags.push(lag);
        lag *= 2.0;
    }
    if lags.is_empty() {
        lags.push(horizon);
    }
    lags
}

/// Up to 9 index pairs (i, j) with t_j − t_i ≈ lag, anchors spread across
/// the grid; always includes the first and last admissible anchor.
fn sampled_pairs(time_grid: &[f64], lag: f64) -> Vec<(usize, usize)> {
    let k = time_grid.len();
    let dt = time_grid[1] - time_grid[0];
    let uniform = time_grid
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-12 * dt.max(1.0));
    let mut pairs = Vec::new();
    if uniform {
        let m = (lag / dt).round().max(1.0) as usize;
        if m >= k {
            return pairs;
        }
        let last = k - 1 - m;
        for q in 0..=8usize {
            let i = (q * last) / 8;
            pairs.push((i, i + m));
        }
        pairs.dedup();
    } else {
        let mut candidates = Vec::new();
        for i in 0..k {
            for j in (i + 1)..k {
                let gap = time_grid[j] - time_grid[i];
                if (gap - lag).abs() <= 0.5 * dt.max(1e-12) {
                    candidates.push((i, j));
                }
            }
        }
        let step = (candidates.len() / 9).max(1);
        pairs = candidates.into_iter().step_by(step).take(9).collect();
    }
    pairs
}

/// Probes with the smallest and largest reference amplification available:
/// eigenvectors of the domain reference when it decomposes, otherwise the
/// extremes over a deterministic Gaussian probe set.
fn extreme_probes(family: &OperatorFamily) -> ExtremeProbes {
    let reference = family.d_norm.reference.as_ref();
    let w = &family.x_norm.weights;
    if let Ok(eig) = operator_eig(reference, Some(w)) {
        let n = eig.vectors.nrows();
        let lo = eig.vectors.column(0).into_owned();
        let hi = eig.vectors.column(n - 1).into_owned();
        return ExtremeProbes { lo, hi };
    }
    let dim = reference.nrows();
    let probes = gaussian_probes(dim, 32, 0xD1D1);
    let ratio = |x: &DVector<f64>| {
        family.x_norm.eval(&(reference * x)) / family.x_norm.eval(x)
    };
    let lo = probes
        .iter()
        .min_by(|a, b| ratio(a).total_cmp(&ratio(b)))
        .unwrap()
        .clone();
    let hi = probes
        .iter()
        .max_by(|a, b| ratio(a).total_cmp(&ratio(b)))
        .unwrap()
        .clone();
    ExtremeProbes { lo, hi }
}
