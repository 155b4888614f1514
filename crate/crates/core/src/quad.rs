//! Quadrature over time grids: trapezoid weights, discrete L^p norms, and an
//! adaptive Simpson rule for semi-infinite spectral integrals.

use crate::error::{Error, Result};

/// Closed trapezoid weights on a strictly increasing node set.
pub fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        let half = 0.5 * (nodes[k + 1] - nodes[k]);
        w[k] += half;
        w[k + 1] += half;
    }
    w
}

/// Discrete L^p norm (sum w |v|^p)^(1/p) for p in [1, inf).
pub fn lp_norm(values: &[f64], weights: &[f64], p: f64) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    if (p - 2.0).abs() < 1e-14 {
        let s: f64 = values
            .iter()
            .zip(weights)
            .map(|(v, w)| w * v * v)
            .sum();
        return s.max(0.0).sqrt();
    }
    let s: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * v.abs().powf(p))
        .sum();
    s.max(0.0).powf(1.0 / p)
}

pub fn validate_time_grid(nodes: &[f64]) -> Result<()> {
    if nodes.len() < 2 || nodes[0] != 0.0 {
        return Err(Error::BadTimeGrid);
    }
    for k in 1..nodes.len() {
        let dt = nodes[k] - nodes[k - 1];
        if dt <= 0.0 {
            return Err(Error::BadTimeGrid);
        }
        if dt < 1e-12 {
            return Err(Error::StepUnderflow(dt));
        }
    }
    Ok(())
}

/// Uniform grid 0, dt, ..., K dt with the last node snapped onto `horizon`.
pub fn uniform_grid(horizon: f64, dt: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0) || !(dt > 0.0) {
        return Err(Error::BadTimeGrid);
    }
    if dt < 1e-12 {
        return Err(Error::StepUnderflow(dt));
    }
    let steps = (horizon / dt).round() as usize;
    if steps < 1 || ((steps as f64) * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::invalid(format!(
            "step {dt} does not divide the horizon {horizon}"
        )));
    }
    let mut nodes: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    nodes[steps] = horizon;
    Ok(nodes)
}

/// Mean convergence order of an error ladder of (step, error) rungs: the
/// average slope of log error against log step over consecutive pairs.
/// Rungs with vanishing error are skipped.
pub fn ladder_order(rungs: &[(f64, f64)]) -> f64 {
    let mut orders = Vec::new();
    for w in rungs.windows(2) {
        let (dt0, e0) = w[0];
        let (dt1, e1) = w[1];
        if e0 > 0.0 && e1 > 0.0 && dt0 != dt1 {
            orders.push((e0 / e1).ln() / (dt0 / dt1).ln());
        }
    }
    if orders.is_empty() {
        0.0
    } else {
        orders.iter().sum::<f64>() / orders.len() as f64
    }
}

/// Adaptive Simpson quadrature with a relative tolerance.
///
/// Depth is capped; the worst-panel estimate keeps the result finite on
/// integrands the subdivision cannot resolve.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let scale = whole.abs().max(1e-300);
    simpson_rec(f, a, b, fa, fm, fb, whole, rel_tol * scale, 24)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    abs_tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * abs_tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * abs_tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * abs_tol, depth - 1)
}
