//! Seeded probe generation for sup-type constant estimates.
//!
//! All estimators draw probes through this module so that (a) a fixed seed
//! reproduces every report byte for byte and (b) the probe stream is
//! prefix-stable: the first k probes of a (seed, count) draw do not depend on
//! count, which makes "more probes never lowers the estimate" a testable
//! monotonicity property.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal via Box-Muller on the ChaCha stream.
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| standard_normal(rng))
}

/// Gaussian probes, drawn sequentially so prefixes are stable in `count`.
pub fn gaussian_probes(dim: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = rng_for(seed);
    (0..count).map(|_| gaussian_vector(&mut rng, dim)).collect()
}

/// Modified Gram-Schmidt in the weighted inner product sum w_i x_i y_i.
///
/// Probes that collapse to numerical zero against earlier ones are redrawn
/// as unit coordinate directions to keep the set full rank.
pub fn orthonormalize(probes: &mut [DVector<f64>], weights: &DVector<f64>) {
    let dim = weights.len();
    for j in 0..probes.len() {
        for i in 0..j {
            let proj = weighted_inner(&probes[j], &probes[i], weights);
            let prev = probes[i].clone();
            probes[j].axpy(-proj, &prev, 1.0);
        }
        let norm = weighted_inner(&probes[j], &probes[j], weights).sqrt();
        if norm > 1e-12 {
            probes[j] /= norm;
        } else {
            let mut e = DVector::zeros(dim);
            e[j % dim] = 1.0 / weights[j % dim].sqrt();
            probes[j] = e;
        }
    }
}

pub fn weighted_inner(x: &DVector<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..w.len() {
        s += w[i] * x[i] * y[i];
    }
    s
}

/// Stable per-task seed derivation for fan-out loops.
pub fn derive_seed(base: u64, task: u64) -> u64 {
    // SplitMix64 step keeps derived streams decorrelated.
    let mut z = base ^ task.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_stream_is_prefix_stable() {
        let a = gaussian_probes(5, 3, 42);
        let b = gaussian_probes(5, 8, 42);
        for k in 0..3 {
            assert_eq!(a[k], b[k]);
        }
    }

    #[test]
    fn orthonormalize_yields_weighted_orthonormal_set() {
        let w = DVector::from_vec(vec![0.5, 1.0, 2.0, 0.25]);
        let mut probes = gaussian_probes(4, 4, 7);
        orthonormalize(&mut probes, &w);
        for i in 0..4 {
            for j in 0..=i {
                let v = weighted_inner(&probes[i], &probes[j], &w);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-10, "gram({i},{j}) = {v}");
            }
        }
    }
}
