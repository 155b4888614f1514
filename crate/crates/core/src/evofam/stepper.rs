//! One-step time marching for non-autonomous linear problems and the lazily
//! memoized propagator table.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, RwLock};

use nalgebra::linalg::LU;
use nalgebra::{DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::expm;
use crate::opalg::family::OperatorFamily;
use crate::opalg::norms::weighted_op_norm;
use crate::opalg::operator::DiscreteOperator;
use crate::probe::rng_for;

/// One-step scheme. The operator is frozen at the left endpoint of each step
/// in both cases, matching piecewise-constant-left coefficient interpolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitEuler,
    CrankNicolson,
}

/// Anchor columns U(·, t_i) are memoized while their total size stays under
/// this many bytes; queries beyond the budget stream without caching.
pub const DEFAULT_MEMO_BUDGET: usize = 96 << 20;

type StepLu = LU<f64, Dyn, Dyn>;

/// Factored one-step map: x_{k+1} = lu⁻¹(x_k) for the implicit scheme,
/// lu⁻¹(left · x_k) for the trapezoidal one.
pub(crate) struct StepFactors {
    pub lu: StepLu,
    pub left: Option<DMatrix<f64>>,
}

pub(crate) fn factor_step(a: &DMatrix<f64>, dt: f64, scheme: Scheme) -> StepFactors {
    let n = a.nrows();
    match scheme {
        Scheme::ImplicitEuler => {
            let m = DMatrix::identity(n, n) + a * dt;
            StepFactors {
                lu: m.lu(),
                left: None,
            }
        }
        Scheme::CrankNicolson => {
            let m = DMatrix::identity(n, n) + a * (0.5 * dt);
            let left = DMatrix::identity(n, n) - a * (0.5 * dt);
            StepFactors {
                lu: m.lu(),
                left: Some(left),
            }
        }
    }
}

/// Per-step factorizations over a node range, collapsing to a single shared
/// factor for constant families on uniform grids. Costs one n^2 block per
/// step otherwise, which is the price of never refactoring inside probe
/// loops.
pub(crate) enum FactorCache {
    Shared(StepFactors),
    PerStep {
        offset: usize,
        factors: Vec<StepFactors>,
    },
}

impl FactorCache {
    /// Factors for the steps between nodes `ia` and `ib` of the family grid.
    pub(crate) fn build(
        family: &OperatorFamily,
        ia: usize,
        ib: usize,
        scheme: Scheme,
    ) -> Self {
        let dts: Vec<f64> = family.time_grid[ia..=ib]
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect();
        let dt0 = dts[0];
        let uniform = dts.iter().all(|&d| (d - dt0).abs() <= 1e-12 * dt0.max(1.0));
        if family.is_constant() && uniform {
            FactorCache::Shared(factor_step(family.sample(0), dt0, scheme))
        } else {
            FactorCache::PerStep {
                offset: ia,
                factors: (0..dts.len())
                    .map(|k| factor_step(family.sample(ia + k), dts[k], scheme))
                    .collect(),
            }
        }
    }

    /// Factors of the step leaving absolute node `j`.
    pub(crate) fn at(&self, j: usize) -> &StepFactors {
        match self {
            FactorCache::Shared(f) => f,
            FactorCache::PerStep { offset, factors } => &factors[j - offset],
        }
    }
}

impl StepFactors {
    pub(crate) fn advance_block(
        &self,
        x: &DMatrix<f64>,
        index: usize,
        t: f64,
    ) -> Result<DMatrix<f64>> {
        let rhs = match &self.left {
            Some(left) => left * x,
            None => x.clone(),
        };
        self.lu
            .solve(&rhs)
            .ok_or(Error::SingularStep { index, t })
    }

    pub(crate) fn advance_vector(
        &self,
        x: &DVector<f64>,
        index: usize,
        t: f64,
    ) -> Result<DVector<f64>> {
        let rhs = match &self.left {
            Some(left) => left * x,
            None => x.clone(),
        };
        self.lu
            .solve(&rhs)
            .ok_or(Error::SingularStep { index, t })
    }
}

/// The discrete evolution system U(t_j, t_i): one-step maps composed left to
/// right on the family's time grid.
pub struct EvolutionFamily {
    pub family: Arc<OperatorFamily>,
    pub scheme: Scheme,
    /// Index of the anchor time the system was requested from.
    pub anchor: usize,
    memo: RwLock<MemoState>,
    pub memo_budget: usize,
}

struct MemoState {
    columns: BTreeMap<usize, Arc<Vec<DMatrix<f64>>>>,
    used_bytes: usize,
}

/// Builds the evolution system for a family, anchored at time `s` (which
/// must be a grid node).
pub fn propagate(
    family: &Arc<OperatorFamily>,
    s: f64,
    scheme: Scheme,
) -> Result<EvolutionFamily> {
    let anchor = family.node_index(s)?;
    Ok(EvolutionFamily {
        family: family.clone(),
        scheme,
        anchor,
        memo: RwLock::new(MemoState {
            columns: BTreeMap::new(),
            used_bytes: 0,
        }),
        memo_budget: DEFAULT_MEMO_BUDGET,
    })
}

impl EvolutionFamily {
    pub fn node_count(&self) -> usize {
        self.family.node_count()
    }

    pub fn dim(&self) -> usize {
        self.family.dim()
    }

    /// Shared one-step factors when the family is constant on a uniform
    /// grid; None means factor per step.
    fn shared_factors(&self) -> Option<StepFactors> {
        if !self.family.is_constant() {
            return None;
        }
        let grid = &self.family.time_grid;
        if grid.len() < 2 {
            return None;
        }
        let dt = grid[1] - grid[0];
        let uniform = grid
            .windows(2)
            .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-12 * dt.max(1.0));
        if !uniform {
            return None;
        }
        Some(factor_step(self.family.sample(0), dt, self.scheme))
    }

    fn factors_for(&self, j: usize) -> StepFactors {
        let dt = self.family.time_grid[j + 1] - self.family.time_grid[j];
        factor_step(self.family.sample(j), dt, self.scheme)
    }

    /// U(t_j, t_i) x for every j in i..=last, by one streamed vector walk.
    pub fn apply_from(&self, i: usize, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        let k = self.node_count();
        if i >= k {
            return Err(Error::invalid("anchor index beyond the time grid"));
        }
        let shared = self.shared_factors();
        let mut out = Vec::with_capacity(k - i);
        let mut state = x.clone();
        out.push(state.clone());
        for j in i..k - 1 {
            let t = self.family.time_grid[j];
            state = match &shared {
                Some(f) => f.advance_vector(&state, j, t)?,
                None => self
                    .factors_for(j)
                    .advance_vector(&state, j, t)?,
            };
            out.push(state.clone());
        }
        Ok(out)
    }

    /// Block version of [`apply_from`]: marches several probes at once.
    pub fn apply_block_from(&self, i: usize, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        let k = self.node_count();
        if i >= k {
            return Err(Error::invalid("anchor index beyond the time grid"));
        }
        let shared = self.shared_factors();
        let mut out = Vec::with_capacity(k - i);
        let mut state = x.clone();
        out.push(state.clone());
        for j in i..k - 1 {
            let t = self.family.time_grid[j];
            state = match &shared {
                Some(f) => f.advance_block(&state, j, t)?,
                None => self.factors_for(j).advance_block(&state, j, t)?,
            };
            out.push(state.clone());
        }
        Ok(out)
    }

    /// Full anchor column [U(t_i,t_i), ..., U(t_K,t_i)], memoized while the
    /// byte budget lasts.
    pub fn anchor_column(&self, i: usize) -> Result<Arc<Vec<DMatrix<f64>>>> {
        if let Some(hit) = self.memo.read().unwrap().columns.get(&i) {
            return Ok(hit.clone());
        }
        let n = self.dim();
        let column = Arc::new(self.apply_block_from(i, &DMatrix::identity(n, n))?);
        let bytes = column.len() * n * n * 8;
        let mut memo = self.memo.write().unwrap();
        if !memo.columns.contains_key(&i) && memo.used_bytes + bytes <= self.memo_budget {
            memo.used_bytes += bytes;
            memo.columns.insert(i, column.clone());
        }
        Ok(column)
    }

    /// U(t_j, t_i). Identity for j == i, exact by construction.
    pub fn propagator(&self, j: usize, i: usize) -> Result<DMatrix<f64>> {
        if j < i {
            return Err(Error::invalid(
                "propagators are time ordered: target node precedes the anchor",
            ));
        }
        if j >= self.node_count() {
            return Err(Error::invalid("target node beyond the time grid"));
        }
        if j == i {
            return Ok(DMatrix::identity(self.dim(), self.dim()));
        }
        if let Some(hit) = self.memo.read().unwrap().columns.get(&i) {
            return Ok(hit[j - i].clone());
        }
        let snaps = self.walk_snapshots(i, &[j])?;
        Ok(snaps.into_iter().next().unwrap().1)
    }

    /// Streams one matrix walk from `anchor`, returning U(t_j, t_anchor) at
    /// the requested stops only. Memoizes nothing.
    pub fn walk_snapshots(
        &self,
        anchor: usize,
        stops: &[usize],
    ) -> Result<BTreeMap<usize, DMatrix<f64>>> {
        let k = self.node_count();
        let wanted: BTreeSet<usize> = stops.iter().copied().collect();
        if let Some(&max) = wanted.iter().next_back() {
            if max >= k {
                return Err(Error::invalid("snapshot stop beyond the time grid"));
            }
        }
        if wanted.iter().next().is_some_and(|&min| min < anchor) {
            return Err(Error::invalid(
                "propagators are time ordered: snapshot precedes the anchor",
            ));
        }
        let n = self.dim();
        let shared = self.shared_factors();
        let mut out = BTreeMap::new();
        let mut state = DMatrix::identity(n, n);
        let last = *wanted.iter().next_back().unwrap_or(&anchor);
        for j in anchor..=last {
            if wanted.contains(&j) {
                out.insert(j, state.clone());
            }
            if j == last {
                break;
            }
            let t = self.family.time_grid[j];
            state = match &shared {
                Some(f) => f.advance_block(&state, j, t)?,
                None => self.factors_for(j).advance_block(&state, j, t)?,
            };
        }
        Ok(out)
    }

    /// Largest weighted operator norm over a deterministic sample of table
    /// entries; finite by stability of the schemes on elliptic families.
    pub fn table_norm_bound(&self, pair_count: usize) -> Result<f64> {
        let k = self.node_count();
        let w = &self.family.x_norm.weights;
        let mut rng = rng_for(0xB0DD);
        let mut anchors: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        anchors.entry(0).or_default().insert(k - 1);
        for _ in 0..pair_count {
            let i = rng.gen_range(0..k);
            let j = rng.gen_range(i..k);
            anchors.entry(i).or_default().insert(j);
        }
        let mut sup: f64 = 0.0;
        for (i, stops) in anchors {
            let stops: Vec<usize> = stops.into_iter().collect();
            for (_, u) in self.walk_snapshots(i, &stops)? {
                sup = sup.max(weighted_op_norm(&u, w));
            }
        }
        Ok(sup)
    }
}

/// Dense matrix exponential of −t·A, the autonomous ground truth.
pub fn expm_oracle(op: &DiscreteOperator, t: f64) -> Result<DMatrix<f64>> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!(
            "semigroup time must be nonnegative, got {t}"
        )));
    }
    if op.matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("operator has non-finite entries"));
    }
    let result = expm(&(&op.matrix * (-t)));
    if result.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "matrix exponential overflowed to non-finite entries",
        ));
    }
    Ok(result)
}

/// Worst sampled violation of U(t_j,t_i) = U(t_j,t_k)U(t_k,t_i) in the
/// weighted operator norm. One-step composition makes this rounding-level.
pub fn cocycle_residual(u: &EvolutionFamily, triple_count: usize) -> Result<f64> {
    let k = u.node_count();
    let w = &u.family.x_norm.weights;
    let mut rng = rng_for(0xC0C7);
    let mut triples: Vec<(usize, usize, usize)> = vec![
        (0, 0, 0),
        (0, (k - 1) / 2, k - 1),
        (0, 0, k - 1),
        (0, k - 1, k - 1),
    ];
    for _ in 0..triple_count {
        let i = rng.gen_range(0..k);
        let mid = rng.gen_range(i..k);
        let j = rng.gen_range(mid..k);
        triples.push((i, mid, j));
    }

    // One streamed walk per distinct anchor, capturing every stop needed.
    let mut stops: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(i, mid, j) in &triples {
        stops.entry(i).or_default().extend([mid, j]);
        stops.entry(mid).or_default().insert(j);
    }
    let mut tables: BTreeMap<usize, BTreeMap<usize, DMatrix<f64>>> = BTreeMap::new();
    for (anchor, set) in stops {
        let list: Vec<usize> = set.into_iter().collect();
        tables.insert(anchor, u.walk_snapshots(anchor, &list)?);
    }

    let mut worst: f64 = 0.0;
    for (i, mid, j) in triples {
        let whole = &tables[&i][&j];
        let second = &tables[&mid][&j];
        let first = &tables[&i][&mid];
        let residual = whole - second * first;
        worst = worst.max(weighted_op_norm(&residual, w));
    }
    Ok(worst)
}
