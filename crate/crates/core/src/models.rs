//! Model families: histograms, piecewise Chebyshev polynomials and discrete
//! trigonometric polynomials, together with collection-level constants.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linspace::{self, OrthonormalBasis, Subspace};

/// Default number of (m, m') pairs below which `Λ̄∞` is computed exactly.
pub const PAIR_BUDGET: usize = 10_000;

/// Partition of `{1, …, n}` into consecutive blocks.
///
/// Stored as the (1-based, inclusive) right ends of the blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Partition {
    n: usize,
    ends: Vec<usize>,
}

impl Partition {
    /// Builds a partition from 1-based inclusive `[lo, hi]` blocks.
    pub fn new(n: usize, blocks: &[(usize, usize)]) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidPartition("no blocks".into()));
        }
        let mut expected_lo = 1;
        let mut ends = Vec::with_capacity(blocks.len());
        for &(lo, hi) in blocks {
            if lo != expected_lo || hi < lo {
                return Err(Error::InvalidPartition(format!(
                    "block [{lo}, {hi}] does not continue at {expected_lo}"
                )));
            }
            ends.push(hi);
            expected_lo = hi + 1;
        }
        if expected_lo != n + 1 {
            return Err(Error::InvalidPartition(format!(
                "blocks cover {{1, …, {}}} instead of {{1, …, {n}}}",
                expected_lo - 1
            )));
        }
        Ok(Self { n, ends })
    }

    pub(crate) fn from_ends(n: usize, ends: Vec<usize>) -> Self {
        debug_assert!(ends.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(ends.last().copied(), Some(n));
        Self { n, ends }
    }

    pub fn trivial(n: usize) -> Self {
        Self { n, ends: vec![n] }
    }

    /// `k` blocks of (nearly) equal size, larger blocks first.
    pub fn regular(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::InvalidPartition(format!(
                "cannot split {n} points into {k} blocks"
            )));
        }
        let (q, r) = (n / k, n % k);
        let mut ends = Vec::with_capacity(k);
        let mut acc = 0;
        for b in 0..k {
            acc += q + usize::from(b < r);
            ends.push(acc);
        }
        Ok(Self { n, ends })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of blocks `|m|`.
    pub fn len(&self) -> usize {
        self.ends.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ends.is_empty()
    }

    /// Blocks as 1-based inclusive `(lo, hi)` pairs.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ends.iter().scan(1usize, |lo, &hi| {
            let b = (*lo, hi);
            *lo = hi + 1;
            Some(b)
        })
    }

    pub fn min_block_size(&self) -> usize {
        self.blocks().map(|(lo, hi)| hi - lo + 1).min().unwrap_or(0)
    }

    /// Common refinement `m ∨ m' = {I ∩ I'}`. For consecutive blocks the
    /// nonempty intersections are delimited by the union of both cut sets.
    pub fn refine(&self, other: &Partition) -> Result<Partition> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        let ends: BTreeSet<usize> = self.ends.iter().chain(&other.ends).copied().collect();
        Ok(Partition::from_ends(self.n, ends.into_iter().collect()))
    }

    /// Whether every block of `self` lies inside a block of `coarser`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        self.n == coarser.n && coarser.ends.iter().all(|e| self.ends.binary_search(e).is_ok())
    }

    /// Whether `i | i+1` (1-based) is a block boundary.
    pub fn has_cut_after(&self, i: usize) -> bool {
        self.ends.binary_search(&i).is_ok()
    }
}

fn histogram_columns(m: &Partition) -> Vec<Vec<f64>> {
    m.blocks()
        .map(|(lo, hi)| {
            let w = 1.0 / ((hi - lo + 1) as f64).sqrt();
            let mut v = vec![0.0; m.n];
            v[lo - 1..hi].iter_mut().for_each(|x| *x = w);
            v
        })
        .collect()
}

/// Vectors constant on each block of `m`; basis `1_I / √|I|`.
pub fn histogram_space(m: &Partition) -> Result<Subspace> {
    Ok(Subspace::new(OrthonormalBasis::from_columns(
        m.n,
        histogram_columns(m),
    )?))
}

/// Orthonormal discrete Chebyshev (Gram) polynomials of degree `0..=d` on
/// the points `0..size`, by the three-term recurrence with one extra
/// reorthogonalization pass. Requires `d < size`.
pub fn discrete_chebyshev(size: usize, d: usize) -> Vec<Vec<f64>> {
    let center = (size as f64 - 1.0) / 2.0;
    let t: Vec<f64> = (0..size).map(|k| k as f64 - center).collect();
    let mut q: Vec<Vec<f64>> = vec![vec![1.0 / (size as f64).sqrt(); size]];
    let mut beta = 0.0;
    for j in 0..d {
        let cur = &q[j];
        let alpha: f64 = t.iter().zip(cur).map(|(x, v)| x * v * v).sum();
        let mut r: Vec<f64> = (0..size)
            .map(|k| {
                let prev = if j > 0 { beta * q[j - 1][k] } else { 0.0 };
                (t[k] - alpha) * cur[k] - prev
            })
            .collect();
        for prev in &q {
            let c = linspace::dot(&r, prev);
            r.iter_mut().zip(prev).for_each(|(x, p)| *x -= c * p);
        }
        beta = linspace::norm2_sq(&r).sqrt();
        r.iter_mut().for_each(|x| *x /= beta);
        q.push(r);
    }
    q
}

/// Piecewise polynomials of degree `≤ d` on the blocks of `m`, using the
/// discrete Chebyshev basis of each block.
pub fn piecewise_poly_space(m: &Partition, d: usize) -> Result<Subspace> {
    let mut cols = Vec::with_capacity(m.len() * (d + 1));
    for (lo, hi) in m.blocks() {
        let size = hi - lo + 1;
        if size < d + 1 {
            return Err(Error::BlockTooSmall {
                lo,
                hi,
                size,
                degree: d,
            });
        }
        for phi in discrete_chebyshev(size, d) {
            let mut v = vec![0.0; m.n];
            v[lo - 1..hi].copy_from_slice(&phi);
            cols.push(v);
        }
    }
    Ok(Subspace::new(OrthonormalBasis::from_columns(m.n, cols)?))
}

/// Entry `i` (1-based) of the trigonometric vector `φ_j` of ℝⁿ, at `x_i = i/n`.
pub fn trig_entry(j: usize, i: usize, n: usize) -> f64 {
    let nf = n as f64;
    if j == 0 {
        return 1.0 / nf.sqrt();
    }
    let freq = j.div_ceil(2) as f64;
    let arg = 2.0 * PI * freq * (i as f64) / nf;
    let scale = (2.0 / nf).sqrt();
    if j % 2 == 1 {
        scale * arg.cos()
    } else {
        scale * arg.sin()
    }
}

pub fn trig_vector(j: usize, n: usize) -> Vec<f64> {
    (1..=n).map(|i| trig_entry(j, i, n)).collect()
}

fn check_trig_subset(subset: &[usize], n: usize, dbar: usize) -> Result<()> {
    if 2 * dbar + 1 > n {
        return Err(Error::InvalidSubset(format!(
            "2·{dbar}+1 exceeds the ambient dimension {n}"
        )));
    }
    if let Some(j) = subset.iter().find(|&&j| j > 2 * dbar) {
        return Err(Error::InvalidSubset(format!(
            "index {j} outside {{0, …, {}}}",
            2 * dbar
        )));
    }
    let distinct: BTreeSet<_> = subset.iter().collect();
    if distinct.len() != subset.len() {
        return Err(Error::InvalidSubset("repeated index".into()));
    }
    Ok(())
}

/// Span of `{φ_j : j ∈ subset}`.
pub fn trig_space(subset: &[usize], n: usize, dbar: usize) -> Result<Subspace> {
    check_trig_subset(subset, n, dbar)?;
    if subset.is_empty() {
        return Err(Error::EmptySubset);
    }
    let cols = subset.iter().map(|&j| trig_vector(j, n)).collect();
    Ok(Subspace::new(OrthonormalBasis::from_columns(n, cols)?))
}

/// All partitions reachable from `{1, …, n}` by recursive midpoint splits
/// whose blocks keep at least `min_block` points.
///
/// Order: the unsplit block first, then every (left, right) combination of the
/// halves' own enumerations with the left index varying slowest. The trivial
/// partition comes first and the finest partition last.
pub fn dyadic_partitions(n: usize, min_block: usize) -> Result<Vec<Partition>> {
    if n < 2 {
        return Err(Error::AmbientTooSmall(n));
    }
    if min_block == 0 || min_block > n {
        return Err(Error::InvalidArgument(format!(
            "min_block must lie in 1..={n}, got {min_block}"
        )));
    }
    Ok(dyadic_ends(1, n, min_block)
        .into_iter()
        .map(|ends| Partition::from_ends(n, ends))
        .collect())
}

fn dyadic_split(lo: usize, hi: usize, min_block: usize) -> Option<usize> {
    let size = hi - lo + 1;
    let left = size / 2;
    (left >= min_block && size - left >= min_block).then_some(lo + left - 1)
}

fn dyadic_ends(lo: usize, hi: usize, min_block: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![hi]];
    if let Some(mid) = dyadic_split(lo, hi, min_block) {
        let left = dyadic_ends(lo, mid, min_block);
        let right = dyadic_ends(mid + 1, hi, min_block);
        out.reserve(left.len() * right.len());
        for l in &left {
            for r in &right {
                let mut e = Vec::with_capacity(l.len() + r.len());
                e.extend_from_slice(l);
                e.extend_from_slice(r);
                out.push(e);
            }
        }
    }
    out
}

/// Number of partitions [`dyadic_partitions`] returns, without building them.
pub fn dyadic_count(lo: usize, hi: usize, min_block: usize) -> u128 {
    match dyadic_split(lo, hi, min_block) {
        None => 1,
        Some(mid) => 1 + dyadic_count(lo, mid, min_block) * dyadic_count(mid + 1, hi, min_block),
    }
}

/// `(bound on Λ₂², bound on Λ∞)` for an orthonormal system `φ_{j,I}`,
/// `(j, I) ∈ J × P`, with `|φ_{j,I}|∞ ≤ Φ/√|I|` and block-local supports.
pub fn structural_lambda_bounds(j_size: usize, phi: f64, min_block: usize, n: usize) -> (f64, f64) {
    let jp = j_size as f64 * phi * phi;
    let l2sq = (jp / min_block as f64).min(1.0);
    let linf = jp.min((n as f64).sqrt() * l2sq.sqrt());
    (l2sq, linf)
}

/// Model family of a collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Histogram,
    PiecewisePoly { d: usize },
    Trig { dbar: usize },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Histogram => "histogram",
            Family::PiecewisePoly { .. } => "piecewise_poly",
            Family::Trig { .. } => "trig",
        }
    }

    /// Bound on `Λ∞(S_m + S_m')` valid for every pair of the family.
    pub fn lambda_bar_inf_bound(&self) -> f64 {
        match *self {
            Family::Histogram => 1.0,
            Family::PiecewisePoly { d } => d as f64 + 1.0,
            Family::Trig { dbar } => (2.0 * (2 * dbar + 1) as f64).sqrt(),
        }
    }
}

/// What a model is built from.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Partition(Partition),
    Subset(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub id: String,
    pub shape: Shape,
    /// Weight `Δ_m ≥ 0`.
    pub delta: f64,
}

/// Default weight `|m| + log 2` for partition models.
pub fn default_partition_delta(m: &Partition) -> f64 {
    m.len() as f64 + LN_2
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).map(|i| ((n - i) as f64 / (i + 1) as f64).ln()).sum()
}

/// Default weight `log C(2D̄+1, |m|) + |m|` for trigonometric subsets.
pub fn default_trig_delta(subset_len: usize, dbar: usize) -> f64 {
    ln_binomial(2 * dbar + 1, subset_len) + subset_len as f64
}

/// Collection-level constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollectionConstants {
    /// `Σ = Σ_m e^{−Δ_m}`.
    pub sigma: f64,
    /// `Λ̄∞ = (sup Λ∞(S_m + S_m')) ∨ 1`.
    pub lambda_bar_inf: f64,
    /// Whether `lambda_bar_inf` came from the exact pairwise sweep.
    pub lambda_bar_inf_exact: bool,
    /// `Λ₂(𝒮_n)` of the sum of all models.
    pub lambda2_sn: f64,
}

/// Outcome of a proposition's standing condition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionCheck {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub statement: String,
}

/// Structure of a dyadic enumeration, used for fast residual sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DyadicLayout {
    min_block: usize,
}

/// Indexed family `{S_m}` sharing one ambient dimension and family.
#[derive(Debug, Clone)]
pub struct ModelCollection {
    n: usize,
    family: Family,
    models: Vec<ModelSpec>,
    layout: Option<DyadicLayout>,
    constants: CollectionConstants,
}

impl ModelCollection {
    pub fn new(n: usize, family: Family, models: Vec<ModelSpec>) -> Result<Self> {
        Self::build(n, family, models, None, PAIR_BUDGET)
    }

    pub fn with_pair_budget(
        n: usize,
        family: Family,
        models: Vec<ModelSpec>,
        pair_budget: usize,
    ) -> Result<Self> {
        Self::build(n, family, models, None, pair_budget)
    }

    fn build(
        n: usize,
        family: Family,
        models: Vec<ModelSpec>,
        layout: Option<DyadicLayout>,
        pair_budget: usize,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::AmbientTooSmall(n));
        }
        if models.is_empty() {
            return Err(Error::EmptyCollection);
        }
        for m in &models {
            validate_model(n, family, m)?;
        }
        let mut coll = Self {
            n,
            family,
            models,
            layout,
            constants: CollectionConstants {
                sigma: 0.0,
                lambda_bar_inf: 1.0,
                lambda_bar_inf_exact: false,
                lambda2_sn: 0.0,
            },
        };
        coll.constants = coll.collection_constants(pair_budget)?;
        Ok(coll)
    }

    /// Every partition of [`dyadic_partitions`], with default weights.
    pub fn dyadic(n: usize, family: Family, min_block: usize) -> Result<Self> {
        if let Family::PiecewisePoly { d } = family {
            if min_block < d + 1 {
                return Err(Error::InvalidArgument(format!(
                    "min_block {min_block} is below d+1 = {}",
                    d + 1
                )));
            }
        }
        if matches!(family, Family::Trig { .. }) {
            return Err(Error::ModeFamilyMismatch {
                mode: "dyadic".into(),
                family: family.name().into(),
            });
        }
        let models = dyadic_partitions(n, min_block)?
            .into_iter()
            .enumerate()
            .map(|(k, p)| ModelSpec {
                id: format!("m{k}"),
                delta: default_partition_delta(&p),
                shape: Shape::Partition(p),
            })
            .collect();
        Self::build(
            n,
            family,
            models,
            Some(DyadicLayout { min_block }),
            PAIR_BUDGET,
        )
    }

    /// Partition models with default weights.
    pub fn from_partitions(n: usize, family: Family, partitions: Vec<Partition>) -> Result<Self> {
        let models = partitions
            .into_iter()
            .enumerate()
            .map(|(k, p)| ModelSpec {
                id: format!("m{k}"),
                delta: default_partition_delta(&p),
                shape: Shape::Partition(p),
            })
            .collect();
        Self::new(n, family, models)
    }

    /// Nested trigonometric models `{0, …, k−1}` for `k = 0, …, 2D̄+1`,
    /// starting from the empty model.
    pub fn trig_nested(n: usize, dbar: usize) -> Result<Self> {
        let subsets = (0..=2 * dbar + 1).map(|k| (0..k).collect()).collect();
        Self::from_subsets(n, dbar, subsets)
    }

    /// Every subset of `{0, …, 2D̄}` (including ∅), in binary-counter order.
    pub fn trig_all_subsets(n: usize, dbar: usize) -> Result<Self> {
        let size = 2 * dbar + 1;
        if size > 16 {
            return Err(Error::InvalidArgument(format!(
                "2^{size} subsets is too many to enumerate"
            )));
        }
        let subsets = (0u32..(1 << size))
            .map(|mask| (0..size).filter(|j| mask & (1 << j) != 0).collect())
            .collect();
        Self::from_subsets(n, dbar, subsets)
    }

    pub fn from_subsets(n: usize, dbar: usize, subsets: Vec<Vec<usize>>) -> Result<Self> {
        let models = subsets
            .into_iter()
            .enumerate()
            .map(|(k, s)| ModelSpec {
                id: format!("t{k}"),
                delta: default_trig_delta(s.len(), dbar),
                shape: Shape::Subset(s),
            })
            .collect();
        Self::new(n, Family::Trig { dbar }, models)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn models(&self) -> &[ModelSpec] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn constants(&self) -> CollectionConstants {
        self.constants
    }

    /// Dimension `D_m`.
    pub fn dim(&self, idx: usize) -> usize {
        match (&self.models[idx].shape, self.family) {
            (Shape::Partition(p), Family::PiecewisePoly { d }) => p.len() * (d + 1),
            (Shape::Partition(p), _) => p.len(),
            (Shape::Subset(s), _) => s.len(),
        }
    }

    /// `S_m`, or `None` for the empty trigonometric model `S_∅ = {0}`.
    pub fn space(&self, idx: usize) -> Result<Option<Subspace>> {
        self.space_of(&self.models[idx].shape).map(Some).or_else(|e| match e {
            Error::EmptySubset => Ok(None),
            e => Err(e),
        })
    }

    fn space_of(&self, shape: &Shape) -> Result<Subspace> {
        match (shape, self.family) {
            (Shape::Partition(p), Family::Histogram) => histogram_space(p),
            (Shape::Partition(p), Family::PiecewisePoly { d }) => piecewise_poly_space(p, d),
            (Shape::Subset(s), Family::Trig { dbar }) => trig_space(s, self.n, dbar),
            _ => unreachable!("shapes are validated against the family"),
        }
    }

    /// The shape whose space is `𝒮_n = Σ_m S_m`: the common refinement of all
    /// partitions, or the union of all trigonometric index sets.
    pub fn sum_shape(&self) -> Shape {
        match self.family {
            Family::Trig { .. } => {
                let union: BTreeSet<usize> = self
                    .models
                    .iter()
                    .flat_map(|m| match &m.shape {
                        Shape::Subset(s) => s.clone(),
                        Shape::Partition(_) => unreachable!(),
                    })
                    .collect();
                Shape::Subset(union.into_iter().collect())
            }
            _ => {
                let ends: BTreeSet<usize> = self
                    .models
                    .iter()
                    .flat_map(|m| match &m.shape {
                        Shape::Partition(p) => p.ends.clone(),
                        Shape::Subset(_) => unreachable!(),
                    })
                    .collect();
                Shape::Partition(Partition::from_ends(self.n, ends.into_iter().collect()))
            }
        }
    }

    /// Shape whose space is `S_m + S_m'`.
    pub fn pair_shape(&self, a: usize, b: usize) -> Result<Shape> {
        match (&self.models[a].shape, &self.models[b].shape) {
            (Shape::Partition(p), Shape::Partition(q)) => Ok(Shape::Partition(p.refine(q)?)),
            (Shape::Subset(s), Shape::Subset(t)) => {
                let u: BTreeSet<usize> = s.iter().chain(t).copied().collect();
                Ok(Shape::Subset(u.into_iter().collect()))
            }
            _ => unreachable!(),
        }
    }

    /// `S_m + S_m'` built directly on the combined shape.
    pub fn pair_space(&self, a: usize, b: usize) -> Result<Option<Subspace>> {
        match self.space_of(&self.pair_shape(a, b)?) {
            Ok(s) => Ok(Some(s)),
            Err(Error::EmptySubset) => Ok(None),
            Err(Error::BlockTooSmall { .. }) => self.spanned(&[a, b]).map(Some),
            Err(e) => Err(e),
        }
    }

    /// `Σ S_m` over `idxs` by spanning the bases. Used for piecewise sums whose
    /// common refinement has blocks shorter than `d+1`, where the sum is
    /// smaller than the piecewise space on the refinement.
    fn spanned(&self, idxs: &[usize]) -> Result<Subspace> {
        let mut cols = Vec::new();
        for &i in idxs {
            if let Some(s) = self.space(i)? {
                cols.extend(s.basis().columns().iter().cloned());
            }
        }
        Subspace::span(&cols)
    }

    /// `(Σ, Λ̄∞, Λ₂(𝒮_n))`. `Λ̄∞` is exact when `|ℳ|² ≤ pair_budget`, using
    /// `S_m + S_m' = S_{m∨m'}` (resp. `S_{m∪m'}`) and memoizing repeated sums;
    /// otherwise it falls back to the family's structural bound.
    pub fn collection_constants(&self, pair_budget: usize) -> Result<CollectionConstants> {
        let sigma = self.models.iter().map(|m| (-m.delta).exp()).sum();
        let count = self.models.len();
        let (lambda_bar_inf, exact) = if count.saturating_mul(count) <= pair_budget {
            let mut cache: HashMap<ShapeKey, f64> = HashMap::new();
            let mut worst = 0.0_f64;
            for a in 0..count {
                for b in a..count {
                    let shape = self.pair_shape(a, b)?;
                    let key = ShapeKey::from(&shape);
                    let value = match cache.get(&key) {
                        Some(v) => *v,
                        None => {
                            let v = match self.space_of(&shape) {
                                Ok(s) => s.lambda_inf(),
                                Err(Error::EmptySubset) => 0.0,
                                Err(Error::BlockTooSmall { .. }) => {
                                    // depends on the pair, not only on the refinement
                                    worst = worst.max(self.spanned(&[a, b])?.lambda_inf());
                                    continue;
                                }
                                Err(e) => return Err(e),
                            };
                            cache.insert(key, v);
                            v
                        }
                    };
                    worst = worst.max(value);
                }
            }
            (worst.max(1.0), true)
        } else {
            (self.family.lambda_bar_inf_bound().max(1.0), false)
        };
        let lambda2_sn = match self.space_of(&self.sum_shape()) {
            Ok(s) => s.lambda2(),
            Err(Error::EmptySubset) => 0.0,
            Err(Error::BlockTooSmall { .. }) => {
                self.spanned(&(0..count).collect::<Vec<_>>())?.lambda2()
            }
            Err(e) => return Err(e),
        };
        Ok(CollectionConstants {
            sigma,
            lambda_bar_inf,
            lambda_bar_inf_exact: exact,
            lambda2_sn,
        })
    }

    /// Structural `(Λ₂², Λ∞)` bounds for model `idx`.
    pub fn structural_bounds(&self, idx: usize) -> (f64, f64) {
        structural_bounds_for(&self.models[idx].shape, self.family, self.n)
    }

    /// Standing condition of the family's proposition for a given `a > 0`,
    /// evaluated on the finest partition (resp. on `D̄`).
    pub fn condition(&self, a: f64) -> ConditionCheck {
        let log_n = (self.n as f64).ln();
        match (self.family, self.sum_shape()) {
            (Family::Histogram, Shape::Partition(p)) => {
                let lhs = p.min_block_size() as f64;
                let rhs = a * a * log_n * log_n;
                ConditionCheck {
                    holds: lhs >= rhs,
                    lhs,
                    rhs,
                    statement: "min |I| ≥ a² log²(n)".into(),
                }
            }
            (Family::PiecewisePoly { d }, Shape::Partition(p)) => {
                let lhs = p.min_block_size() as f64;
                let mid = (d as f64 + 1.0) * a * a * log_n * log_n;
                ConditionCheck {
                    holds: lhs >= mid && mid >= d as f64 + 1.0,
                    lhs,
                    rhs: mid,
                    statement: "min |I| ≥ (d+1) a² log²(n) ≥ d+1".into(),
                }
            }
            (Family::Trig { dbar }, _) => {
                let lhs = (2 * dbar + 1) as f64;
                let rhs = (self.n as f64).sqrt() / (a * log_n);
                ConditionCheck {
                    holds: lhs <= rhs,
                    lhs,
                    rhs,
                    statement: "2D̄+1 ≤ √n / (a log n)".into(),
                }
            }
            _ => unreachable!(),
        }
    }

    /// `|y − Π_{S_m} y|₂²` for every model, in collection order, using the
    /// block or frequency structure of the family.
    pub fn residuals(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: y.len(),
            });
        }
        match self.family {
            Family::Trig { dbar } => {
                let total = linspace::norm2_sq(y);
                let coef_sq: Vec<f64> = (0..=2 * dbar)
                    .map(|j| {
                        let c: f64 = (1..=self.n).map(|i| y[i - 1] * trig_entry(j, i, self.n)).sum();
                        c * c
                    })
                    .collect();
                Ok(self
                    .models
                    .iter()
                    .map(|m| match &m.shape {
                        Shape::Subset(s) => {
                            (total - s.iter().map(|&j| coef_sq[j]).sum::<f64>()).max(0.0)
                        }
                        Shape::Partition(_) => unreachable!(),
                    })
                    .collect())
            }
            family => {
                let degree = match family {
                    Family::PiecewisePoly { d } => d,
                    _ => 0,
                };
                if let Some(layout) = self.layout {
                    return Ok(dyadic_residual_sweep(y, 1, self.n, layout.min_block, degree));
                }
                let mut memo: HashMap<(usize, usize), f64> = HashMap::new();
                Ok(self
                    .models
                    .iter()
                    .map(|m| match &m.shape {
                        Shape::Partition(p) => p
                            .blocks()
                            .map(|b| {
                                *memo
                                    .entry(b)
                                    .or_insert_with(|| block_residual(y, b.0, b.1, degree))
                            })
                            .sum(),
                        Shape::Subset(_) => unreachable!(),
                    })
                    .collect())
            }
        }
    }

    /// Residual of a single model, same arithmetic as [`Self::residuals`].
    pub fn residual(&self, idx: usize, y: &[f64]) -> Result<f64> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: y.len(),
            });
        }
        Ok(match (&self.models[idx].shape, self.family) {
            (Shape::Partition(p), family) => {
                let degree = match family {
                    Family::PiecewisePoly { d } => d,
                    _ => 0,
                };
                p.blocks().map(|(lo, hi)| block_residual(y, lo, hi, degree)).sum()
            }
            (Shape::Subset(s), _) => {
                let total = linspace::norm2_sq(y);
                let proj: f64 = s
                    .iter()
                    .map(|&j| {
                        let c: f64 = (1..=self.n).map(|i| y[i - 1] * trig_entry(j, i, self.n)).sum();
                        c * c
                    })
                    .sum();
                (total - proj).max(0.0)
            }
        })
    }

    /// Least-squares fit `Π_{S_m} y` (zero for the empty model).
    pub fn fit(&self, idx: usize, y: &[f64]) -> Result<Vec<f64>> {
        match self.space(idx)? {
            Some(s) => s.project(y),
            None => Ok(vec![0.0; self.n]),
        }
    }
}

fn validate_model(n: usize, family: Family, m: &ModelSpec) -> Result<()> {
    if !(m.delta >= 0.0 && m.delta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "model {} has weight {} (must be finite and ≥ 0)",
            m.id, m.delta
        )));
    }
    match (&m.shape, family) {
        (Shape::Partition(p), Family::Histogram) if p.n == n => Ok(()),
        (Shape::Partition(p), Family::PiecewisePoly { d }) if p.n == n => {
            match p.blocks().find(|(lo, hi)| hi - lo + 1 < d + 1) {
                Some((lo, hi)) => Err(Error::BlockTooSmall {
                    lo,
                    hi,
                    size: hi - lo + 1,
                    degree: d,
                }),
                None => Ok(()),
            }
        }
        (Shape::Partition(p), _) if p.n != n => Err(Error::DimensionMismatch {
            expected: n,
            got: p.n,
        }),
        (Shape::Subset(s), Family::Trig { dbar }) => check_trig_subset(s, n, dbar),
        _ => Err(Error::InvalidArgument(format!(
            "model {} does not match family {}",
            m.id,
            family.name()
        ))),
    }
}

fn structural_bounds_for(shape: &Shape, family: Family, n: usize) -> (f64, f64) {
    match (shape, family) {
        (Shape::Partition(p), Family::Histogram) => {
            structural_lambda_bounds(1, 1.0, p.min_block_size(), n)
        }
        // |φ_j(i)|² ≤ (2j+1)/|I| on a block, so Π_ii ≤ (d+1)²/|I| and by
        // Cauchy-Schwarz over the block Σ_k |Π_ik| ≤ d+1
        (Shape::Partition(p), Family::PiecewisePoly { d }) => {
            let l2sq = ((d + 1) as f64).powi(2) / p.min_block_size() as f64;
            (l2sq.min(1.0), (d as f64 + 1.0).min((n as f64).sqrt() * l2sq.min(1.0).sqrt()))
        }
        (Shape::Subset(s), _) => structural_lambda_bounds(s.len(), 2f64.sqrt(), n, n),
        _ => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum ShapeKey {
    Ends(Vec<usize>),
    Subset(Vec<usize>),
}

impl From<&Shape> for ShapeKey {
    fn from(s: &Shape) -> Self {
        match s {
            Shape::Partition(p) => ShapeKey::Ends(p.ends.clone()),
            Shape::Subset(v) => ShapeKey::Subset(v.clone()),
        }
    }
}

/// `|y_I − Π y_I|²` on the 1-based block `[lo, hi]` for degree-`d` polynomials.
fn block_residual(y: &[f64], lo: usize, hi: usize, degree: usize) -> f64 {
    let block = &y[lo - 1..hi];
    let size = block.len();
    if degree == 0 {
        let mean = block.iter().sum::<f64>() / size as f64;
        return block.iter().map(|v| (v - mean) * (v - mean)).sum();
    }
    let mut r = block.to_vec();
    for phi in discrete_chebyshev(size, degree) {
        let c = linspace::dot(block, &phi);
        r.iter_mut().zip(&phi).for_each(|(x, p)| *x -= c * p);
    }
    linspace::norm2_sq(&r)
}

/// Residuals of every dyadic model on `[lo, hi]`, in enumeration order:
/// each model's residual is the sum of its block residuals.
fn dyadic_residual_sweep(y: &[f64], lo: usize, hi: usize, min_block: usize, degree: usize) -> Vec<f64> {
    let own = block_residual(y, lo, hi, degree);
    let Some(mid) = dyadic_split(lo, hi, min_block) else {
        return vec![own];
    };
    let left = dyadic_residual_sweep(y, lo, mid, min_block, degree);
    let right = dyadic_residual_sweep(y, mid + 1, hi, min_block, degree);
    let mut out = Vec::with_capacity(1 + left.len() * right.len());
    out.push(own);
    for l in &left {
        out.extend(right.iter().map(|r| l + r));
    }
    out
}

// JSON document: {"n", "family", "d"?, "dbar"?, "models": [{"id", "blocks" | "subset", "delta"}]}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDoc {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub blocks: Option<Vec<[usize; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub subset: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollectionDoc {
    pub n: usize,
    #[serde(flatten)]
    pub family: Family,
    pub models: Vec<ModelDoc>,
}

impl ModelCollection {
    pub fn to_doc(&self) -> CollectionDoc {
        CollectionDoc {
            n: self.n,
            family: self.family,
            models: self
                .models
                .iter()
                .map(|m| match &m.shape {
                    Shape::Partition(p) => ModelDoc {
                        id: m.id.clone(),
                        blocks: Some(p.blocks().map(|(lo, hi)| [lo, hi]).collect()),
                        subset: None,
                        delta: Some(m.delta),
                    },
                    Shape::Subset(s) => ModelDoc {
                        id: m.id.clone(),
                        blocks: None,
                        subset: Some(s.clone()),
                        delta: Some(m.delta),
                    },
                })
                .collect(),
        }
    }

    /// Builds a collection from its JSON document; a missing `delta` takes
    /// the family default.
    pub fn from_doc(doc: &CollectionDoc) -> Result<Self> {
        let models = doc
            .models
            .iter()
            .map(|m| {
                let shape = match (&m.blocks, &m.subset) {
                    (Some(b), None) => {
                        let blocks: Vec<(usize, usize)> = b.iter().map(|[lo, hi]| (*lo, *hi)).collect();
                        Shape::Partition(Partition::new(doc.n, &blocks)?)
                    }
                    (None, Some(s)) => Shape::Subset(s.clone()),
                    _ => {
                        return Err(Error::Config(format!(
                            "model {} needs exactly one of \"blocks\" or \"subset\"",
                            m.id
                        )))
                    }
                };
                let delta = m.delta.unwrap_or_else(|| match (&shape, doc.family) {
                    (Shape::Partition(p), _) => default_partition_delta(p),
                    (Shape::Subset(s), Family::Trig { dbar }) => default_trig_delta(s.len(), dbar),
                    (Shape::Subset(s), _) => s.len() as f64,
                });
                Ok(ModelSpec {
                    id: m.id.clone(),
                    shape,
                    delta,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(doc.n, doc.family, models)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("collection serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: CollectionDoc =
            serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_doc(&doc)
    }
}
