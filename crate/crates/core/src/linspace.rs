//! Linear subspaces of ℝⁿ held as orthonormal bases.
//!
//! Each basis column is stored densely together with the half-open index
//! range outside of which it vanishes. Block-structured bases (histograms,
//! piecewise polynomials) then cost O(Σ|I|) instead of O(nD) for projection
//! and for the projector columns used by [`Subspace::lambda_inf`]. Skipping
//! disjoint supports is exact: the skipped inner products are exactly zero.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Maximum tolerated deviation of `BᵀB` from the identity.
pub const ORTHO_TOL: f64 = 1e-10;

/// Relative tolerance below which a Gram-Schmidt residual counts as dependent.
pub const RANK_TOL: f64 = 1e-9;

const ZERO_NORM: f64 = 1e-300;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Half-open range `[lo, hi)` of the nonzero entries of `v`; `(0, 0)` for the zero vector.
fn support(v: &[f64]) -> (usize, usize) {
    match v.iter().position(|x| *x != 0.0) {
        None => (0, 0),
        Some(lo) => {
            let hi = v.iter().rposition(|x| *x != 0.0).unwrap() + 1;
            (lo, hi)
        }
    }
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (lo < hi).then_some((lo, hi))
}

/// An orthonormal family of `D ≥ 1` vectors of ℝⁿ.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    n: usize,
    columns: Vec<Vec<f64>>,
    supports: Vec<(usize, usize)>,
}

impl OrthonormalBasis {
    /// Wraps columns that are claimed to be orthonormal, checking the claim
    /// against [`ORTHO_TOL`].
    pub fn from_columns(n: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        let basis = Self::from_columns_unchecked(n, columns)?;
        let dev = basis.gram_deviation();
        if dev > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "columns are not orthonormal (Gram deviation {dev:e})"
            )));
        }
        Ok(basis)
    }

    pub(crate) fn from_columns_unchecked(n: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        if n < 2 {
            return Err(Error::AmbientTooSmall(n));
        }
        if columns.is_empty() || columns.len() > n {
            return Err(Error::InvalidArgument(format!(
                "basis must have between 1 and {n} columns, got {}",
                columns.len()
            )));
        }
        for c in &columns {
            if c.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: c.len(),
                });
            }
        }
        let supports = columns.iter().map(|c| support(c)).collect();
        Ok(Self {
            n,
            columns,
            supports,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    /// `max |BᵀB − I|` over all entries.
    pub fn gram_deviation(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0_f64;
        for a in 0..d {
            for b in a..d {
                let g = match overlap(self.supports[a], self.supports[b]) {
                    Some((lo, hi)) => dot(&self.columns[a][lo..hi], &self.columns[b][lo..hi]),
                    None => 0.0,
                };
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((g - target).abs());
            }
        }
        worst
    }

    /// Row `i` of the basis matrix, i.e. the coordinates `⟨e_i, b_j⟩`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

/// Orthonormalizes `vectors` by modified Gram-Schmidt with one
/// reorthogonalization pass. Dependent vectors are dropped, so the result has
/// the numerical rank of the input at relative tolerance [`RANK_TOL`].
pub fn orthonormalize(vectors: &[Vec<f64>]) -> Result<OrthonormalBasis> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("no vectors to orthonormalize".into()))?;
    let n = first.len();
    for v in vectors {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    let max_norm = vectors
        .iter()
        .map(|v| norm2_sq(v).sqrt())
        .fold(0.0_f64, f64::max);
    if max_norm < ZERO_NORM {
        return Err(Error::AllZeroInput);
    }
    let threshold = RANK_TOL * max_norm;

    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut supports: Vec<(usize, usize)> = Vec::new();
    for v in vectors {
        if columns.len() == n {
            break;
        }
        let mut w = v.clone();
        let mut w_supp = support(&w);
        if w_supp.0 == w_supp.1 {
            continue;
        }
        for _pass in 0..2 {
            for (q, &q_supp) in columns.iter().zip(&supports) {
                let Some((lo, hi)) = overlap(w_supp, q_supp) else {
                    continue;
                };
                let coef = dot(&w[lo..hi], &q[lo..hi]);
                if coef == 0.0 {
                    continue;
                }
                for i in q_supp.0..q_supp.1 {
                    w[i] -= coef * q[i];
                }
                w_supp = (w_supp.0.min(q_supp.0), w_supp.1.max(q_supp.1));
            }
        }
        let norm = norm2_sq(&w).sqrt();
        if norm <= threshold {
            continue;
        }
        for x in &mut w {
            *x /= norm;
        }
        supports.push(support(&w));
        columns.push(w);
    }
    debug_assert!(!columns.is_empty());
    OrthonormalBasis::from_columns_unchecked(n, columns)
}

/// A linear subspace with its geometric constants
/// `Λ₂(S) = maxᵢ |Π_S eᵢ|₂` and `Λ∞(S) = maxᵢ |Π_S eᵢ|₁`.
///
/// `Λ₂` is computed eagerly from the row norms of the basis matrix; `Λ∞` needs
/// every projector column and is computed on first use.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: OrthonormalBasis,
    lambda2: f64,
    lambda_inf: OnceLock<f64>,
}

impl Subspace {
    pub fn new(basis: OrthonormalBasis) -> Self {
        let lambda2 = compute_lambda2(&basis);
        Self {
            basis,
            lambda2,
            lambda_inf: OnceLock::new(),
        }
    }

    /// Span of arbitrary generating vectors.
    pub fn span(vectors: &[Vec<f64>]) -> Result<Self> {
        Ok(Self::new(orthonormalize(vectors)?))
    }

    /// The whole of ℝⁿ.
    pub fn full(n: usize) -> Result<Self> {
        let cols = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                e
            })
            .collect();
        Ok(Self::new(OrthonormalBasis::from_columns_unchecked(n, cols)?))
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    pub fn n(&self) -> usize {
        self.basis.n
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn lambda_inf(&self) -> f64 {
        *self
            .lambda_inf
            .get_or_init(|| compute_lambda_inf(&self.basis))
    }

    /// Orthogonal projection `Π_S y = Σⱼ ⟨y, bⱼ⟩ bⱼ`.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        let mut out = vec![0.0; self.n()];
        for (c, &(lo, hi)) in self.basis.columns.iter().zip(&self.basis.supports) {
            let coef = dot(&y[lo..hi], &c[lo..hi]);
            for i in lo..hi {
                out[i] += coef * c[i];
            }
        }
        Ok(out)
    }

    /// Coordinates `⟨y, bⱼ⟩` of `y` in the basis.
    pub fn coefficients(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y)?;
        Ok(self
            .basis
            .columns
            .iter()
            .zip(&self.basis.supports)
            .map(|(c, &(lo, hi))| dot(&y[lo..hi], &c[lo..hi]))
            .collect())
    }

    /// `|y − Π_S y|₂²`, computed as `|y|² − Σⱼ⟨y,bⱼ⟩²` clamped at zero.
    pub fn residual_sq(&self, y: &[f64]) -> Result<f64> {
        let coefs = self.coefficients(y)?;
        Ok((norm2_sq(y) - norm2_sq(&coefs)).max(0.0))
    }

    /// Column `Π_S eᵢ` of the projector.
    pub fn projector_column(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        accumulate_projector_column(&self.basis, i, &mut out);
        out
    }

    /// Dense `n × n` projector, row-major. Intended for tests and small `n`.
    pub fn projector_matrix(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.projector_column(i)).collect()
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: y.len(),
            });
        }
        Ok(())
    }
}

fn compute_lambda2(basis: &OrthonormalBasis) -> f64 {
    let mut row_sq = vec![0.0; basis.n];
    for (c, &(lo, hi)) in basis.columns.iter().zip(&basis.supports) {
        for i in lo..hi {
            row_sq[i] += c[i] * c[i];
        }
    }
    row_sq.into_iter().fold(0.0_f64, f64::max).sqrt()
}

fn accumulate_projector_column(basis: &OrthonormalBasis, i: usize, out: &mut [f64]) {
    for (c, &(lo, hi)) in basis.columns.iter().zip(&basis.supports) {
        if i < lo || i >= hi || c[i] == 0.0 {
            continue;
        }
        let w = c[i];
        for k in lo..hi {
            out[k] += w * c[k];
        }
    }
}

fn compute_lambda_inf(basis: &OrthonormalBasis) -> f64 {
    let mut col = vec![0.0; basis.n];
    let mut worst = 0.0_f64;
    for i in 0..basis.n {
        col.iter_mut().for_each(|x| *x = 0.0);
        accumulate_projector_column(basis, i, &mut col);
        let l1: f64 = col.iter().map(|x| x.abs()).sum();
        worst = worst.max(l1);
    }
    worst
}

/// Orthonormalized span of the union of both bases.
pub fn sum_spaces(a: &Subspace, b: &Subspace) -> Result<Subspace> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            got: b.n(),
        });
    }
    let vectors: Vec<Vec<f64>> = a
        .basis
        .columns
        .iter()
        .chain(b.basis.columns.iter())
        .cloned()
        .collect();
    Subspace::span(&vectors)
}

/// `max |Π_A − Π_B|` over all projector entries; zero iff the spans agree.
pub fn projector_distance(a: &Subspace, b: &Subspace) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            got: b.n(),
        });
    }
    let mut worst = 0.0_f64;
    for i in 0..a.n() {
        let pa = a.projector_column(i);
        let pb = b.projector_column(i);
        for (x, y) in pa.iter().zip(&pb) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn e(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn canonical_vectors_are_kept() {
        let b = orthonormalize(&[e(3, 0), e(3, 1)]).unwrap();
        assert_eq!(b.dim(), 2);
        assert_eq!(b.column(0), &[1.0, 0.0, 0.0]);
        assert_eq!(b.column(1), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn skewed_pair_is_orthonormalized_and_spans_inputs() {
        let inputs = vec![vec![1.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]];
        let s = Subspace::span(&inputs).unwrap();
        assert_eq!(s.dim(), 2);
        assert!(s.basis().gram_deviation() <= 1e-12);
        for v in &inputs {
            let p = s.project(v).unwrap();
            for (a, b) in p.iter().zip(v) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dependent_vectors_collapse() {
        let b = orthonormalize(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(b.dim(), 1);
    }

    #[test]
    fn all_zero_input_is_rejected() {
        assert_eq!(
            orthonormalize(&[vec![0.0; 3], vec![0.0; 3]]).unwrap_err(),
            Error::AllZeroInput
        );
    }

    #[test]
    fn projection_fixed_points_and_orthogonal_complement() {
        let s = Subspace::span(&[vec![1.0, 1.0, 0.0]]).unwrap();
        let inside = vec![2.0, 2.0, 0.0];
        let p = s.project(&inside).unwrap();
        for (a, b) in p.iter().zip(&inside) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        let outside = vec![1.0, -1.0, 0.0];
        assert!(norm_inf(&s.project(&outside).unwrap()) < 1e-15);
        assert!(s.project(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn block_means_by_projection() {
        let s = Subspace::span(&[vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let p = s.project(&[1.0, 3.0, 5.0]).unwrap();
        for (a, b) in p.iter().zip(&[2.0, 2.0, 5.0]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn lambdas_of_full_space_and_constant_line() {
        let full = Subspace::full(5).unwrap();
        assert_abs_diff_eq!(full.lambda2(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(full.lambda_inf(), 1.0, epsilon = 1e-15);

        // Π e_i = 1/4 for every entry: |.|₂ = 1/2, |.|₁ = 1
        let ones = Subspace::span(&[vec![1.0; 4]]).unwrap();
        assert_abs_diff_eq!(ones.lambda2(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(ones.lambda_inf(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn lambda2_of_two_blocks_of_three() {
        let s = Subspace::span(&[
            vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
        ])
        .unwrap();
        assert_abs_diff_eq!(s.lambda2(), 1.0 / 3f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn sums_of_spaces() {
        let s = Subspace::span(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]]).unwrap();
        let ss = sum_spaces(&s, &s).unwrap();
        assert_eq!(ss.dim(), 2);
        assert!(projector_distance(&s, &ss).unwrap() < 1e-12);

        let a = Subspace::span(&[e(3, 0)]).unwrap();
        let b = Subspace::span(&[e(3, 1)]).unwrap();
        let ab = sum_spaces(&a, &b).unwrap();
        assert_eq!(ab.dim(), 2);
        let plane = Subspace::span(&[e(3, 0), e(3, 1)]).unwrap();
        assert!(projector_distance(&ab, &plane).unwrap() < 1e-15);
    }

    #[test]
    fn non_orthonormal_columns_are_rejected() {
        let err = OrthonormalBasis::from_columns(2, vec![vec![1.0, 1.0]]);
        assert!(err.is_err());
    }
}
