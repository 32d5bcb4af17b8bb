//! Closed-form thresholds, constants and series.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::KAPPA;

/// Diameter bounds of the index set of a chaining argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainingParams {
    pub v: f64,
    pub b: f64,
    pub dim: usize,
    pub kappa: f64,
}

impl ChainingParams {
    pub fn new(v: f64, b: f64, dim: usize) -> Self {
        Self { v, b, dim, kappa: KAPPA }
    }
}

/// `√(2·v2·u) + c·u`.
pub fn bernstein_threshold(v2: f64, c: f64, u: f64) -> f64 {
    (2.0 * v2 * u).sqrt() + c * u
}

/// `exp(−x²/(2(v2 + c·x)))`.
pub fn bernstein_tail_prob(x: f64, v2: f64, c: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    (-x * x / (2.0 * (v2 + c * x))).exp()
}

/// `κ(√(v²(D+x)) + b(D+x))`.
pub fn sup_threshold(p: &ChainingParams, x: f64) -> f64 {
    let dx = p.dim as f64 + x;
    p.kappa * ((p.v * p.v * dx).sqrt() + p.b * dx)
}

/// `z` solving `z = κ(σ√(D+x) + (cu/z)(D+x))`: the threshold on `|Π_S ξ|₂`
/// obtained by applying [`sup_threshold`] with `v = σ`, `b = cu/z`.
pub fn projected_sup_threshold(sigma: f64, c: f64, u: f64, dim: f64, x: f64) -> f64 {
    let dx = dim + x;
    let s = KAPPA * sigma * dx.sqrt();
    (s + (s * s + 4.0 * KAPPA * c * u * dx).sqrt()) / 2.0
}

fn chaining_log_term(dim: f64, k: f64) -> f64 {
    2.0 * dim * 9f64.ln() + 2.0 * k * dim * 5f64.ln() + (k + 1.0) * std::f64::consts::LN_2
}

/// `Σ_k 2^{−k}(v√(2L_k) + b·L_k)` with `L_k = log(2^{k+1}·9^{2D}·5^{2kD})`,
/// summed until the current term drops below `1e-13` of the partial sum.
pub fn chaining_h(p: &ChainingParams) -> f64 {
    let d = p.dim.max(1) as f64;
    let mut sum = 0.0;
    for k in 0..400 {
        let l = chaining_log_term(d, k as f64);
        let term = 0.5f64.powi(k) * (p.v * (2.0 * l).sqrt() + p.b * l);
        sum += term;
        // terms decay like k·2^{−k}, so the tail is at most a few times the last term
        if term <= 1e-13 * sum || term == 0.0 {
            break;
        }
    }
    sum
}

/// Finite chaining sum for nested partitions with `sizes[k] = |𝒜_k|`.
pub fn generic_h(v: f64, b: f64, sizes: &[u64]) -> Result<f64> {
    if sizes.first() != Some(&1) {
        return Err(Error::InvalidPartitionSizes(format!(
            "sizes must start with 1, got {sizes:?}"
        )));
    }
    if sizes.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidPartitionSizes(format!(
            "sizes must be nondecreasing, got {sizes:?}"
        )));
    }
    let mut sum = 0.0;
    for (k, w) in sizes.windows(2).enumerate() {
        let l = (k as f64 + 1.0) * std::f64::consts::LN_2 + (w[1] as f64).ln() + (w[0] as f64).ln();
        sum += 0.5f64.powi(k as i32) * (v * (2.0 * l).sqrt() + b * l);
    }
    Ok(sum)
}

/// `C(K) = K(K² + K − 1)/(K − 1)³`.
pub fn oracle_constant(k: f64) -> Result<f64> {
    if !(k > 1.0) || !k.is_finite() {
        return Err(Error::KNotGreaterThanOne(k));
    }
    Ok(k * (k * k + k - 1.0) / (k - 1.0).powi(3))
}

/// `u = (c + σ)Λ̄∞Λ₂(𝒮_n)(2 log n + z)`.
pub fn u_factor(sigma: f64, c: f64, lambda_bar_inf: f64, lambda2_sn: f64, n: usize, z: f64) -> f64 {
    (c + sigma) * lambda_bar_inf * lambda2_sn * (2.0 * (n as f64).ln() + z)
}

/// `R = κ²(σ² + 2cu/κ)Σ + 2(u/Λ̄∞)²e^{−z}`.
///
/// `z = ∞` gives the limit `κ²(σ² + 2cu/κ)Σ`.
pub fn remainder_r(sigma: f64, c: f64, u: f64, lambda_bar_inf: f64, z: f64, sigma_sum: f64) -> f64 {
    let drift = if c == 0.0 { 0.0 } else { 2.0 * c * u / KAPPA };
    let first = KAPPA * KAPPA * (sigma * sigma + drift) * sigma_sum;
    let second = if z == f64::INFINITY {
        0.0
    } else {
        let r = u / lambda_bar_inf;
        2.0 * r * r * (-z).exp()
    };
    first + second
}

/// `κ²(σ² + 2cu/κ)(D + x)`.
pub fn chi2_threshold(sigma: f64, c: f64, u: f64, dim: f64, x: f64) -> f64 {
    KAPPA * KAPPA * (sigma * sigma + 2.0 * c * u / KAPPA) * (dim + x)
}

/// `min(1, 2n·exp(−x²/(2Λ₂²(σ² + cx))))`.
pub fn chi_inf_tail(sigma: f64, c: f64, lambda2: f64, x: f64, n: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let expo = -x * x / (2.0 * lambda2 * lambda2 * (sigma * sigma + c * x));
    (2.0 * n as f64 * expo.exp()).min(1.0)
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::DeltaOutOfRange(delta))
    }
}

/// `(1 + 2/δ)^D`.
pub fn covering_bound(dim: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if dim == 0 {
        return Err(Error::InvalidArgument("dimension must be at least 1".into()));
    }
    Ok((1.0 + 2.0 / delta).powi(dim as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PackingReport {
    pub found_size: usize,
    pub bound: f64,
    pub ok: bool,
}

fn unit_ball_point<R: Rng>(rng: &mut R, dim: usize, out: &mut [f64]) {
    loop {
        let mut r2 = 0.0;
        for x in out.iter_mut().take(dim) {
            *x = rng.random_range(-1.0..=1.0);
            r2 += *x * *x;
        }
        if r2 <= 1.0 {
            return;
        }
    }
}

/// Greedy δ-separated subset of the Euclidean unit ball of `ℝ^D` built from
/// `trials` uniform candidates; separation is strict (`> δ`).
pub fn packing_check(dim: usize, delta: f64, trials: usize, seed: u64) -> Result<PackingReport> {
    let bound = covering_bound(dim, delta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept: Vec<f64> = Vec::new();
    let mut cand = vec![0.0; dim];
    let d2 = delta * delta;
    for _ in 0..trials {
        unit_ball_point(&mut rng, dim, &mut cand);
        let separated = kept.chunks_exact(dim).all(|p| {
            p.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() > d2
        });
        if separated {
            kept.extend_from_slice(&cand);
        }
    }
    let found_size = kept.len() / dim;
    Ok(PackingReport {
        found_size,
        bound,
        ok: found_size as f64 <= bound,
    })
}

/// `φ(x) = x²/(2(α + βx))`.
pub fn phi(alpha: f64, beta: f64, x: f64) -> f64 {
    x * x / (2.0 * (alpha + beta * x))
}

fn factorial(p: u32) -> f64 {
    (1..=p).map(f64::from).product()
}

/// `a·x0^p·e^{−φ(x0)}(1 + e·p!/φ(x0))`, a bound on `E[X^p 1{X ≥ x0}]` when
/// `P(X ≥ x) ≤ a e^{−φ(x)}`.
pub fn truncated_moment_bound(a: f64, alpha: f64, beta: f64, x0: f64, p: u32) -> Result<f64> {
    if !(a > 0.0 && alpha > 0.0 && beta >= 0.0 && x0 > 0.0 && p >= 1) {
        return Err(Error::InvalidArgument(format!(
            "need a, α, x0 > 0, β ≥ 0, p ≥ 1; got a={a}, α={alpha}, β={beta}, x0={x0}, p={p}"
        )));
    }
    let f = phi(alpha, beta, x0);
    if f < 1.0 {
        return Err(Error::PhiTooSmall(f));
    }
    Ok(a * x0.powi(p as i32) * (-f).exp() * (1.0 + std::f64::consts::E * factorial(p) / f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bernstein() {
        assert_eq!(bernstein_threshold(1.0, 3.0, 0.0), 0.0);
        assert_eq!(bernstein_threshold(1.0, 0.0, 2.0), 2.0);
        assert_abs_diff_eq!(bernstein_threshold(4.0, 1.0, 1.0), 8f64.sqrt() + 1.0, epsilon = 1e-15);
        assert_eq!(bernstein_tail_prob(0.0, 1.0, 1.0), 1.0);
        assert_abs_diff_eq!(bernstein_tail_prob(2.0, 1.0, 0.0), (-2.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn sup_thresholds() {
        assert_eq!(sup_threshold(&ChainingParams::new(1.0, 0.0, 1), 0.0), 18.0);
        assert_eq!(sup_threshold(&ChainingParams::new(0.0, 1.0, 2), 3.0), 90.0);
        // fixed point of z = κ(σ√(D+x) + (cu/z)(D+x))
        let z = projected_sup_threshold(1.3, 0.4, 7.0, 4.0, 2.0);
        let rhs = KAPPA * (1.3 * 6f64.sqrt() + 0.4 * 7.0 / z * 6.0);
        assert_abs_diff_eq!(z, rhs, epsilon = 1e-10);
        // and it never exceeds the square root of the χ² threshold
        assert!(z * z <= chi2_threshold(1.3, 0.4, 7.0, 4.0, 2.0) * (1.0 + 1e-14));
    }

    #[test]
    fn chaining_series() {
        for d in 1..=50 {
            let hv = chaining_h(&ChainingParams::new(1.0, 0.0, d));
            let hb = chaining_h(&ChainingParams::new(0.0, 1.0, d));
            assert!(hv < 14.0 * (d as f64).sqrt(), "D={d}: {hv}");
            assert!(hb < 18.0 * d as f64, "D={d}: {hb}");
        }
        // b-part in closed form: Σ 2^{−k}(A + kB) = 2A + 2B
        let d = 3.0;
        let a = 2.0 * d * 9f64.ln() + std::f64::consts::LN_2;
        let b = 2.0 * d * 5f64.ln() + std::f64::consts::LN_2;
        let hb = chaining_h(&ChainingParams::new(0.0, 1.0, 3));
        assert_abs_diff_eq!(hb, 2.0 * a + 2.0 * b, epsilon = 1e-10);
        let h1 = chaining_h(&ChainingParams::new(0.7, 0.2, 5));
        let h2 = chaining_h(&ChainingParams::new(2.1, 0.6, 5));
        assert_abs_diff_eq!(h2, 3.0 * h1, epsilon = 1e-10);
        assert_eq!(chaining_h(&ChainingParams::new(0.0, 0.0, 5)), 0.0);
    }

    #[test]
    fn generic_series() {
        let ln2 = std::f64::consts::LN_2;
        assert_abs_diff_eq!(
            generic_h(1.0, 1.0, &[1, 1]).unwrap(),
            (2.0 * ln2).sqrt() + ln2,
            epsilon = 1e-15
        );
        let l0 = ln2 + 4f64.ln();
        let l1 = 2.0 * ln2 + 16f64.ln();
        let want = (2.0 * l0).sqrt() + 0.5 * (2.0 * l1).sqrt();
        assert_abs_diff_eq!(generic_h(1.0, 0.0, &[1, 4, 4]).unwrap(), want, epsilon = 1e-14);
        assert!(matches!(generic_h(1.0, 0.0, &[2, 4]), Err(Error::InvalidPartitionSizes(_))));
        assert!(generic_h(1.0, 0.0, &[1, 4, 3]).is_err());
    }

    #[test]
    fn oracle_constants() {
        assert_eq!(oracle_constant(2.0).unwrap(), 10.0);
        assert_eq!(oracle_constant(1.5).unwrap(), 33.0);
        let big = oracle_constant(1e6).unwrap();
        assert!(big > 1.0 && big < 1.0 + 1e-5);
        assert!(matches!(oracle_constant(1.0), Err(Error::KNotGreaterThanOne(_))));
    }

    #[test]
    fn u_and_remainder() {
        assert_abs_diff_eq!(u_factor(1.0, 0.0, 1.0, 1.0, 2, 0.0), 2.0 * 2f64.ln(), epsilon = 1e-15);
        let n = 100;
        let ratio = u_factor(1.0, 0.5, 2.0, 0.3, n, (n as f64).ln()) / u_factor(1.0, 0.5, 2.0, 0.3, n, 0.0);
        assert_abs_diff_eq!(ratio, 1.5, epsilon = 1e-14);
        assert_abs_diff_eq!(remainder_r(1.0, 1.0, 1.0, 1.0, 0.0, 1.0), 362.0, epsilon = 1e-12);
        assert_eq!(remainder_r(2.0, 0.0, 5.0, 1.0, f64::INFINITY, 1.0), 324.0 * 4.0);
        assert_abs_diff_eq!(remainder_r(1.0, 0.0, 3.0, 1.5, 1.0, 0.0), 8.0 * (-1.0f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn chi_thresholds() {
        assert_eq!(chi2_threshold(1.0, 0.0, 5.0, 1.0, 0.0), 324.0);
        assert_abs_diff_eq!(chi2_threshold(1.0, 1.0, 9.0, 2.0, 2.0), 2592.0, epsilon = 1e-10);
        assert_abs_diff_eq!(chi_inf_tail(1.0, 0.0, 1.0, 2.0, 2), 4.0 * (-2.0f64).exp(), epsilon = 1e-15);
        assert_eq!(chi_inf_tail(1.0, 0.0, 1.0, 1e-6, 2), 1.0);
        assert!(chi_inf_tail(1.0, 0.2, 0.5, 8.0, 10) < chi_inf_tail(1.0, 0.2, 0.5, 6.0, 10));
        assert!(chi_inf_tail(1.0, 0.2, 0.4, 8.0, 10) < chi_inf_tail(1.0, 0.2, 0.5, 8.0, 10));
    }

    #[test]
    fn covering_and_packing() {
        assert_eq!(covering_bound(1, 1.0).unwrap(), 3.0);
        assert_eq!(covering_bound(2, 0.5).unwrap(), 25.0);
        assert!(matches!(covering_bound(1, 2.0), Err(Error::DeltaOutOfRange(_))));
        assert!(matches!(packing_check(1, 2.0, 10, 0), Err(Error::DeltaOutOfRange(_))));
        let r = packing_check(1, 0.5, 20_000, 3).unwrap();
        assert!(r.ok && r.found_size >= 4 && r.found_size <= 5, "{r:?}");
    }

    #[test]
    fn truncated_moment() {
        let x0 = 2f64.sqrt();
        let want = x0 * (-2.0f64).exp() * (1.0 + std::f64::consts::E / 2.0);
        assert_abs_diff_eq!(truncated_moment_bound(1.0, 0.5, 0.0, x0, 1).unwrap(), want, epsilon = 1e-15);
        assert_abs_diff_eq!(want, 0.4516, epsilon = 1e-4);
        assert!(matches!(truncated_moment_bound(1.0, 1.0, 0.0, 1.0, 2), Err(Error::PhiTooSmall(_))));
    }
}
