//! Noise-aware debiasing of sample spikes.
//!
//! A supercritical population spike `s` of `Σ + SSᵀ/N` produces a sample
//! outlier near `θ(s) = s + (1/N) Σᵢ s·σᵢ/(s − σᵢ)`. Inverting `θ` on its
//! increasing branch recovers `ξ̂`, and under a Haar prior on the signal
//! subspace the secular equation decouples into `d̂² = −1/ĝ(ξ̂)` with
//! `ĝ(s) = (1/p) Σᵢ 1/(σᵢ − s)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{sample_covariance, sym_eig, DataMatrix, EigenSystem};
use crate::noise::NoiseModel;

const DOMAIN_MARGIN: f64 = 1e-12;
const MAX_BISECTIONS: usize = 200;
const BRACKET_LIMIT: f64 = 1e12;
const SUPERCRITICAL_TOL: f64 = 1e-8;
const SIMPLEX_TOL: f64 = 1e-12;

/// Debiased spikes for one dataset; all vectors have length `rank`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeSet {
    pub rank: usize,
    /// Top sample eigenvalues, non-increasing.
    pub lambda: Vec<f64>,
    pub xi_hat: Vec<f64>,
    pub theta_prime: Vec<f64>,
    pub d2_hat: Vec<f64>,
}

/// A point on the probability simplex `Δ^{r−1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralProfile {
    pub pi: Vec<f64>,
}

impl SpectralProfile {
    /// Validates non-negativity and unit sum (within `1e-12`).
    pub fn new(pi: Vec<f64>) -> Result<Self> {
        if pi.is_empty() {
            return Err(Error::invalid("profile must be non-empty"));
        }
        if pi.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "profile entries must be finite and non-negative",
            ));
        }
        let total: f64 = pi.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("profile sums to {total}, not 1")));
        }
        Ok(Self { pi })
    }

    pub fn r(&self) -> usize {
        self.pi.len()
    }
}

fn max_of(sigma: &[f64]) -> f64 {
    sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn check_domain(sigma: &[f64], s: f64) -> Result<()> {
    if sigma.is_empty() {
        return Err(Error::invalid("noise variance vector is empty"));
    }
    let max_sigma = max_of(sigma);
    if !(s > max_sigma + DOMAIN_MARGIN) {
        return Err(Error::DomainError { s, max_sigma });
    }
    Ok(())
}

/// `(1/p) Σᵢ 1/(σᵢ − s)`, negative for `s` above the noise spectrum.
pub fn g_fn(sigma: &[f64], s: f64) -> Result<f64> {
    check_domain(sigma, s)?;
    Ok(sigma.iter().map(|&v| 1.0 / (v - s)).sum::<f64>() / sigma.len() as f64)
}

/// `Σᵢ 1/(σᵢ − s)²`.
pub fn s2_fn(sigma: &[f64], s: f64) -> Result<f64> {
    check_domain(sigma, s)?;
    Ok(sigma.iter().map(|&v| (v - s).powi(-2)).sum())
}

/// The outlier map `θ(s) = s + (1/N) Σᵢ s·σᵢ/(s − σᵢ)`.
pub fn theta(sigma: &[f64], n: usize, s: f64) -> Result<f64> {
    check_domain(sigma, s)?;
    Ok(theta_unchecked(sigma, n, s))
}

/// `θ′(s) = 1 − (1/N) Σᵢ σᵢ²/(s − σᵢ)²`.
pub fn theta_prime(sigma: &[f64], n: usize, s: f64) -> Result<f64> {
    check_domain(sigma, s)?;
    Ok(theta_prime_unchecked(sigma, n, s))
}

fn theta_unchecked(sigma: &[f64], n: usize, s: f64) -> f64 {
    s + sigma.iter().map(|&v| s * v / (s - v)).sum::<f64>() / n as f64
}

fn theta_prime_unchecked(sigma: &[f64], n: usize, s: f64) -> f64 {
    1.0 - sigma.iter().map(|&v| (v / (s - v)).powi(2)).sum::<f64>() / n as f64
}

/// The unique zero `s*` of `θ′` above `max σ`; `θ` is increasing and convex on `(s*, ∞)`.
pub fn critical_point(sigma: &[f64], n: usize) -> Result<f64> {
    if sigma.is_empty() || n == 0 {
        return Err(Error::invalid("need non-empty sigma and N >= 1"));
    }
    let max_sigma = max_of(sigma);
    let mut width = max_sigma.abs().max(DOMAIN_MARGIN);
    let mut hi = max_sigma + width;
    while theta_prime_unchecked(sigma, n, hi) <= 0.0 {
        width *= 2.0;
        hi = max_sigma + width;
        if hi > BRACKET_LIMIT {
            return Err(Error::NumericalFailure(
                "could not bracket the critical point".into(),
            ));
        }
    }
    let mut lo = max_sigma;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if theta_prime_unchecked(sigma, n, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest sample eigenvalue that still inverts: `θ(s*)`.
pub fn supercritical_threshold(sigma: &[f64], n: usize) -> Result<f64> {
    let s_star = critical_point(sigma, n)?;
    Ok(theta_unchecked(sigma, n, s_star))
}

/// Solves `θ(s) = λ` on the supercritical branch `(s*, ∞)`.
///
/// Eigenvalues within `1e-8·max(1, λ)` of `θ(s*)` are rejected as
/// [`Error::SubcriticalSpike`] (index 0; callers re-index).
pub fn invert_theta(sigma: &[f64], n: usize, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() {
        return Err(Error::invalid("eigenvalue is not finite"));
    }
    let s_star = critical_point(sigma, n)?;
    let threshold = theta_unchecked(sigma, n, s_star);
    if lambda <= threshold + SUPERCRITICAL_TOL * lambda.abs().max(1.0) {
        return Err(Error::SubcriticalSpike {
            index: 0,
            lambda,
            threshold,
        });
    }

    let mut width = s_star.abs().max(1.0);
    let mut hi = s_star + width;
    while theta_unchecked(sigma, n, hi) < lambda {
        width *= 2.0;
        hi = s_star + width;
        if hi > BRACKET_LIMIT {
            return Err(Error::BracketFailure {
                lambda,
                limit: BRACKET_LIMIT,
            });
        }
    }
    let mut lo = s_star;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if theta_unchecked(sigma, n, mid) < lambda {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (f_lo, f_hi) = (
        (theta_unchecked(sigma, n, lo) - lambda).abs(),
        (theta_unchecked(sigma, n, hi) - lambda).abs(),
    );
    Ok(if f_lo < f_hi { lo } else { hi })
}

/// Closed-form secular solution `d̂²_j = −1/ĝ(ξ̂_j)`.
pub fn signal_strengths(xi_hat: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
    xi_hat.iter().map(|&s| Ok(-1.0 / g_fn(sigma, s)?)).collect()
}

/// Normalizes positive signal strengths onto the simplex.
pub fn profile(d2_hat: &[f64]) -> Result<SpectralProfile> {
    if d2_hat.is_empty() {
        return Err(Error::invalid("need at least one signal strength"));
    }
    if d2_hat.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid(
            "signal strengths must be positive and finite",
        ));
    }
    let total: f64 = d2_hat.iter().sum();
    Ok(SpectralProfile {
        pi: d2_hat.iter().map(|v| v / total).collect(),
    })
}

/// Euclidean distance between two profiles of equal rank; lies in `[0, √2]`.
pub fn nmsd(pi1: &SpectralProfile, pi2: &SpectralProfile) -> Result<f64> {
    if pi1.r() != pi2.r() {
        return Err(Error::invalid(format!(
            "rank mismatch: {} vs {}",
            pi1.r(),
            pi2.r()
        )));
    }
    Ok(pi1
        .pi
        .iter()
        .zip(&pi2.pi)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Sample spikes of `YYᵀ/N` (data taken as already centered), inverted and converted to signal strengths.
pub fn estimate_spikes(y: &DataMatrix, noise: &NoiseModel, r: usize) -> Result<SpikeSet> {
    let q = sample_covariance(y, false)?;
    let eig = sym_eig(&q)?;
    estimate_spikes_from(&eig, y.n(), noise, r)
}

pub(crate) fn estimate_spikes_from(
    eig: &EigenSystem,
    n: usize,
    noise: &NoiseModel,
    r: usize,
) -> Result<SpikeSet> {
    if r == 0 || r > eig.dim() {
        return Err(Error::invalid(format!(
            "need 1 <= r <= p, got r = {r}, p = {}",
            eig.dim()
        )));
    }
    if noise.sigma.len() != eig.dim() {
        return Err(Error::invalid("noise model does not match feature count"));
    }
    let sigma = &noise.sigma;
    let lambda = eig.top_values(r);
    let xi_hat = lambda
        .iter()
        .enumerate()
        .map(|(j, &l)| {
            invert_theta(sigma, n, l).map_err(|e| match e {
                Error::SubcriticalSpike {
                    lambda, threshold, ..
                } => Error::SubcriticalSpike {
                    index: j,
                    lambda,
                    threshold,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let theta_prime = xi_hat
        .iter()
        .map(|&s| theta_prime_unchecked(sigma, n, s))
        .collect();
    // −1/ĝ is increasing in ξ̂ and ξ̂ in λ, so d̂² inherits the eigenvalue ordering.
    let d2_hat = signal_strengths(&xi_hat, sigma)?;
    Ok(SpikeSet {
        rank: r,
        lambda,
        xi_hat,
        theta_prime,
        d2_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn g_and_s2_examples() {
        assert_eq!(g_fn(&[1.0; 7], 2.0).unwrap(), -1.0);
        assert!((g_fn(&[1.0, 3.0], 5.0).unwrap() + 0.375).abs() < 1e-15);
        assert!(g_fn(&[1.0, 3.0], 1e12).unwrap() < 0.0);
        assert!(g_fn(&[1.0, 3.0], 1e12).unwrap() > -1e-11);
        assert_eq!(s2_fn(&[1.0; 4], 2.0).unwrap(), 4.0);
        assert!((s2_fn(&[1.0, 3.0], 5.0).unwrap() - 0.3125).abs() < 1e-15);
        assert!(s2_fn(&[1.0], 1e8).unwrap() > 0.0);
        assert!(matches!(
            g_fn(&[1.0, 3.0], 3.0),
            Err(Error::DomainError { .. })
        ));
        assert!(matches!(
            s2_fn(&[1.0, 3.0], 2.0),
            Err(Error::DomainError { .. })
        ));
    }

    #[test]
    fn theta_examples() {
        let sigma = [1.0; 50];
        assert!((theta(&sigma, 50, 2.0).unwrap() - 4.0).abs() < 1e-12);
        assert!((theta(&sigma, 50, 3.0).unwrap() - 4.5).abs() < 1e-12);
        assert!(theta_prime(&sigma, 50, 2.0).unwrap().abs() < 1e-12);
        assert!((theta_prime(&sigma, 50, 3.0).unwrap() - 0.75).abs() < 1e-12);
        let far = theta(&sigma, 10_000_000, 3.0).unwrap();
        assert!((far - 3.0).abs() < 1e-4);
        assert!((theta_prime(&sigma, 10_000_000, 3.0).unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn classical_spiked_map() {
        // θ(ℓ) = ℓ + φℓ/(ℓ − 1) for unit noise
        let sigma = vec![1.0; 30];
        let n = 120;
        let phi = 30.0 / 120.0;
        for l in [2.0, 3.5, 10.0] {
            let want = l + phi * l / (l - 1.0);
            assert!((theta(&sigma, n, l).unwrap() - want).abs() < 1e-12);
        }
        let s_star = critical_point(&sigma, n).unwrap();
        assert!((s_star - (1.0 + phi.sqrt())).abs() < 1e-10);
    }

    #[test]
    fn inversion_examples() {
        let sigma = [1.0; 40];
        let xi = invert_theta(&sigma, 40, 4.5).unwrap();
        assert!((xi - 3.0).abs() < 1e-9);
        match invert_theta(&sigma, 40, 3.9) {
            Err(Error::SubcriticalSpike { threshold, .. }) => {
                assert!((threshold - 4.0).abs() < 1e-9)
            }
            other => panic!("expected subcritical, got {other:?}"),
        }
        // λ = 4 sits exactly at θ(s*) and is rejected by the tolerance.
        assert!(matches!(
            invert_theta(&sigma, 40, 4.0),
            Err(Error::SubcriticalSpike { .. })
        ));
        assert!(matches!(
            invert_theta(&sigma, 40, 1e13),
            Err(Error::BracketFailure { .. })
        ));
    }

    #[test]
    fn homoskedastic_strength_identity() {
        let sigma = [2.5; 25];
        for xi in [3.0, 7.0, 100.0] {
            let d2 = signal_strengths(&[xi], &sigma).unwrap()[0];
            assert!((d2 - (xi - 2.5)).abs() < 1e-12 * xi);
        }
        let d = signal_strengths(&[2.0], &[1.0; 3]).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn strengths_grow_with_xi() {
        let sigma = [1.0, 2.0, 4.0, 4.0];
        let xs = [5.0, 8.0, 20.0, 1e3, 1e6];
        let d = signal_strengths(&xs, &sigma).unwrap();
        assert!(d.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn profile_examples() {
        let p = profile(&[1.0, 1.0, 1.0]).unwrap();
        assert!(p.pi.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(profile(&[2.0, 1.0, 1.0]).unwrap().pi, vec![0.5, 0.25, 0.25]);
        let pop = profile(&[49.0, 36.0, 25.0]).unwrap();
        for (a, b) in pop.pi.iter().zip([0.44545, 0.32727, 0.22727]) {
            assert!((a - b).abs() < 5e-6);
        }
        assert!(profile(&[1.0, 0.0]).is_err());
        assert!(profile(&[]).is_err());
    }

    #[test]
    fn nmsd_examples() {
        let a = SpectralProfile::new(vec![0.2, 0.8]).unwrap();
        assert_eq!(nmsd(&a, &a).unwrap(), 0.0);
        let e1 = SpectralProfile::new(vec![1.0, 0.0]).unwrap();
        let e2 = SpectralProfile::new(vec![0.0, 1.0]).unwrap();
        assert!((nmsd(&e1, &e2).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let b = SpectralProfile::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(nmsd(&a, &b).is_err());

        let d1 = [49.0, 36.0, 25.0];
        let d2 = [1.10 * 49.0, 36.0, 25.0];
        let dist = nmsd(&profile(&d1).unwrap(), &profile(&d2).unwrap()).unwrap();
        assert!((dist - 0.02912).abs() < 5e-6, "{dist}");
    }

    #[test]
    fn simplex_validation() {
        assert!(SpectralProfile::new(vec![0.5, 0.6]).is_err());
        assert!(SpectralProfile::new(vec![-0.1, 1.1]).is_err());
        assert!(SpectralProfile::new(vec![]).is_err());
    }

    #[test]
    fn theta_increasing_and_convex_on_branch() {
        let mut rng = rng_from_seed(3);
        let sigma: Vec<f64> = (0..60).map(|_| rng.random_range(0.5..4.0)).collect();
        let n = 80;
        let s_star = critical_point(&sigma, n).unwrap();
        let pts: Vec<f64> = (1..400).map(|k| s_star + 0.05 * k as f64).collect();
        let vals: Vec<f64> = pts.iter().map(|&s| theta(&sigma, n, s).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        assert!(vals.windows(3).all(|w| w[2] - 2.0 * w[1] + w[0] >= -1e-9));
    }

    proptest! {
        #[test]
        fn inversion_round_trip(seed in 0u64..10_000, excess in 1e-3f64..1e3) {
            let mut rng = rng_from_seed(seed);
            let p = rng.random_range(2..80);
            let n = rng.random_range(5..400);
            let sigma: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..6.0)).collect();
            let lambda = supercritical_threshold(&sigma, n).unwrap() + excess;
            let xi = invert_theta(&sigma, n, lambda).unwrap();
            let back = theta(&sigma, n, xi).unwrap();
            prop_assert!((back - lambda).abs() <= 1e-10 * lambda.max(1.0));
        }

        #[test]
        fn strengths_homoskedastic_closed_form(s2 in 0.01f64..50.0, gap in 1e-3f64..1e4) {
            let sigma = vec![s2; 13];
            let d2 = signal_strengths(&[s2 + gap], &sigma).unwrap()[0];
            prop_assert!((d2 - gap).abs() <= 1e-9 * (s2 + gap));
        }
    }
}
