//! Block-heteroskedastic noise estimation.
//!
//! The raw per-feature variances are the diagonal of `Q` after removing its
//! best rank-`r` approximation. They are then smoothed along the feature
//! order by an exact one-dimensional Potts segmentation with penalty
//! `β = c·ln(p)/N`.
//!
//! Removing the top-r fit also removes the noise lying in the fitted
//! directions, `[Σ − (I−P̂)Σ(I−P̂)]ᵢᵢ = 2σᵢΣₖψ̂ₖᵢ² − Σₖₗψ̂ₖᵢψ̂ₗᵢ(ψ̂ₖᵀΣψ̂ₗ)`.
//! At fixed `p` this is an `O(rσ/p)` bias that does not shrink with `N`.
//! [`ResidualCorrection::ProjectionLoss`] adds it back, using the current
//! fit for `Σ` and re-segmenting until the fit is stable.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{sample_covariance, sym_eig, DataMatrix, EigenSystem};

/// Floor applied to raw and fitted variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Default multiplier `c` in the segmentation penalty.
pub const DEFAULT_PENALTY_C: f64 = 10.0;

const DEGENERATE_M2: f64 = 1e-12;
const MAX_CORRECTION_ROUNDS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualCorrection {
    /// Segment the raw residual diagonal as is.
    None,
    /// Add back the noise removed with the rank-r fit (fixed point in `σ̂`).
    #[default]
    ProjectionLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseModel {
    /// Per-feature noise variances, piecewise constant.
    pub sigma: Vec<f64>,
    /// Segment start indices; the first is always 0.
    pub boundaries: Vec<usize>,
    pub kappa3: f64,
    pub kappa4: f64,
    pub penalty_beta: f64,
}

impl NoiseModel {
    pub fn max_sigma(&self) -> f64 {
        self.sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(start, end, level)` for every segment, `end` exclusive.
    pub fn segments(&self) -> Vec<(usize, usize, f64)> {
        let p = self.sigma.len();
        self.boundaries
            .iter()
            .enumerate()
            .map(|(k, &start)| {
                let end = self.boundaries.get(k + 1).copied().unwrap_or(p);
                (start, end, self.sigma[start])
            })
            .collect()
    }
}

/// Result of [`potts_segment`].
#[derive(Debug, Clone, PartialEq)]
pub struct PottsFit {
    pub fit: Vec<f64>,
    pub boundaries: Vec<usize>,
    pub objective: f64,
}

impl PottsFit {
    pub fn jumps(&self) -> usize {
        self.boundaries.len().saturating_sub(1)
    }
}

/// `diag(Q − Û_r D̂_r Û_rᵀ)`, floored at [`VARIANCE_FLOOR`].
pub fn residual_diagonal(q: &DMatrix<f64>, r: usize) -> Result<Vec<f64>> {
    if r >= q.nrows() {
        return Err(Error::invalid(format!(
            "rank r = {r} must be below p = {}",
            q.nrows()
        )));
    }
    if r == 0 {
        return Ok(q.diagonal().iter().map(|v| v.max(VARIANCE_FLOOR)).collect());
    }
    let eig = sym_eig(q)?;
    Ok(residual_diagonal_from(q, &eig, r))
}

pub(crate) fn residual_diagonal_from(q: &DMatrix<f64>, eig: &EigenSystem, r: usize) -> Vec<f64> {
    (0..q.nrows())
        .map(|a| {
            let fitted: f64 = (0..r)
                .map(|k| eig.eigenvalues[k] * eig.eigenvectors[(a, k)].powi(2))
                .sum();
            (q[(a, a)] - fitted).max(VARIANCE_FLOOR)
        })
        .collect()
}

/// Exact minimizer of `Σᵢ(xᵢ − fᵢ)² + β·#{i : fᵢ₊₁ ≠ fᵢ}` over piecewise-constant `f`.
///
/// O(p²) dynamic program over the last segment start with O(1) interval
/// costs from prefix sums. Equal-cost candidates resolve toward fewer jumps,
/// then toward the earlier boundary.
pub fn potts_segment(x: &[f64], beta: f64) -> Result<PottsFit> {
    let p = x.len();
    if p == 0 {
        return Err(Error::invalid("cannot segment an empty vector"));
    }
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(format!(
            "penalty must be finite and >= 0, got {beta}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input contains non-finite values"));
    }

    // Shifting by the mean leaves interval costs unchanged and limits cancellation.
    let shift = x.iter().sum::<f64>() / p as f64;
    let mut s1 = vec![0.0; p + 1];
    let mut s2 = vec![0.0; p + 1];
    for (i, &v) in x.iter().enumerate() {
        let d = v - shift;
        s1[i + 1] = s1[i] + d;
        s2[i + 1] = s2[i] + d * d;
    }
    let cost = |i: usize, j: usize| -> f64 {
        if j - i == 1 {
            return 0.0;
        }
        let s = s1[j] - s1[i];
        (s2[j] - s2[i] - s * s / (j - i) as f64).max(0.0)
    };

    let mut best = vec![f64::INFINITY; p + 1];
    let mut jumps = vec![0usize; p + 1];
    let mut last = vec![0usize; p + 1];
    best[0] = -beta;
    for j in 1..=p {
        for i in 0..j {
            let v = best[i] + beta + cost(i, j);
            let k = if i == 0 { 0 } else { jumps[i] + 1 };
            if v < best[j] || (v == best[j] && k < jumps[j]) {
                best[j] = v;
                jumps[j] = k;
                last[j] = i;
            }
        }
    }

    let mut boundaries = Vec::with_capacity(jumps[p] + 1);
    let mut j = p;
    while j > 0 {
        boundaries.push(last[j]);
        j = last[j];
    }
    boundaries.reverse();

    let mut fit = vec![0.0; p];
    for (k, &start) in boundaries.iter().enumerate() {
        let end = boundaries.get(k + 1).copied().unwrap_or(p);
        let mean = x[start..end].iter().sum::<f64>() / (end - start) as f64;
        fit[start..end].fill(mean);
    }
    let objective = potts_objective(x, &boundaries, beta);
    Ok(PottsFit {
        fit,
        boundaries,
        objective,
    })
}

/// Potts objective of the segmentation with the given start indices, each segment fitted by its mean.
///
/// Accumulates left to right: starting from `-β`, each segment adds `β` and then its squared deviations.
pub fn potts_objective(x: &[f64], boundaries: &[usize], beta: f64) -> f64 {
    let p = x.len();
    let mut total = -beta;
    for (k, &start) in boundaries.iter().enumerate() {
        let end = boundaries.get(k + 1).copied().unwrap_or(p);
        let seg = &x[start..end];
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        total = total + beta + seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    }
    total
}

/// Noise estimation for a data matrix taken as already centered.
///
/// `r = 0` skips the low-rank fit and segments the raw coordinate variances.
pub fn estimate_noise(y: &DataMatrix, r: usize, penalty_c: f64) -> Result<NoiseModel> {
    estimate_noise_corrected(y, r, penalty_c, ResidualCorrection::default())
}

pub fn estimate_noise_corrected(
    y: &DataMatrix,
    r: usize,
    penalty_c: f64,
    correction: ResidualCorrection,
) -> Result<NoiseModel> {
    let q = sample_covariance(y, false)?;
    let eig = sym_eig(&q)?;
    estimate_noise_with(y, &q, &eig, r, penalty_c, correction)
}

/// `2σᵢΣₖψₖᵢ² − Σₖₗψₖᵢψₗᵢ(ψₖᵀΣψₗ)` for each feature `i`.
pub fn projection_loss(u: &DMatrix<f64>, sigma: &[f64]) -> Vec<f64> {
    let r = u.ncols();
    let a = DMatrix::from_fn(r, r, |k, l| {
        sigma
            .iter()
            .enumerate()
            .map(|(i, s)| u[(i, k)] * s * u[(i, l)])
            .sum::<f64>()
    });
    (0..u.nrows())
        .map(|i| {
            let row = u.row(i);
            let lev: f64 = row.iter().map(|v| v * v).sum();
            let quad = (&row * &a * row.transpose())[(0, 0)];
            2.0 * sigma[i] * lev - quad
        })
        .collect()
}

pub(crate) fn estimate_noise_with(
    y: &DataMatrix,
    q: &DMatrix<f64>,
    eig: &EigenSystem,
    r: usize,
    penalty_c: f64,
    correction: ResidualCorrection,
) -> Result<NoiseModel> {
    let (p, n) = (y.p(), y.n());
    if p < 2 || n < 2 {
        return Err(Error::invalid("noise estimation needs p >= 2 and N >= 2"));
    }
    if !(penalty_c > 0.0) {
        return Err(Error::invalid("penalty multiplier c must be positive"));
    }
    if r >= p {
        return Err(Error::invalid(format!(
            "rank r = {r} must be below p = {p}"
        )));
    }
    let raw = residual_diagonal_from(q, eig, r);
    let beta = penalty_c * (p as f64).ln() / n as f64;
    let top = eig.top_vectors(r);
    let mut seg = potts_segment(&raw, beta)?;
    if correction == ResidualCorrection::ProjectionLoss && r > 0 {
        for _ in 0..MAX_CORRECTION_ROUNDS {
            let floored: Vec<f64> = seg.fit.iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
            let x: Vec<f64> = raw
                .iter()
                .zip(projection_loss(&top, &floored))
                .map(|(a, b)| a + b)
                .collect();
            let next = potts_segment(&x, beta)?;
            let stable = next.fit == seg.fit;
            seg = next;
            if stable {
                break;
            }
        }
    }
    let sigma = seg.fit.iter().map(|v| v.max(VARIANCE_FLOOR)).collect();
    let (kappa3, kappa4) = residual_cumulants(y, &top)?;
    Ok(NoiseModel {
        sigma,
        boundaries: seg.boundaries,
        kappa3,
        kappa4,
        penalty_beta: beta,
    })
}

/// Standardized third and fourth cumulants of the residuals `Y − P̂Y`, averaged over coordinates.
///
/// `top_eigenvectors` is `p × r` with orthonormal columns (`r` may be 0).
/// Coordinates with second moment below `1e-12` are skipped.
pub fn residual_cumulants(y: &DataMatrix, top_eigenvectors: &DMatrix<f64>) -> Result<(f64, f64)> {
    if top_eigenvectors.nrows() != y.p() {
        return Err(Error::invalid(
            "eigenvector matrix does not match feature count",
        ));
    }
    let data = y.values();
    let residuals = if top_eigenvectors.ncols() == 0 {
        data.clone()
    } else {
        let scores = top_eigenvectors.transpose() * data;
        data - top_eigenvectors * scores
    };
    let n = y.n() as f64;
    let mut k3 = 0.0;
    let mut k4 = 0.0;
    let mut used = 0usize;
    for row in residuals.row_iter() {
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &v in row.iter() {
            let v2 = v * v;
            m2 += v2;
            m3 += v2 * v;
            m4 += v2 * v2;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        if m2 < DEGENERATE_M2 {
            continue;
        }
        k3 += m3 / m2.powf(1.5);
        k4 += m4 / (m2 * m2) - 3.0;
        used += 1;
    }
    if used == 0 {
        return Err(Error::DegenerateResiduals);
    }
    Ok((k3 / used as f64, k4 / used as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_orthonormal;
    use crate::seed::rng_from_seed;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Exhaustive search over all 2^(p-1) segmentations.
    fn brute_force(x: &[f64], beta: f64) -> (f64, Vec<usize>) {
        let p = x.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 0u32..(1 << (p - 1)) {
            let mut starts = vec![0];
            starts.extend((1..p).filter(|i| mask & (1 << (i - 1)) != 0));
            let mut total = -beta;
            for (k, &s) in starts.iter().enumerate() {
                let e = starts.get(k + 1).copied().unwrap_or(p);
                let m = x[s..e].iter().sum::<f64>() / (e - s) as f64;
                total = total + beta + x[s..e].iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
            if total < best.0 {
                best = (total, starts);
            }
        }
        best
    }

    #[test]
    fn projection_loss_restores_isotropic_noise() {
        let u = random_orthonormal(6, 1, 3).unwrap();
        let q = &u * u.transpose() * 4.0 + DMatrix::identity(6, 6) * 0.7;
        let raw = residual_diagonal(&q, 1).unwrap();
        let eig = sym_eig(&q).unwrap();
        let loss = projection_loss(&eig.top_vectors(1), &[0.7; 6]);
        for (a, b) in raw.iter().zip(&loss) {
            assert!((a + b - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_loss_matches_dense_oracle() {
        let u = random_orthonormal(9, 3, 17).unwrap();
        let sigma: Vec<f64> = (0..9).map(|i| 1.0 + 0.5 * i as f64).collect();
        let s = DMatrix::from_diagonal(&DVector::from_vec(sigma.clone()));
        let resid = DMatrix::identity(9, 9) - &u * u.transpose();
        let oracle = &s - &resid * &s * &resid;
        for (i, v) in projection_loss(&u, &sigma).iter().enumerate() {
            assert!((v - oracle[(i, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn uncorrected_estimate_is_potts_of_raw_residual() {
        let mut rng = rng_from_seed(12);
        let (p, n) = (20, 300);
        let y = DataMatrix::new(DMatrix::from_fn(p, n, |i, _| {
            (1.0 + (i / 10) as f64) * rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap();
        let m = estimate_noise_corrected(&y, 2, 4.0, ResidualCorrection::None).unwrap();
        let q = sample_covariance(&y, false).unwrap();
        let beta = 4.0 * (p as f64).ln() / n as f64;
        let lit = potts_segment(&residual_diagonal(&q, 2).unwrap(), beta).unwrap();
        assert_eq!(m.boundaries, lit.boundaries);
        for (a, b) in m.sigma.iter().zip(&lit.fit) {
            assert!((a - b.max(VARIANCE_FLOOR)).abs() < 1e-12);
        }
        assert_eq!(m.penalty_beta, beta);
    }

    #[test]
    fn residual_diagonal_examples() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 1.0, 1.0]));
        let d = residual_diagonal(&q, 1).unwrap();
        assert_eq!(d[0], VARIANCE_FLOOR);
        assert!((d[1] - 1.0).abs() < 1e-14 && (d[2] - 1.0).abs() < 1e-14);

        let q0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.5]);
        assert_eq!(residual_diagonal(&q0, 0).unwrap(), vec![2.0, 1.5]);

        // d·uuᵀ + σ²I: the rank-1 fit removes (d + σ²)uuᵀ, leaving σ²(1 − uᵢ²).
        let u = random_orthonormal(6, 1, 3).unwrap();
        let q = &u * u.transpose() * 4.0 + DMatrix::identity(6, 6) * 0.7;
        for (i, v) in residual_diagonal(&q, 1).unwrap().into_iter().enumerate() {
            assert!((v - 0.7 * (1.0 - u[(i, 0)].powi(2))).abs() < 1e-12);
        }
        assert!(residual_diagonal(&q, 6).is_err());
    }

    #[test]
    fn potts_examples() {
        let c = potts_segment(&[2.0; 5], 1.0).unwrap();
        assert_eq!(c.fit, vec![2.0; 5]);
        assert_eq!(c.jumps(), 0);

        let x = [0.0, 0.0, 10.0, 10.0];
        let a = potts_segment(&x, 1.0).unwrap();
        assert_eq!(a.fit, x.to_vec());
        assert_eq!(a.boundaries, vec![0, 2]);
        assert_eq!(a.objective, 1.0);
        assert_eq!(brute_force(&x, 1.0).0, 1.0);

        let b = potts_segment(&x, 200.0).unwrap();
        assert_eq!(b.fit, vec![5.0; 4]);
        assert_eq!(b.jumps(), 0);
        assert_eq!(b.objective, 100.0);
        assert_eq!(brute_force(&x, 200.0).0, 100.0);
    }

    #[test]
    fn potts_ties_prefer_fewer_jumps() {
        // One segment costs 100, two segments cost 0 + 100: equal, keep one.
        let p = potts_segment(&[0.0, 0.0, 10.0, 10.0], 100.0).unwrap();
        assert_eq!(p.jumps(), 0);
    }

    #[test]
    fn potts_rejects_bad_input() {
        assert!(potts_segment(&[], 1.0).is_err());
        assert!(potts_segment(&[1.0], -1.0).is_err());
        assert!(potts_segment(&[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn potts_matches_brute_force_on_random_vectors() {
        let mut rng = rng_from_seed(17);
        for _ in 0..200 {
            let p = rng.random_range(1..=10);
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
            for beta in [0.0, 0.5, 4.0] {
                let dp = potts_segment(&x, beta).unwrap();
                let (opt, _) = brute_force(&x, beta);
                assert_eq!(dp.objective, opt, "x = {x:?}, beta = {beta}");
            }
        }
    }

    #[test]
    fn cumulants_gaussian_and_uniform() {
        let mut rng = rng_from_seed(5);
        let (p, n) = (40, 5000);
        let g = DataMatrix::new(DMatrix::from_fn(p, n, |_, _| {
            StandardNormal.sample(&mut rng)
        }))
        .unwrap();
        let (k3, k4) = residual_cumulants(&g, &DMatrix::zeros(p, 0)).unwrap();
        assert!(k3.abs() < 0.1 && k4.abs() < 0.15, "{k3} {k4}");

        let s3 = 3f64.sqrt();
        let u = DataMatrix::new(DMatrix::from_fn(p, n, |_, _| rng.random_range(-s3..s3))).unwrap();
        let (_, k4) = residual_cumulants(&u, &DMatrix::zeros(p, 0)).unwrap();
        assert!((k4 + 1.2).abs() < 0.05, "{k4}");

        let z = DataMatrix::new(DMatrix::zeros(3, 10)).unwrap();
        assert_eq!(
            residual_cumulants(&z, &DMatrix::zeros(3, 0)),
            Err(Error::DegenerateResiduals)
        );
    }

    #[test]
    fn homoskedastic_noise_level() {
        let mut rng = rng_from_seed(8);
        let (p, n) = (100, 4000);
        let mut means = Vec::new();
        for _ in 0..50 {
            let y = DataMatrix::new(DMatrix::from_fn(p, n, |_, _| {
                2f64.sqrt() * rng.sample::<f64, _>(StandardNormal)
            }))
            .unwrap();
            let m = estimate_noise(&y, 0, DEFAULT_PENALTY_C).unwrap();
            means.push(m.sigma.iter().sum::<f64>() / p as f64);
        }
        assert!(means.iter().all(|m| (1.9..=2.1).contains(m)), "{means:?}");
    }

    #[test]
    fn noise_invariant_to_sample_permutation() {
        let mut rng = rng_from_seed(21);
        let (p, n) = (30, 400);
        let scale: Vec<f64> = (0..p).map(|i| if i < 15 { 1.0 } else { 3.0 }).collect();
        let y = DMatrix::from_fn(p, n, |i, _| {
            scale[i].sqrt() * rng.sample::<f64, _>(StandardNormal)
        });
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.swap(3, 100);
        let yp = DMatrix::from_fn(p, n, |i, j| y[(i, perm[j])]);
        let a = estimate_noise(&DataMatrix::new(y).unwrap(), 2, 10.0).unwrap();
        let b = estimate_noise(&DataMatrix::new(yp).unwrap(), 2, 10.0).unwrap();
        assert_eq!(a.boundaries, b.boundaries);
        for (u, v) in a.sigma.iter().zip(&b.sigma) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn estimate_noise_validates() {
        let y = DataMatrix::new(DMatrix::from_element(3, 5, 1.0)).unwrap();
        assert!(estimate_noise(&y, 3, 10.0).is_err());
        assert!(estimate_noise(&y, 1, 0.0).is_err());
        let thin = DataMatrix::new(DMatrix::from_element(1, 5, 1.0)).unwrap();
        assert!(estimate_noise(&thin, 0, 10.0).is_err());
    }

    proptest! {
        #[test]
        fn potts_zero_penalty_is_identity(x in prop::collection::vec(-50.0f64..50.0, 1..40)) {
            let f = potts_segment(&x, 0.0).unwrap();
            prop_assert_eq!(f.fit, x);
        }

        #[test]
        fn potts_monotone_in_beta(x in prop::collection::vec(-5.0f64..5.0, 1..30), b1 in 0.0f64..20.0, db in 0.0f64..20.0) {
            let lo = potts_segment(&x, b1).unwrap();
            let hi = potts_segment(&x, b1 + db).unwrap();
            prop_assert!(hi.objective >= lo.objective - 1e-9);
            prop_assert!(hi.jumps() <= lo.jumps());
        }

        #[test]
        fn potts_segments_are_means(x in prop::collection::vec(-5.0f64..5.0, 1..30), beta in 0.0f64..5.0) {
            let f = potts_segment(&x, beta).unwrap();
            prop_assert_eq!(f.boundaries[0], 0);
            for w in f.boundaries.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            for (k, &s) in f.boundaries.iter().enumerate() {
                let e = f.boundaries.get(k + 1).copied().unwrap_or(x.len());
                let m = x[s..e].iter().sum::<f64>() / (e - s) as f64;
                prop_assert!(f.fit[s..e].iter().all(|v| *v == m));
            }
        }
    }
}
