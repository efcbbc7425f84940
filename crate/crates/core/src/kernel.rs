//! Kernel spectral profiles from Gram matrices.
//!
//! The profile is the normalized top-r spectrum of `HKH/N`, with
//! `H = I − 𝟏𝟏ᵀ/N`. No noise correction is applied in feature space.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{random_orthonormal, sym_eig, symmetrize, DataMatrix, DEFAULT_RANK_TOL};
use crate::spikes::{nmsd, profile, SpectralProfile};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;
/// Relative eigen-gap below which a separation warning is raised.
pub const GAP_WARNING: f64 = 1e-3;
/// Up to this size the full spectrum is computed directly.
const DENSE_LIMIT: usize = 400;
const SUBSPACE_OVERSAMPLE: usize = 8;
const SUBSPACE_MAX_ITERS: usize = 500;
const SUBSPACE_TOL: f64 = 1e-14;
const SUBSPACE_SEED: u64 = 0x5eed_0f_6ea1;

/// Symmetric `N × N` Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
}

impl GramMatrix {
    /// Checks squareness, finiteness, symmetry (relative `1e-10`) and a
    /// non-negative diagonal. Use [`GramMatrix::check_psd`] for the full
    /// spectral check.
    pub fn new(mut values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        if n == 0 || values.ncols() != n {
            return Err(Error::invalid("Gram matrix must be square and non-empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("Gram matrix has non-finite entries"));
        }
        let scale = values.amax().max(1.0);
        let asym = (&values - values.transpose()).amax();
        if asym > SYMMETRY_TOL * scale {
            return Err(Error::invalid(format!(
                "Gram matrix is not symmetric (max |K - Kᵀ| = {asym:e})"
            )));
        }
        if values.diagonal().iter().any(|&d| d < -PSD_TOL * scale) {
            return Err(Error::invalid("Gram matrix has a negative diagonal entry"));
        }
        symmetrize(&mut values);
        Ok(GramMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> Result<GramMatrix> {
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::invalid("scale must be positive"));
        }
        Ok(GramMatrix {
            values: &self.values * c,
        })
    }

    /// Full eigendecomposition check: every eigenvalue `≥ −1e-8·λ_max`.
    pub fn check_psd(&self) -> Result<()> {
        let eig = sym_eig(&self.values)?;
        let top = eig.eigenvalues[0].max(0.0);
        let bottom = eig.eigenvalues[self.n() - 1];
        if bottom < -PSD_TOL * top {
            return Err(Error::invalid(format!(
                "Gram matrix is not PSD: smallest eigenvalue {bottom:e}"
            )));
        }
        Ok(())
    }
}

/// `HKH`.
pub fn center_gram(k: &GramMatrix) -> GramMatrix {
    let n = k.n();
    let nf = n as f64;
    let row_means: Vec<f64> = k.values.row_iter().map(|r| r.sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    let mut values = DMatrix::from_fn(n, n, |i, j| {
        k.values[(i, j)] - row_means[i] - row_means[j] + grand
    });
    symmetrize(&mut values);
    GramMatrix { values }
}

/// `XᵀX` over the sample columns of `X`.
pub fn linear_gram(x: &DataMatrix) -> GramMatrix {
    let mut values = x.values().transpose() * x.values();
    symmetrize(&mut values);
    GramMatrix { values }
}

/// Gaussian kernel `exp(−‖xᵢ − xⱼ‖²/(2h²))` over the sample columns of `X`.
pub fn rbf_gram(x: &DataMatrix, bandwidth: f64) -> Result<GramMatrix> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    let n = x.n();
    let v = x.values();
    let denom = 2.0 * bandwidth * bandwidth;
    let mut values = DMatrix::from_element(n, n, 1.0);
    for j in 0..n {
        for i in 0..j {
            let d2: f64 = v
                .column(i)
                .iter()
                .zip(v.column(j).iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            let kij = (-d2 / denom).exp();
            values[(i, j)] = kij;
            values[(j, i)] = kij;
        }
    }
    Ok(GramMatrix { values })
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelSpectrum {
    /// Leading eigenvalues of `HKH/N` (up to `r + 1` of them), non-increasing.
    pub eigenvalues: Vec<f64>,
    pub profile: SpectralProfile,
    pub warnings: Vec<String>,
}

/// Leading `k` eigenvalues of a symmetric PSD matrix.
///
/// Small matrices use a dense decomposition; larger ones use orthogonal
/// subspace iteration with Rayleigh–Ritz and a few extra vectors.
fn leading_eigenvalues(a: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let n = a.nrows();
    if n <= DENSE_LIMIT || k + SUBSPACE_OVERSAMPLE >= n {
        return Ok(sym_eig(a)?.top_values(k.min(n)));
    }
    let m = k + SUBSPACE_OVERSAMPLE;
    let mut q = random_orthonormal(n, m, SUBSPACE_SEED)?;
    let mut prev = vec![f64::INFINITY; k];
    for _ in 0..SUBSPACE_MAX_ITERS {
        let z = a * &q;
        q = z.qr().q();
        let mut t = q.transpose() * a * &q;
        symmetrize(&mut t);
        let ritz = sym_eig(&t)?.top_values(k);
        let scale = ritz[0].abs().max(f64::MIN_POSITIVE);
        let moved = ritz
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        prev = ritz;
        if moved <= SUBSPACE_TOL * scale {
            return Ok(prev);
        }
    }
    Err(Error::NumericalFailure(
        "subspace iteration did not converge".into(),
    ))
}

/// Kernel spectrum and profile of `K` at rank `r`, with a gap diagnostic.
pub fn kernel_spectrum(k: &GramMatrix, r: usize) -> Result<KernelSpectrum> {
    if r == 0 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    let n = k.n();
    let mut g = center_gram(k).values;
    g /= n as f64;
    let want = (r + 1).min(n);
    let eigenvalues = leading_eigenvalues(&g, want)?;
    let top = eigenvalues[0];
    let available = if top > 0.0 {
        eigenvalues
            .iter()
            .take_while(|&&v| v > DEFAULT_RANK_TOL * top)
            .count()
    } else {
        0
    };
    if available < r {
        return Err(Error::InsufficientSpectrum {
            requested: r,
            available,
        });
    }
    let mut warnings = Vec::new();
    if let Some(&next) = eigenvalues.get(r) {
        let gap = eigenvalues[r - 1] - next.max(0.0);
        if gap < GAP_WARNING * top {
            warnings.push(format!(
                "kernel eigenvalues {r} and {} are not separated (gap {gap:.3e} vs leading {top:.3e})",
                r + 1
            ));
        }
    }
    let profile = profile(&eigenvalues[..r])?;
    Ok(KernelSpectrum {
        eigenvalues,
        profile,
        warnings,
    })
}

pub fn kernel_profile(k: &GramMatrix, r: usize) -> Result<SpectralProfile> {
    kernel_spectrum(k, r).map(|s| s.profile)
}

/// `‖Π̂₁⁽ᴷ⁾ − Π̂₂⁽ᴷ⁾‖₂`.
pub fn kernel_nmsd(k1: &GramMatrix, k2: &GramMatrix, r: usize) -> Result<f64> {
    let p1 = kernel_profile(k1, r).map_err(|e| e.in_dataset(1))?;
    let p2 = kernel_profile(k2, r).map_err(|e| e.in_dataset(2))?;
    nmsd(&p1, &p2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(p: usize, n: usize, seed: u64) -> DataMatrix {
        let mut rng = rng_from_seed(seed);
        DataMatrix::new(DMatrix::from_fn(p, n, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        }))
        .unwrap()
    }

    #[test]
    fn centering() {
        let k = GramMatrix::new(DMatrix::from_element(5, 5, 2.5)).unwrap();
        assert!(center_gram(&k).values.amax() < 1e-15);

        let x = gaussian(4, 30, 1);
        let kc = center_gram(&linear_gram(&x));
        for s in kc.values.row_iter().map(|r| r.sum()) {
            assert!(s.abs() < 1e-8);
        }
        let twice = center_gram(&kc);
        assert!((&twice.values - &kc.values).amax() < 1e-10);

        let xc = x.centered();
        let lin = linear_gram(&xc);
        assert!((&center_gram(&lin).values - lin.values()).amax() < 1e-10);
    }

    #[test]
    fn gram_validation() {
        assert!(GramMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        assert!(GramMatrix::new(DMatrix::zeros(2, 3)).is_err());
        let ok = GramMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        ok.check_psd().unwrap();
        let bad = GramMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert!(bad.check_psd().is_err());
    }

    #[test]
    fn rbf_examples() {
        let h = 0.7;
        let x =
            DataMatrix::new(DMatrix::from_row_slice(2, 3, &[0.0, h, 0.0, 0.0, h, 0.0])).unwrap();
        let k = rbf_gram(&x, h).unwrap();
        // columns 0 and 1 are √2·h apart, columns 0 and 2 coincide
        assert!((k.values[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(k.values[(0, 2)], 1.0);
        assert!(k.values.diagonal().iter().all(|&d| d == 1.0));
        let wide = rbf_gram(&x, 1e9).unwrap();
        assert!(wide.values.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(rbf_gram(&x, 0.0).is_err());
    }

    #[test]
    fn linear_kernel_matches_covariance_spectrum() {
        let x = gaussian(6, 80, 2);
        let xc = x.centered();
        let cov = xc.values() * xc.values().transpose() / 80.0;
        let want = profile(&sym_eig(&cov).unwrap().top_values(3)).unwrap();
        let got = kernel_profile(&linear_gram(&x), 3).unwrap();
        for (a, b) in got.pi.iter().zip(&want.pi) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn insufficient_spectrum() {
        // rank-2 data: centered Gram has rank ≤ 2
        let mut rng = rng_from_seed(3);
        let basis = DMatrix::from_fn(5, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let coef = DMatrix::from_fn(2, 40, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DataMatrix::new(basis * coef).unwrap();
        let k = linear_gram(&x);
        assert!(kernel_profile(&k, 2).is_ok());
        assert!(matches!(
            kernel_profile(&k, 3),
            Err(Error::InsufficientSpectrum {
                requested: 3,
                available: 2
            })
        ));
    }

    #[test]
    fn rescaling_and_symmetry() {
        let k1 = rbf_gram(&gaussian(3, 50, 4), 1.5).unwrap();
        let k2 = rbf_gram(&gaussian(3, 50, 5), 1.5).unwrap();
        assert_eq!(kernel_nmsd(&k1, &k1, 2).unwrap(), 0.0);
        assert!(kernel_nmsd(&k1, &k1.scaled(3.7).unwrap(), 2).unwrap() < 1e-12);
        let d12 = kernel_nmsd(&k1, &k2, 2).unwrap();
        assert_eq!(d12, kernel_nmsd(&k2, &k1, 2).unwrap());
    }

    #[test]
    fn subspace_iteration_matches_dense() {
        let x = gaussian(10, 450, 6);
        let k = linear_gram(&x);
        let mut g = center_gram(&k).values;
        g /= 450.0;
        let fast = leading_eigenvalues(&g, 4).unwrap();
        let dense = sym_eig(&g).unwrap().top_values(4);
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10 * dense[0]);
        }
    }

    #[test]
    fn gap_warning() {
        // isotropic data: r-th and (r+1)-th eigenvalues nearly tie at small p
        let x = DataMatrix::new(DMatrix::from_fn(
            4,
            4,
            |i, j| if i == j { 1.0 } else { 0.0 },
        ))
        .unwrap();
        let s = kernel_spectrum(&linear_gram(&x), 1).unwrap();
        assert_eq!(s.warnings.len(), 1);
    }
}
