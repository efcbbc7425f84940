//! Plug-in asymptotic covariances for spikes, signal strengths and profiles,
//! and the normal-theory confidence intervals built on them.
//!
//! The spike covariance `V̂_*` (for `√N(λ − θ(ξ))`) is the conditional noise
//! block plus the signal-resampling block pushed through `θ′`:
//!
//! ```text
//! V̂_* = V̂ᶜᵒⁿᵈ + N·diag(θ̂′) Γ̂ˢⁱᵍ diag(θ̂′)
//! ```
//!
//! The delta method then carries it to `d̂²` through
//! `Γ̂_j = ŝ₂(ξ̂_j) / (p ĝ(ξ̂_j)² θ̂′_j)` and to `Π̂` through the simplex
//! Jacobian `J_{kj} = (δ_{kj} s − d̂²_k)/s²`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, DataMatrix};
use crate::noise::NoiseModel;
use crate::spikes::{g_fn, nmsd, s2_fn, SpectralProfile, SpikeSet};

/// Spikes with `θ̂′` below this are rejected by [`profile_covariance`].
pub const NEAR_CRITICAL_THETA_PRIME: f64 = 1e-6;

/// Distances below this get no delta-method interval.
pub const DEGENERATE_DISTANCE: f64 = 1e-6;

/// How the empirical signal covariance `M̂` entering `B̂_{kj} = ψ̂ₖᵀM̂ψ̂ⱼ` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalPlugin {
    /// `M̂ = Σₖ (ξ̂ₖ − Âₖₖ) ψ̂ₖψ̂ₖᵀ`: the conditional spike minus its noise share.
    #[default]
    DebiasedSpikes,
    /// `M̂ = Σₖ λₖ ψ̂ₖψ̂ₖᵀ`: the rank-r fit of `Q` itself. Inflates `B̂` by the
    /// noise share and bulk bias, which makes the test conservative.
    SampleRankFit,
}

/// Factored rank-r signal covariance `V diag(e) Vᵀ`.
#[derive(Debug, Clone)]
pub struct SignalFit {
    pub vectors: DMatrix<f64>,
    pub energies: Vec<f64>,
}

impl SignalFit {
    pub fn new(
        spikes: &SpikeSet,
        eigvecs: &DMatrix<f64>,
        noise: &NoiseModel,
        plugin: SignalPlugin,
    ) -> Result<SignalFit> {
        check_shapes(spikes, eigvecs, noise)?;
        let energies = match plugin {
            SignalPlugin::SampleRankFit => spikes.lambda.clone(),
            SignalPlugin::DebiasedSpikes => {
                let a = noise_quadratic(eigvecs, &noise.sigma);
                (0..spikes.rank)
                    .map(|k| spikes.xi_hat[k] - a[(k, k)])
                    .collect()
            }
        };
        Ok(SignalFit {
            vectors: eigvecs.clone(),
            energies,
        })
    }

    /// `uᵀ M̂ v`.
    pub fn quadratic(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let pu = self.vectors.transpose() * u;
        let pv = self.vectors.transpose() * v;
        pu.iter()
            .zip(pv.iter())
            .zip(&self.energies)
            .map(|((a, b), e)| a * b * e)
            .sum()
    }

    /// The `r × r` matrix `ψ̂ᵀ M̂ ψ̂` for the given frame.
    pub fn gram(&self, eigvecs: &DMatrix<f64>) -> DMatrix<f64> {
        let r = eigvecs.ncols();
        let cols: Vec<DVector<f64>> = (0..r).map(|k| eigvecs.column(k).into_owned()).collect();
        let mut b = DMatrix::from_fn(r, r, |k, j| self.quadratic(&cols[k], &cols[j]));
        symmetrize(&mut b);
        b
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimates {
    /// Conditional noise block `V̂ᶜᵒⁿᵈ`.
    pub v_cond: DMatrix<f64>,
    /// Signal-resampling block `Γ̂ˢⁱᵍ` (already carries `1/N`).
    pub gamma_sig: DMatrix<f64>,
    /// Covariance of `√N(λ − θ(ξ̂))`.
    pub v_star: DMatrix<f64>,
    pub sigma_d2: DMatrix<f64>,
    pub sigma_pi: DMatrix<f64>,
    /// `Σ̂_Π / N`, the covariance of `Π̂` itself.
    pub v_pi: DMatrix<f64>,
    /// Diagonal of the delta-method derivative `Γ̂` of `λ ↦ d̂²`.
    pub delta_derivative: Vec<f64>,
    pub n: usize,
}

impl CovarianceEstimates {
    /// Plug-in covariance of the sample spikes `λ`.
    pub fn lambda_covariance(&self) -> DMatrix<f64> {
        &self.v_star / self.n as f64
    }

    /// Plug-in covariance of `d̂²`.
    pub fn d2_covariance(&self) -> DMatrix<f64> {
        &self.sigma_d2 / self.n as f64
    }
}

/// Output of [`profile_covariance`].
#[derive(Debug, Clone)]
pub struct ProfileCovariance {
    pub delta_derivative: Vec<f64>,
    pub sigma_d2: DMatrix<f64>,
    pub sigma_pi: DMatrix<f64>,
    pub v_pi: DMatrix<f64>,
}

fn check_shapes(spikes: &SpikeSet, eigvecs: &DMatrix<f64>, noise: &NoiseModel) -> Result<()> {
    if eigvecs.ncols() != spikes.rank {
        return Err(Error::invalid(format!(
            "expected {} eigenvectors, got {}",
            spikes.rank,
            eigvecs.ncols()
        )));
    }
    if eigvecs.nrows() != noise.sigma.len() {
        return Err(Error::invalid(
            "eigenvectors do not match the noise dimension",
        ));
    }
    Ok(())
}

/// `Â = ψ̂ᵀ Σ̂ ψ̂`.
fn noise_quadratic(eigvecs: &DMatrix<f64>, sigma: &[f64]) -> DMatrix<f64> {
    let r = eigvecs.ncols();
    let mut a = DMatrix::from_fn(r, r, |k, j| {
        sigma
            .iter()
            .enumerate()
            .map(|(i, s)| eigvecs[(i, k)] * s * eigvecs[(i, j)])
            .sum()
    });
    symmetrize(&mut a);
    a
}

/// `M̂₂,₂(k, j) = Σₐ ψ̂²ₖₐ ψ̂²ⱼₐ σ̂ₐ²`.
fn fourth_order_contraction(eigvecs: &DMatrix<f64>, sigma: &[f64]) -> DMatrix<f64> {
    let r = eigvecs.ncols();
    DMatrix::from_fn(r, r, |k, j| {
        sigma
            .iter()
            .enumerate()
            .map(|(a, s)| (eigvecs[(a, k)] * eigvecs[(a, j)]).powi(2) * s * s)
            .sum()
    })
}

/// Conditional (noise) block of the spike covariance.
///
/// Off-diagonal entries of the Gaussian block are taken as zero; only the
/// diagonal `V̂⁽ᴳ⁾ₖₖ` has a closed form.
pub fn conditional_covariance(
    spikes: &SpikeSet,
    eigvecs: &DMatrix<f64>,
    noise: &NoiseModel,
    m_hat: &SignalFit,
) -> Result<DMatrix<f64>> {
    check_shapes(spikes, eigvecs, noise)?;
    let r = spikes.rank;
    let a = noise_quadratic(eigvecs, &noise.sigma);
    let b = m_hat.gram(eigvecs);
    let m22 = fourth_order_contraction(eigvecs, &noise.sigma);
    let tp = &spikes.theta_prime;
    let mut v = DMatrix::from_fn(r, r, |k, j| {
        let tt = tp[k] * tp[j];
        let ab = a[(k, j)] * b[(k, j)];
        noise.kappa4 * tt * m22[(k, j)] + 2.0 * noise.kappa3 * tt * ab + 4.0 * tt * ab
    });
    for k in 0..r {
        let xi2 = spikes.xi_hat[k].powi(2);
        v[(k, k)] +=
            2.0 * tp[k].powi(2) * a[(k, k)].powi(2) + 2.0 * xi2 * tp[k] - 2.0 * xi2 * tp[k].powi(2);
    }
    symmetrize(&mut v);
    Ok(v)
}

/// Signal-resampling block `Γ̂ˢⁱᵍ`, including its `1/N` factor.
///
/// The fourth-cumulant contraction of `Y` along `(ψ̂ₖ, ψ̂ₖ, ψ̂ⱼ, ψ̂ⱼ)` is
/// computed from the centered projections `ψ̂ᵀYᵢ`; the noise cumulant is the
/// diagonal-noise contraction `κ̂₄ M̂₂,₂(k, j)`.
pub fn signal_sampling_covariance(
    y: &DataMatrix,
    eigvecs: &DMatrix<f64>,
    noise: &NoiseModel,
    m_hat: &SignalFit,
) -> Result<DMatrix<f64>> {
    if eigvecs.nrows() != y.p() || noise.sigma.len() != y.p() {
        return Err(Error::invalid(
            "dimension mismatch between data, eigenvectors and noise",
        ));
    }
    let r = eigvecs.ncols();
    let n = y.n() as f64;
    let mut proj = eigvecs.transpose() * y.values();
    for mut row in proj.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
    }
    let b = m_hat.gram(eigvecs);
    let m22 = fourth_order_contraction(eigvecs, &noise.sigma);
    let mut gamma = DMatrix::zeros(r, r);
    for k in 0..r {
        for j in k..r {
            let (mut s22, mut s2k, mut s2j, mut s11) = (0.0, 0.0, 0.0, 0.0);
            for (&u, &v) in proj.row(k).iter().zip(proj.row(j).iter()) {
                let (u2, v2) = (u * u, v * v);
                s22 += u2 * v2;
                s2k += u2;
                s2j += v2;
                s11 += u * v;
            }
            let cum_y = s22 / n - (s2k / n) * (s2j / n) - 2.0 * (s11 / n).powi(2);
            let cum_noise = noise.kappa4 * m22[(k, j)];
            let val = (2.0 * b[(k, j)].powi(2) + cum_y - cum_noise) / n;
            gamma[(k, j)] = val;
            gamma[(j, k)] = val;
        }
    }
    Ok(gamma)
}

/// `V̂_* = V̂ᶜᵒⁿᵈ + N·diag(θ̂′) Γ̂ˢⁱᵍ diag(θ̂′)`.
pub fn spike_covariance(
    spikes: &SpikeSet,
    v_cond: &DMatrix<f64>,
    gamma_sig: &DMatrix<f64>,
    n: usize,
) -> DMatrix<f64> {
    let tp = &spikes.theta_prime;
    let mut v = DMatrix::from_fn(spikes.rank, spikes.rank, |k, j| {
        v_cond[(k, j)] + n as f64 * tp[k] * tp[j] * gamma_sig[(k, j)]
    });
    symmetrize(&mut v);
    v
}

/// Carries `V̂_*` to `d̂²` and `Π̂` by the delta method.
pub fn profile_covariance(
    spikes: &SpikeSet,
    v_star: &DMatrix<f64>,
    noise: &NoiseModel,
    n: usize,
) -> Result<ProfileCovariance> {
    let r = spikes.rank;
    if v_star.nrows() != r || v_star.ncols() != r {
        return Err(Error::invalid("spike covariance has the wrong shape"));
    }
    if let Some((index, &theta_prime)) = spikes
        .theta_prime
        .iter()
        .enumerate()
        .find(|(_, &t)| !(t >= NEAR_CRITICAL_THETA_PRIME))
    {
        return Err(Error::NearCriticalSpike { index, theta_prime });
    }
    let p = noise.sigma.len() as f64;
    let delta_derivative = (0..r)
        .map(|j| {
            let s = spikes.xi_hat[j];
            let g = g_fn(&noise.sigma, s)?;
            let s2 = s2_fn(&noise.sigma, s)?;
            Ok(s2 / (p * g * g * spikes.theta_prime[j]))
        })
        .collect::<Result<Vec<f64>>>()?;
    let gd = DMatrix::from_diagonal(&DVector::from_vec(delta_derivative.clone()));
    let mut sigma_d2 = &gd * v_star * &gd;
    symmetrize(&mut sigma_d2);

    let jac = simplex_jacobian(&spikes.d2_hat);
    let mut sigma_pi = &jac * &sigma_d2 * jac.transpose();
    symmetrize(&mut sigma_pi);
    let v_pi = &sigma_pi / n as f64;
    Ok(ProfileCovariance {
        delta_derivative,
        sigma_d2,
        sigma_pi,
        v_pi,
    })
}

/// `∂Πₖ/∂d²ⱼ = (δₖⱼ s − d²ₖ)/s²` with `s = Σ d²`. Columns sum to zero.
pub fn simplex_jacobian(d2: &[f64]) -> DMatrix<f64> {
    let r = d2.len();
    let s: f64 = d2.iter().sum();
    DMatrix::from_fn(r, r, |k, j| {
        let delta = if k == j { s } else { 0.0 };
        (delta - d2[k]) / (s * s)
    })
}

/// Every covariance block for one dataset.
pub fn estimate_covariances(
    y: &DataMatrix,
    eigvecs: &DMatrix<f64>,
    spikes: &SpikeSet,
    noise: &NoiseModel,
    plugin: SignalPlugin,
) -> Result<CovarianceEstimates> {
    let m_hat = SignalFit::new(spikes, eigvecs, noise, plugin)?;
    let v_cond = conditional_covariance(spikes, eigvecs, noise, &m_hat)?;
    let gamma_sig = signal_sampling_covariance(y, eigvecs, noise, &m_hat)?;
    let v_star = spike_covariance(spikes, &v_cond, &gamma_sig, y.n());
    let pc = profile_covariance(spikes, &v_star, noise, y.n())?;
    Ok(CovarianceEstimates {
        v_cond,
        gamma_sig,
        v_star,
        sigma_d2: pc.sigma_d2,
        sigma_pi: pc.sigma_pi,
        v_pi: pc.v_pi,
        delta_derivative: pc.delta_derivative,
        n: y.n(),
    })
}

/// `z_{1−α/2}` of the standard normal.
pub fn normal_quantile_two_sided(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    fn symmetric(estimate: f64, half_width: f64) -> Interval {
        Interval {
            estimate,
            lo: estimate - half_width,
            hi: estimate + half_width,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalSet {
    pub alpha: f64,
    pub z: f64,
    /// One interval per profile component (of `Π̂₁` in two-sample mode).
    pub components: Vec<Interval>,
    /// Componentwise intervals for `ΔΠ̂ = Π̂₁ − Π̂₂` (two-sample mode only).
    pub delta: Option<Vec<Interval>>,
    pub nmsd: Option<Interval>,
    /// Set when the estimated distance is too small for the nMSD interval.
    pub nmsd_degenerate: bool,
}

fn component_intervals(est: &[f64], cov: &DMatrix<f64>, z: f64) -> Vec<Interval> {
    est.iter()
        .enumerate()
        .map(|(t, &e)| Interval::symmetric(e, z * cov[(t, t)].max(0.0).sqrt()))
        .collect()
}

/// Componentwise intervals for a single profile.
pub fn profile_intervals(
    pi: &SpectralProfile,
    v_pi: &DMatrix<f64>,
    alpha: f64,
) -> Result<IntervalSet> {
    if v_pi.nrows() != pi.r() || v_pi.ncols() != pi.r() {
        return Err(Error::invalid("covariance does not match the profile rank"));
    }
    let z = normal_quantile_two_sided(alpha)?;
    Ok(IntervalSet {
        alpha,
        z,
        components: component_intervals(&pi.pi, v_pi, z),
        delta: None,
        nmsd: None,
        nmsd_degenerate: false,
    })
}

/// Interval for the distance: `d̂ ± z·√(ΔΠ̂ᵀ V̂_Δ ΔΠ̂ / d̂²)`.
pub fn nmsd_interval(delta: &[f64], v_delta: &DMatrix<f64>, alpha: f64) -> Result<Interval> {
    let z = normal_quantile_two_sided(alpha)?;
    let d = DVector::from_column_slice(delta);
    let dist = d.norm();
    if !(dist >= DEGENERATE_DISTANCE) {
        return Err(Error::DegenerateDistance { distance: dist });
    }
    let var = (d.transpose() * v_delta * &d)[(0, 0)].max(0.0) / (dist * dist);
    Ok(Interval::symmetric(dist, z * var.sqrt()))
}

/// Two-sample intervals: components of `Π̂₁`, components of `ΔΠ̂`, and the nMSD.
///
/// A degenerate distance suppresses the nMSD interval and sets the flag.
pub fn confidence_intervals(
    pi1: &SpectralProfile,
    pi2: &SpectralProfile,
    v_pi1: &DMatrix<f64>,
    v_pi2: &DMatrix<f64>,
    alpha: f64,
) -> Result<IntervalSet> {
    nmsd(pi1, pi2)?;
    let r = pi1.r();
    for v in [v_pi1, v_pi2] {
        if v.nrows() != r || v.ncols() != r {
            return Err(Error::invalid("covariance does not match the profile rank"));
        }
    }
    let z = normal_quantile_two_sided(alpha)?;
    let delta: Vec<f64> = pi1.pi.iter().zip(&pi2.pi).map(|(a, b)| a - b).collect();
    let v_delta = v_pi1 + v_pi2;
    let (nmsd, nmsd_degenerate) = match nmsd_interval(&delta, &v_delta, alpha) {
        Ok(iv) => (Some(iv), false),
        Err(Error::DegenerateDistance { .. }) => (None, true),
        Err(e) => return Err(e),
    };
    Ok(IntervalSet {
        alpha,
        z,
        components: component_intervals(&pi1.pi, v_pi1, z),
        delta: Some(component_intervals(&delta, &v_delta, z)),
        nmsd,
        nmsd_degenerate,
    })
}
