//! Two-sample alignability test on spectral profiles.
//!
//! `T_Π = ΔΠ̂ᵀ (V̂_Π,₁ + V̂_Π,₂)⁺ ΔΠ̂` is referred to `χ²_{r−1}`; the pooled
//! covariance has the simplex direction `𝟏` in its null space, hence the
//! pseudoinverse and the lost degree of freedom.

mod chi2;

pub use chi2::{chi2_cdf, chi2_quantile, chi2_sf, noncentral_chi2_power, noncentral_chi2_sf};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::analysis::{analyze_dataset, AnalysisOptions, DatasetAnalysis};
use crate::error::{Error, Result};
use crate::linalg::{check_symmetric, numerical_rank, pseudoinverse, DataMatrix, DEFAULT_RANK_TOL};
use crate::spikes::{nmsd, SpectralProfile};
use crate::uncertainty::{confidence_intervals, IntervalSet};

/// `Δᵀ (v1 + v2)⁺ Δ` with `Δ = Π₁ − Π₂`.
pub fn t_pi(
    pi1: &SpectralProfile,
    pi2: &SpectralProfile,
    v1: &DMatrix<f64>,
    v2: &DMatrix<f64>,
) -> Result<f64> {
    let r = pi1.r();
    if pi2.r() != r {
        return Err(Error::invalid(format!(
            "profile ranks differ: {r} vs {}",
            pi2.r()
        )));
    }
    for v in [v1, v2] {
        if v.nrows() != r || v.ncols() != r {
            return Err(Error::invalid("covariance does not match the profile rank"));
        }
    }
    let delta = DVector::from_iterator(r, pi1.pi.iter().zip(&pi2.pi).map(|(a, b)| a - b));
    quadratic_form_pinv(&delta, &(v1 + v2))
}

/// `δᵀ V⁺ δ` at the default rank tolerance, clamped at zero.
pub fn quadratic_form_pinv(delta: &DVector<f64>, v: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(v)?;
    let pinv = pseudoinverse(v, DEFAULT_RANK_TOL)?;
    Ok((delta.transpose() * pinv * delta)[(0, 0)].max(0.0))
}

/// `N₁N₂/(N₁+N₂)`.
pub fn effective_sample_size(n1: usize, n2: usize) -> f64 {
    let (a, b) = (n1 as f64, n2 as f64);
    a * b / (a + b)
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignmentReport {
    pub t_stat: f64,
    pub df: usize,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub pi1: Vec<f64>,
    pub pi2: Vec<f64>,
    pub delta_pi: Vec<f64>,
    pub nmsd_hat: f64,
    pub n_eff: f64,
    pub pooled_rank: usize,
    pub intervals: IntervalSet,
    pub warnings: Vec<String>,
}

/// Test on two finished analyses (both must carry covariances).
pub fn compare(a1: &DatasetAnalysis, a2: &DatasetAnalysis, alpha: f64) -> Result<AlignmentReport> {
    let r = a1.spikes.rank;
    if a2.spikes.rank != r {
        return Err(Error::invalid("datasets were analysed at different ranks"));
    }
    if r < 2 {
        return Err(Error::invalid("the alignability test needs r >= 2"));
    }
    let v1 = a1.v_pi().map_err(|e| e.in_dataset(1))?;
    let v2 = a2.v_pi().map_err(|e| e.in_dataset(2))?;
    let t_stat = t_pi(&a1.profile, &a2.profile, v1, v2)?;
    let df = r - 1;
    let p_value = chi2_sf(t_stat, df);
    let pooled_rank = numerical_rank(&(v1 + v2), DEFAULT_RANK_TOL)?;
    let mut warnings = Vec::new();
    if pooled_rank != df {
        warnings.push(format!(
            "pooled profile covariance has numerical rank {pooled_rank}, expected {df}"
        ));
    }
    let intervals = confidence_intervals(&a1.profile, &a2.profile, v1, v2, alpha)?;
    if intervals.nmsd_degenerate {
        warnings.push("estimated distance is near zero; no nMSD interval reported".into());
    }
    Ok(AlignmentReport {
        t_stat,
        df,
        p_value,
        alpha,
        reject: p_value < alpha,
        pi1: a1.profile.pi.clone(),
        pi2: a2.profile.pi.clone(),
        delta_pi: a1
            .profile
            .pi
            .iter()
            .zip(&a2.profile.pi)
            .map(|(a, b)| a - b)
            .collect(),
        nmsd_hat: nmsd(&a1.profile, &a2.profile)?,
        n_eff: effective_sample_size(a1.n, a2.n),
        pooled_rank,
        intervals,
        warnings,
    })
}

/// Full pipeline on two raw datasets. Errors name the dataset (1 or 2).
pub fn align_test(
    y1: &DataMatrix,
    y2: &DataMatrix,
    opts: &AnalysisOptions,
) -> Result<AlignmentReport> {
    if y1.p() != y2.p() {
        return Err(Error::invalid(format!(
            "datasets have different feature counts: {} vs {}",
            y1.p(),
            y2.p()
        )));
    }
    let mut opts = *opts;
    opts.with_covariance = true;
    let (a1, a2) = rayon::join(|| analyze_dataset(y1, &opts), || analyze_dataset(y2, &opts));
    let a1 = a1.map_err(|e| e.in_dataset(1))?;
    let a2 = a2.map_err(|e| e.in_dataset(2))?;
    compare(&a1, &a2, opts.alpha)
}
