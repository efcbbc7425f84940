//! Single-dataset pipeline: noise map, debiased spikes, profile and its covariance.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{sample_covariance, sym_eig, DataMatrix};
use crate::noise::{estimate_noise_with, NoiseModel, ResidualCorrection, DEFAULT_PENALTY_C};
use crate::spikes::{estimate_spikes_from, profile, SpectralProfile, SpikeSet};
use crate::uncertainty::{estimate_covariances, CovarianceEstimates, SignalPlugin};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalysisOptions {
    pub rank: usize,
    pub penalty_c: f64,
    /// Subtract the feature means once before anything else.
    pub center: bool,
    pub alpha: f64,
    pub plugin: SignalPlugin,
    pub residual_correction: ResidualCorrection,
    /// Skip the covariance blocks when only point estimates are needed.
    pub with_covariance: bool,
}

impl AnalysisOptions {
    pub fn new(rank: usize) -> Self {
        AnalysisOptions {
            rank,
            penalty_c: DEFAULT_PENALTY_C,
            center: true,
            alpha: 0.05,
            plugin: SignalPlugin::default(),
            residual_correction: ResidualCorrection::default(),
            with_covariance: true,
        }
    }

    pub fn uncentered(mut self) -> Self {
        self.center = false;
        self
    }
}

#[derive(Debug, Clone)]
pub struct DatasetAnalysis {
    pub p: usize,
    pub n: usize,
    pub noise: NoiseModel,
    pub spikes: SpikeSet,
    pub profile: SpectralProfile,
    /// Top-r sample eigenvectors, `p × r`.
    pub eigvecs: DMatrix<f64>,
    pub covariance: Option<CovarianceEstimates>,
}

impl DatasetAnalysis {
    /// `V̂_Π`; errors if the analysis ran without covariances.
    pub fn v_pi(&self) -> Result<&DMatrix<f64>> {
        self.covariance
            .as_ref()
            .map(|c| &c.v_pi)
            .ok_or_else(|| Error::invalid("analysis was run without covariance estimates"))
    }
}

pub fn analyze_dataset(y: &DataMatrix, opts: &AnalysisOptions) -> Result<DatasetAnalysis> {
    let r = opts.rank;
    if r == 0 || r >= y.p() {
        return Err(Error::invalid(format!(
            "rank must satisfy 1 <= r < p = {}, got {r}",
            y.p()
        )));
    }
    let centered;
    let y = if opts.center {
        centered = y.centered();
        &centered
    } else {
        y
    };
    let q = sample_covariance(y, false)?;
    let eig = sym_eig(&q)?;
    let noise = estimate_noise_with(y, &q, &eig, r, opts.penalty_c, opts.residual_correction)?;
    let spikes = estimate_spikes_from(&eig, y.n(), &noise, r)?;
    let profile = profile(&spikes.d2_hat)?;
    let eigvecs = eig.top_vectors(r);
    let covariance = if opts.with_covariance {
        Some(estimate_covariances(
            y,
            &eigvecs,
            &spikes,
            &noise,
            opts.plugin,
        )?)
    } else {
        None
    };
    Ok(DatasetAnalysis {
        p: y.p(),
        n: y.n(),
        noise,
        spikes,
        profile,
        eigvecs,
        covariance,
    })
}
