//! Synthetic ellipsoid-surface signals under four-block heteroskedastic
//! noise, and Monte Carlo drivers for null calibration and power.
//!
//! Each trial draws a Haar frame `V` shared by both datasets, latent columns
//! `xⱼ = diag(D)vⱼ` with `vⱼ` uniform on the sphere, and
//! `Y = √r·V·X + Σ^{1/2}Z` with Gaussian `Z`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::alignability::{
    align_test, chi2_cdf, chi2_quantile, noncentral_chi2_power, AlignmentReport,
};
use crate::analysis::{analyze_dataset, AnalysisOptions};
use crate::error::{Error, Result};
use crate::linalg::{pseudoinverse, random_orthonormal, DataMatrix, DEFAULT_RANK_TOL};
use crate::noise::{ResidualCorrection, DEFAULT_PENALTY_C};
use crate::seed::{derive_seed, rng_from_seed};
use crate::uncertainty::SignalPlugin;

pub const CALIBRATION_QUANTILES: [f64; 7] = [0.01, 0.10, 0.25, 0.50, 0.75, 0.90, 0.99];
pub const DEFAULT_C_VALUES: [f64; 6] = [1.00, 1.05, 1.10, 1.20, 1.30, 1.50];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub p: usize,
    pub n1: usize,
    pub n2: usize,
    pub r: usize,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    /// Noise variances on the four blocks of dataset 1.
    pub noise_levels_1: Vec<f64>,
    pub noise_levels_2: Vec<f64>,
    pub penalty_c: f64,
    pub alpha: f64,
    pub n_rep: usize,
    pub master_seed: u64,
    /// Null replicates averaged for the theoretical noncentrality.
    pub pilot_reps: usize,
    pub plugin: SignalPlugin,
    pub residual_correction: ResidualCorrection,
    pub center: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            p: 100,
            n1: 1500,
            n2: 1500,
            r: 3,
            d1: vec![7.0, 6.0, 5.0],
            d2: vec![7.0, 6.0, 5.0],
            noise_levels_1: vec![3.0, 4.0, 5.0, 6.0],
            noise_levels_2: vec![2.5, 3.0, 6.0, 4.5],
            penalty_c: DEFAULT_PENALTY_C,
            alpha: 0.05,
            n_rep: 800,
            master_seed: 20240917,
            pilot_reps: 50,
            plugin: SignalPlugin::default(),
            residual_correction: ResidualCorrection::default(),
            center: false,
        }
    }
}

impl SimConfig {
    /// The power-sweep design: `N₁ = N₂ = 3000`, 600 replicates per `c`.
    pub fn power_design() -> Self {
        SimConfig {
            n1: 3000,
            n2: 3000,
            n_rep: 600,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if self.r == 0 || self.p < 4 || self.r >= self.p || self.n1 < 2 || self.n2 < 2 {
            return Err(Error::invalid("need p >= 4, 1 <= r < p and N >= 2"));
        }
        if self.d1.len() != self.r || self.d2.len() != self.r {
            return Err(Error::invalid("semi-axes must have length r"));
        }
        if self.noise_levels_1.len() != 4 || self.noise_levels_2.len() != 4 {
            return Err(Error::invalid("noise levels must have length 4"));
        }
        if !(positive(&self.d1)
            && positive(&self.d2)
            && positive(&self.noise_levels_1)
            && positive(&self.noise_levels_2))
        {
            return Err(Error::invalid(
                "semi-axes and noise levels must be positive",
            ));
        }
        if !(self.penalty_c > 0.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("need penalty_c > 0 and alpha in (0, 1)"));
        }
        Ok(())
    }

    pub fn n(&self, which: usize) -> usize {
        if which == 1 {
            self.n1
        } else {
            self.n2
        }
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            rank: self.r,
            penalty_c: self.penalty_c,
            center: self.center,
            alpha: self.alpha,
            plugin: self.plugin,
            residual_correction: self.residual_correction,
            with_covariance: true,
        }
    }

    /// Applies one `key = value` setting. Lists are comma separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad value for {key}: {v:?}")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<f64>> {
            v.split(',').map(|x| num(key, x)).collect()
        }
        match key.trim() {
            "p" => self.p = num(key, value)?,
            "n" => {
                self.n1 = num(key, value)?;
                self.n2 = self.n1;
            }
            "n1" => self.n1 = num(key, value)?,
            "n2" => self.n2 = num(key, value)?,
            "r" => self.r = num(key, value)?,
            "d1" => self.d1 = list(key, value)?,
            "d2" => self.d2 = list(key, value)?,
            "noise_levels_1" => self.noise_levels_1 = list(key, value)?,
            "noise_levels_2" => self.noise_levels_2 = list(key, value)?,
            "penalty_c" => self.penalty_c = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "n_rep" | "reps" => self.n_rep = num(key, value)?,
            "master_seed" | "seed" => self.master_seed = num(key, value)?,
            "pilot_reps" => self.pilot_reps = num(key, value)?,
            "center" => self.center = num(key, value)?,
            "plugin" => {
                self.plugin = match value.trim() {
                    "debiased_spikes" => SignalPlugin::DebiasedSpikes,
                    "sample_rank_fit" => SignalPlugin::SampleRankFit,
                    other => return Err(Error::invalid(format!("unknown plugin {other:?}"))),
                }
            }
            "residual_correction" => {
                self.residual_correction = match value.trim() {
                    "projection_loss" => ResidualCorrection::ProjectionLoss,
                    "none" => ResidualCorrection::None,
                    other => {
                        return Err(Error::invalid(format!(
                            "unknown residual correction {other:?}"
                        )))
                    }
                }
            }
            other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }
}

/// Parses `key = value` lines; `#` starts a comment. Unknown keys are
/// returned rather than rejected so callers can layer their own settings.
pub fn parse_config(text: &str, cfg: &mut SimConfig) -> Result<Vec<(String, String)>> {
    let mut extra = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i as u64 + 1,
            col: None,
            message: "expected key = value".into(),
        })?;
        match cfg.set(k, v) {
            Ok(()) => {}
            Err(Error::InvalidInput(m)) if m.starts_with("unknown config key") => {
                extra.push((k.trim().to_string(), v.trim().to_string()))
            }
            Err(Error::InvalidInput(m)) => {
                return Err(Error::Parse {
                    line: i as u64 + 1,
                    col: None,
                    message: m,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(extra)
}

/// `⌊p/3⌋, ⌊p/6⌋, ⌊p/6⌋` and the remainder.
pub fn block_sizes(p: usize) -> [usize; 4] {
    let (a, b) = (p / 3, p / 6);
    [a, b, b, p - a - 2 * b]
}

pub fn noise_vector(p: usize, levels: &[f64]) -> Vec<f64> {
    block_sizes(p)
        .iter()
        .zip(levels)
        .flat_map(|(&len, &v)| std::iter::repeat_n(v, len))
        .collect()
}

/// `D²/ΣD²`.
pub fn population_profile(d: &[f64]) -> Vec<f64> {
    let total: f64 = d.iter().map(|x| x * x).sum();
    d.iter().map(|x| x * x / total).collect()
}

/// Semi-axes of the alternative `√diag(c, 1, …, 1)·D`.
pub fn stretched_axes(d: &[f64], c: f64) -> Vec<f64> {
    let mut out = d.to_vec();
    out[0] *= c.sqrt();
    out
}

pub fn population_distance(d1: &[f64], d2: &[f64]) -> f64 {
    population_profile(d1)
        .iter()
        .zip(population_profile(d2))
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// One dataset split into its parts.
#[derive(Debug, Clone)]
pub struct SimDraw {
    pub frame: DMatrix<f64>,
    pub signal: DMatrix<f64>,
    pub noise: DMatrix<f64>,
}

impl SimDraw {
    pub fn data(&self) -> DataMatrix {
        DataMatrix::new(&self.signal + &self.noise).expect("simulated data is finite")
    }
}

/// Draws dataset `which` (1 or 2) of the trial with seed `seed`.
///
/// The frame comes from child seed 0 and is shared by both datasets; dataset
/// `which` uses child seed `which` for its latent columns and noise.
pub fn generate_parts(cfg: &SimConfig, which: usize, seed: u64) -> Result<SimDraw> {
    if which != 1 && which != 2 {
        return Err(Error::invalid("dataset index must be 1 or 2"));
    }
    cfg.validate()?;
    let (p, r, n) = (cfg.p, cfg.r, cfg.n(which));
    let (d, levels) = if which == 1 {
        (&cfg.d1, &cfg.noise_levels_1)
    } else {
        (&cfg.d2, &cfg.noise_levels_2)
    };
    let frame = random_orthonormal(p, r, derive_seed(seed, 0))?;
    let mut rng = rng_from_seed(derive_seed(seed, which as u64));
    let mut latent = DMatrix::zeros(r, n);
    for mut col in latent.column_iter_mut() {
        loop {
            for v in col.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
                break;
            }
        }
        for (v, &axis) in col.iter_mut().zip(d.iter()) {
            *v *= axis;
        }
    }
    let signal = &frame * latent * (r as f64).sqrt();
    let scale: Vec<f64> = noise_vector(p, levels).iter().map(|s| s.sqrt()).collect();
    let mut noise = DMatrix::zeros(p, n);
    for mut col in noise.column_iter_mut() {
        for (v, s) in col.iter_mut().zip(&scale) {
            let z: f64 = rng.sample(StandardNormal);
            *v = s * z;
        }
    }
    Ok(SimDraw {
        frame,
        signal,
        noise,
    })
}

pub fn generate_dataset(cfg: &SimConfig, which: usize, seed: u64) -> Result<DataMatrix> {
    generate_parts(cfg, which, seed).map(|d| d.data())
}

/// Seed handed to trial `t` of a run with seed `run_seed`.
pub fn trial_seed(run_seed: u64, t: usize) -> u64 {
    derive_seed(run_seed, t as u64)
}

fn run_trials(cfg: &SimConfig, run_seed: u64, n_rep: usize) -> Vec<Result<AlignmentReport>> {
    let opts = cfg.analysis_options();
    (0..n_rep)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(run_seed, t);
            let y1 = generate_dataset(cfg, 1, seed)?;
            let y2 = generate_dataset(cfg, 2, seed)?;
            align_test(&y1, &y2, &opts)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantileRow {
    pub q: f64,
    pub empirical: f64,
    pub theoretical: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationReport {
    pub n_rep: usize,
    pub n_failed: usize,
    pub df: usize,
    pub alpha: f64,
    pub size: Option<f64>,
    pub quantiles: Vec<QuantileRow>,
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
    pub t_stats: Vec<f64>,
    pub failures: Vec<String>,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn sample_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One-sample Kolmogorov–Smirnov statistic against a continuous CDF.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS p-value with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = sign * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Null calibration: `n_rep` trials of the two-sample test with `cfg.d1`, `cfg.d2`.
pub fn run_null_calibration(cfg: &SimConfig) -> Result<CalibrationReport> {
    cfg.validate()?;
    let df = cfg.r - 1;
    let mut t_stats = Vec::with_capacity(cfg.n_rep);
    let mut failures = Vec::new();
    for res in run_trials(cfg, cfg.master_seed, cfg.n_rep) {
        match res {
            Ok(rep) => t_stats.push(rep.t_stat),
            Err(e) if e.is_numerical() => failures.push(e.to_string()),
            Err(e) => return Err(e),
        }
    }
    let mut sorted = t_stats.clone();
    sorted.sort_by(f64::total_cmp);
    let (size, quantiles, ks_statistic, ks_p_value) = if sorted.is_empty() {
        (None, Vec::new(), None, None)
    } else {
        let crit = chi2_quantile(1.0 - cfg.alpha, df)?;
        let size = sorted.iter().filter(|&&t| t > crit).count() as f64 / sorted.len() as f64;
        let quantiles = CALIBRATION_QUANTILES
            .iter()
            .map(|&q| {
                Ok(QuantileRow {
                    q,
                    empirical: sample_quantile(&sorted, q),
                    theoretical: chi2_quantile(q, df)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let d = ks_statistic(&sorted, |x| chi2_cdf(x, df));
        (
            Some(size),
            quantiles,
            Some(d),
            Some(ks_p_value(d, sorted.len())),
        )
    };
    Ok(CalibrationReport {
        n_rep: cfg.n_rep,
        n_failed: failures.len(),
        df,
        alpha: cfg.alpha,
        size,
        quantiles,
        ks_statistic,
        ks_p_value,
        t_stats,
        failures,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerRow {
    pub c: f64,
    pub population_distance: f64,
    pub lambda_nc: f64,
    pub theoretical_power: f64,
    pub empirical_power: Option<f64>,
    /// Fraction of trials whose nMSD interval covers the population distance.
    pub nmsd_coverage: Option<f64>,
    pub mean_t_over_n_eff: Option<f64>,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerReport {
    pub n_rep: usize,
    pub pilot_reps: usize,
    pub alpha: f64,
    pub df: usize,
    pub rows: Vec<PowerRow>,
}

/// Average `V̂_Δ = V̂_Π,₁ + V̂_Π,₂` over `pilot_reps` null trials.
pub fn pilot_delta_covariance(cfg: &SimConfig) -> Result<Option<DMatrix<f64>>> {
    let mut null = cfg.clone();
    null.d2 = null.d1.clone();
    let opts = null.analysis_options();
    let seed = derive_seed(cfg.master_seed, u64::MAX);
    let parts: Vec<Result<DMatrix<f64>>> = (0..cfg.pilot_reps)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t);
            let a1 = analyze_dataset(&generate_dataset(&null, 1, s)?, &opts)?;
            let a2 = analyze_dataset(&generate_dataset(&null, 2, s)?, &opts)?;
            Ok(a1.v_pi()? + a2.v_pi()?)
        })
        .collect();
    let mut sum = DMatrix::zeros(cfg.r, cfg.r);
    let mut used = 0usize;
    for part in parts {
        match part {
            Ok(v) => {
                sum += v;
                used += 1;
            }
            Err(e) if e.is_numerical() => {}
            Err(e) => return Err(e),
        }
    }
    Ok((used > 0).then(|| sum / used as f64))
}

/// Power sweep over `D₂ = √diag(c, 1, …, 1)·D₁`.
pub fn run_power_sweep(cfg: &SimConfig, c_values: &[f64]) -> Result<PowerReport> {
    cfg.validate()?;
    if c_values.iter().any(|c| !(*c > 0.0)) {
        return Err(Error::invalid("c values must be positive"));
    }
    let df = cfg.r - 1;
    let pilot = pilot_delta_covariance(cfg)?;
    let pilot_pinv = pilot
        .as_ref()
        .map(|v| pseudoinverse(v, DEFAULT_RANK_TOL))
        .transpose()?;
    let mut rows = Vec::with_capacity(c_values.len());
    for (k, &c) in c_values.iter().enumerate() {
        let mut alt = cfg.clone();
        alt.d2 = stretched_axes(&cfg.d1, c);
        let pop1 = population_profile(&alt.d1);
        let pop2 = population_profile(&alt.d2);
        let delta = DVector::from_iterator(cfg.r, pop1.iter().zip(&pop2).map(|(a, b)| a - b));
        let distance = delta.norm();
        let lambda_nc = match &pilot_pinv {
            Some(pinv) => (delta.transpose() * pinv * &delta)[(0, 0)].max(0.0),
            None => f64::NAN,
        };
        let theoretical_power = if lambda_nc.is_finite() {
            noncentral_chi2_power(lambda_nc, df, cfg.alpha)?
        } else {
            f64::NAN
        };

        let run_seed = derive_seed(cfg.master_seed, k as u64);
        let (mut rejected, mut covered, mut with_ci, mut t_scaled) = (0usize, 0usize, 0usize, 0.0);
        let mut n_ok = 0usize;
        let mut n_failed = 0usize;
        for res in run_trials(&alt, run_seed, cfg.n_rep) {
            match res {
                Ok(rep) => {
                    n_ok += 1;
                    rejected += rep.reject as usize;
                    t_scaled += rep.t_stat / rep.n_eff;
                    if let Some(iv) = rep.intervals.nmsd {
                        with_ci += 1;
                        covered += iv.contains(distance) as usize;
                    }
                }
                Err(e) if e.is_numerical() => n_failed += 1,
                Err(e) => return Err(e),
            }
        }
        let frac = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        rows.push(PowerRow {
            c,
            population_distance: distance,
            lambda_nc,
            theoretical_power,
            empirical_power: frac(rejected, n_ok),
            nmsd_coverage: frac(covered, with_ci),
            mean_t_over_n_eff: (n_ok > 0).then(|| t_scaled / n_ok as f64),
            n_ok,
            n_failed,
        });
    }
    Ok(PowerReport {
        n_rep: cfg.n_rep,
        pilot_reps: cfg.pilot_reps,
        alpha: cfg.alpha,
        df,
        rows,
    })
}
