//! Central and noncentral chi-square tails.

use statrs::function::gamma::{gamma_lr, gamma_ur};

use crate::error::{Error, Result};

const QUANTILE_ITERS: usize = 300;
const SERIES_TAIL: f64 = 1e-12;

/// `P(χ²_df > x)`. `df = 0` is the point mass at zero.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if !(x > 0.0) {
        return 1.0;
    }
    if df == 0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

pub fn chi2_cdf(x: f64, df: usize) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    if df == 0 || x.is_infinite() {
        return 1.0;
    }
    gamma_lr(df as f64 / 2.0, x / 2.0)
}

/// Inverse of the chi-square CDF.
pub fn chi2_quantile(q: f64, df: usize) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!(
            "quantile level must lie in (0, 1), got {q}"
        )));
    }
    if df == 0 {
        return Err(Error::invalid("chi-square quantile needs df >= 1"));
    }
    // Bisect on whichever tail is small to keep relative precision near 0 and 1.
    let upper = q > 0.5;
    let target = if upper { 1.0 - q } else { q };
    let below = |x: f64| {
        if upper {
            chi2_sf(x, df) > target
        } else {
            chi2_cdf(x, df) < target
        }
    };
    let mut hi = (df as f64).max(1.0);
    while below(hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..QUANTILE_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `P(χ²_df(λ) > x)` as a Poisson(λ/2) mixture of central tails.
///
/// Terms are summed outward from the Poisson mode until a geometric bound on
/// the unvisited Poisson mass falls below `1e-12`. Central tails are at most
/// 1, so that bounds the truncation error.
pub fn noncentral_chi2_sf(x: f64, df: usize, lambda_nc: f64) -> Result<f64> {
    if !(lambda_nc >= 0.0) || !lambda_nc.is_finite() {
        return Err(Error::invalid(format!(
            "noncentrality must be finite and >= 0, got {lambda_nc}"
        )));
    }
    if lambda_nc == 0.0 {
        return Ok(chi2_sf(x, df));
    }
    let mu = lambda_nc / 2.0;
    let mode = mu.floor() as u64;
    let weight = |k: u64| (-mu + k as f64 * mu.ln() - ln_factorial(k)).exp();
    let mut total = 0.0;
    // Below the mode the weights fall at least geometrically with ratio k/μ.
    for k in (0..=mode).rev() {
        let w = weight(k);
        total += w * chi2_sf(x, df + 2 * k as usize);
        let ratio = k as f64 / mu;
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < SERIES_TAIL / 2.0 {
            break;
        }
    }
    // Above it with ratio μ/(k+1).
    let mut k = mode + 1;
    loop {
        let w = weight(k);
        total += w * chi2_sf(x, df + 2 * k as usize);
        let ratio = mu / (k + 1) as f64;
        if ratio < 1.0 && w * ratio / (1.0 - ratio) < SERIES_TAIL / 2.0 {
            break;
        }
        k += 1;
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Power of the level-`α` chi-square test against noncentrality `λ`.
pub fn noncentral_chi2_power(lambda_nc: f64, df: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let crit = chi2_quantile(1.0 - alpha, df)?;
    noncentral_chi2_sf(crit, df, lambda_nc)
}

fn ln_factorial(k: u64) -> f64 {
    statrs::function::gamma::ln_gamma(k as f64 + 1.0)
}
