//! Log-log rate fits of trace columns.

use serde::Serialize;

use crate::CliError;

/// Minimum number of points of a fit.
pub const MIN_POINTS: usize = 10;
/// Values are clipped from below before taking logarithms.
pub const CLIP: f64 = 1e-16;
/// Fraction of the iteration range dropped as transient by default.
pub const BURN_IN: f64 = 0.1;

/// Least-squares fit of log(value) = intercept + slope·log(k).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub r2: f64,
    pub points: usize,
    pub k_lo: usize,
    pub k_hi: usize,
}

/// Fits the slope of log|value| against log k over `k_range` (inclusive).
///
/// `None` drops the first 10% of the observed iteration range. Points with
/// k = 0 or a non-finite value are skipped.
pub fn fit_rate(
    points: &[(usize, f64)],
    k_range: Option<(usize, usize)>,
) -> Result<RateFit, CliError> {
    let k_last = points.iter().map(|p| p.0).max().unwrap_or(0);
    let (lo, hi) = k_range.unwrap_or(((BURN_IN * k_last as f64).ceil() as usize, k_last));
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|(k, v)| *k >= lo.max(1) && *k <= hi && v.is_finite())
        .map(|&(k, v)| ((k as f64).ln(), v.abs().max(CLIP).ln()))
        .collect();
    if data.len() < MIN_POINTS {
        return Err(CliError::InsufficientData {
            needed: MIN_POINTS,
            got: data.len(),
        });
    }
    let n = data.len() as f64;
    let mx = data.iter().map(|p| p.0).sum::<f64>() / n;
    let my = data.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = data.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = data.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = data.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(CliError::InsufficientData {
            needed: MIN_POINTS,
            got: 1,
        });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = data
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = if data.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(RateFit {
        slope,
        intercept,
        stderr,
        r2,
        points: data.len(),
        k_lo: lo,
        k_hi: hi,
    })
}
