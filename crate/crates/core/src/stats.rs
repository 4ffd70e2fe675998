//! Ensemble statistics: power means, jackknife errors and line fits.

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn std_error(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// `(E|X|^m)^{1/m}` estimated from magnitudes, with a leave-one-out
/// jackknife standard error.
pub fn lm_norm(magnitudes: &[f64], m: f64) -> Result<Estimate> {
    let n = magnitudes.len();
    if n < 2 {
        return Err(Error::EmptyEnsemble);
    }
    let powers: Vec<f64> = magnitudes.iter().map(|x| x.abs().powf(m)).collect();
    let total: f64 = powers.iter().sum();
    let value = (total / n as f64).powf(1.0 / m);
    let loo: Vec<f64> = powers
        .iter()
        .map(|p| ((total - p).max(0.0) / (n - 1) as f64).powf(1.0 / m))
        .collect();
    Ok(Estimate { value, stderr: jackknife_se(&loo) })
}

/// Jackknife standard error from leave-one-out (or leave-group-out)
/// replicates.
pub fn jackknife_se(replicates: &[f64]) -> f64 {
    let g = replicates.len() as f64;
    let m = mean(replicates);
    ((g - 1.0) / g * replicates.iter().map(|r| (r - m) * (r - m)).sum::<f64>()).sqrt()
}

/// Delete-group jackknife over `n` items split into `groups` contiguous
/// blocks. `estimate(excluded)` must compute the statistic on all items
/// outside `excluded` (an empty range means the full sample).
pub fn group_jackknife<F>(n: usize, groups: usize, estimate: F) -> Result<Estimate>
where
    F: Fn(Range<usize>) -> Result<f64>,
{
    let groups = groups.min(n);
    if groups < 2 {
        return Err(Error::EmptyEnsemble);
    }
    let value = estimate(0..0)?;
    let reps = (0..groups)
        .map(|g| estimate(g * n / groups..(g + 1) * n / groups))
        .collect::<Result<Vec<_>>>()?;
    Ok(Estimate { value, stderr: jackknife_se(&reps) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
pub fn line_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientResolution("line fit needs two points".into()));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientResolution("abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n as f64 - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(LineFit { slope, intercept, slope_stderr })
}
