//! Small-sample statistics: moments, least squares, bootstrap intervals.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no samples")]
    EmptySamples,
    #[error("need at least two points, got {0}")]
    InsufficientPoints(usize),
    #[error("x has zero variance")]
    DegenerateX,
    #[error("confidence level {0} outside (0, 1)")]
    BadLevel(String),
}

pub fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

/// Population standard deviation (n denominator).
pub fn population_sd(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / xs.len() as f64).sqrt())
}

/// Standard error of the mean; 0 for a single value.
pub fn standard_error(xs: &[f64]) -> Option<f64> {
    sample_sd(xs).map(|sd| sd / (xs.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub n: usize,
}

/// Ordinary least squares `y = intercept + slope * x`, using centred sums.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<LineFit, StatsError> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return Err(StatsError::InsufficientPoints(n));
    }
    let (xs, ys) = (&xs[..n], &ys[..n]);
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        sxx += dx * dx;
        sxy += dx * (y - my);
    }
    if sxx <= f64::EPSILON * n as f64 * mx.abs().max(1.0) {
        return Err(StatsError::DegenerateX);
    }
    let slope = sxy / sxx;
    Ok(LineFit { slope, intercept: my - slope * mx, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Fraction of the raw samples below zero.
    pub pct_negative: f64,
    pub n: usize,
    pub iterations: usize,
    pub level: f64,
}

pub const DEFAULT_BOOTSTRAP_ITERATIONS: usize = 10_000;

/// How bootstrap interval endpoints are read off the resampled means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// Plain percentile interval.
    #[default]
    Percentile,
    /// Percentile interval at widened tail probabilities, which corrects the
    /// narrowness of the plain interval for small samples.
    ExpandedPercentile,
}

impl std::str::FromStr for CiMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "percentile" => Ok(Self::Percentile),
            "expanded" | "expanded_percentile" => Ok(Self::ExpandedPercentile),
            other => Err(format!("unknown CI method `{other}`")),
        }
    }
}

/// Level actually used for the percentile lookup under `method`.
pub fn effective_level(method: CiMethod, level: f64, n: usize) -> f64 {
    match method {
        CiMethod::Percentile => level,
        CiMethod::ExpandedPercentile if n >= 2 => {
            use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
            let df = (n - 1) as f64;
            let t = StudentsT::new(0.0, 1.0, df).expect("df > 0");
            let z = Normal::new(0.0, 1.0).expect("unit normal");
            let tq = t.inverse_cdf(1.0 - (1.0 - level) / 2.0);
            let tail = z.cdf(-(n as f64 / df).sqrt() * tq);
            1.0 - 2.0 * tail
        }
        CiMethod::ExpandedPercentile => level,
    }
}

/// Percentile bootstrap interval for the mean. Resamples `samples` with
/// replacement `iterations` times; the interval endpoints are order statistics
/// of the resampled means.
pub fn bootstrap_mean_ci<R: Rng + ?Sized>(
    samples: &[f64],
    iterations: usize,
    level: f64,
    rng: &mut R,
) -> Result<BootstrapCi, StatsError> {
    bootstrap_mean_ci_with(samples, iterations, level, CiMethod::Percentile, rng)
}

pub fn bootstrap_mean_ci_with<R: Rng + ?Sized>(
    samples: &[f64],
    iterations: usize,
    level: f64,
    method: CiMethod,
    rng: &mut R,
) -> Result<BootstrapCi, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySamples);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel(level.to_string()));
    }
    let n = samples.len();
    let iterations = iterations.max(1);
    let mut means: Vec<f64> = (0..iterations)
        .map(|_| (0..n).map(|_| samples[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = percentile_bounds(iterations, effective_level(method, level, n));
    Ok(BootstrapCi {
        mean: samples.iter().sum::<f64>() / n as f64,
        ci_low: means[lo],
        ci_high: means[hi],
        pct_negative: samples.iter().filter(|x| **x < 0.0).count() as f64 / n as f64,
        n,
        iterations,
        level,
    })
}

/// Indices of the lower and upper percentile order statistics in a sorted
/// vector of length `b`.
pub fn percentile_bounds(b: usize, level: f64) -> (usize, usize) {
    let tail = (1.0 - level) / 2.0;
    let lo = ((tail * b as f64).floor() as usize).min(b - 1);
    let hi = (((1.0 - tail) * b as f64).ceil() as usize)
        .saturating_sub(1)
        .clamp(lo, b - 1);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moments() {
        let xs = [2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0];
        assert_eq!(mean(&xs), Some(5.0));
        assert_eq!(population_sd(&xs), Some(2.0));
        assert!((sample_sd(&xs).unwrap() - 2.138089935299395).abs() < 1e-12);
        assert_eq!(sample_sd(&[3.0]), Some(0.0));
        assert_eq!(mean(&[]), None);
    }

    #[test]
    fn exact_lines() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let fit = ols(&x, &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.intercept - 6.0).abs() < 1e-12);
        let flat = ols(&x, &[15.0; 5]).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert_eq!(ols(&[1.0], &[1.0]), Err(StatsError::InsufficientPoints(1)));
        assert_eq!(ols(&[2.0, 2.0], &[1.0, 3.0]), Err(StatsError::DegenerateX));
    }

    #[test]
    fn degenerate_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ci = bootstrap_mean_ci(&[-1.0; 7], 1000, 0.95, &mut rng).unwrap();
        assert_eq!((ci.mean, ci.ci_low, ci.ci_high, ci.pct_negative), (-1.0, -1.0, -1.0, 1.0));
        assert_eq!(
            bootstrap_mean_ci(&[], 10, 0.95, &mut rng),
            Err(StatsError::EmptySamples)
        );
    }

    #[test]
    fn expanded_is_wider() {
        let widened = effective_level(CiMethod::ExpandedPercentile, 0.95, 18);
        assert!(widened > 0.95 && widened < 0.99, "{widened}");
        assert_eq!(effective_level(CiMethod::Percentile, 0.95, 18), 0.95);
    }

    #[test]
    fn percentile_indices() {
        assert_eq!(percentile_bounds(10_000, 0.95), (250, 9749));
        assert_eq!(percentile_bounds(1, 0.95), (0, 0));
        let (a, b) = percentile_bounds(10_000, 0.90);
        assert!(a > 250 && b < 9749);
    }
}
