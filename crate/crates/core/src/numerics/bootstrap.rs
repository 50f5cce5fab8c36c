use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::rng::rng_for;

/// Percentile bootstrap interval of `statistic` over resampled `samples`.
///
/// Each replicate draws `samples.len()` items with replacement. Replicates whose
/// statistic is non-finite (e.g. a failed fit) are dropped; if more than half
/// fail the interval is reported as degenerate.
pub fn bootstrap_ci<T: Clone>(
    samples: &[T],
    statistic: impl Fn(&[T]) -> f64,
    b: usize,
    level: f64,
    rng_seed: u64,
) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Input(format!("bootstrap needs at least 2 samples, got {}", samples.len())));
    }
    if b < 100 {
        return Err(Error::Config(format!("bootstrap needs B >= 100, got {b}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level must lie in (0, 1), got {level}")));
    }
    let mut rng = rng_for(rng_seed, &[0xb007]);
    let n = samples.len();
    let mut resample = Vec::with_capacity(n);
    let mut stats = Vec::with_capacity(b);
    for _ in 0..b {
        resample.clear();
        resample.extend((0..n).map(|_| samples[rng.random_range(0..n)].clone()));
        let s = statistic(&resample);
        if s.is_finite() {
            stats.push(s);
        }
    }
    if stats.len() * 2 < b {
        return Err(Error::DegenerateFit(format!("only {} of {b} bootstrap replicates were finite", stats.len())));
    }
    stats.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    Ok((quantile(&stats, alpha), quantile(&stats, 1.0 - alpha)))
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
