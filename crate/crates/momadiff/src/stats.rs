//! Repetition summaries with percentile-bootstrap confidence intervals.

use momadiff_core::rng::{index, stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    /// `self <= other`, or indistinguishable from it.
    pub fn le_within_ci(&self, other: &Interval) -> bool {
        self.mean <= other.mean || self.overlaps(other)
    }
}

/// 95% percentile-bootstrap interval of the mean of `values`.
pub fn bootstrap_mean(values: &[f64], resamples: usize, seed: u64) -> Interval {
    assert!(!values.is_empty(), "bootstrap needs at least one value");
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 || resamples == 0 {
        return Interval { mean, lo: mean, hi: mean };
    }
    let mut rng = stream(seed, Stream::Metric, 0xB007, n as u64);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[index(&mut rng, n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Interval {
        mean,
        lo: at(0.025),
        hi: at(0.975),
    }
}
