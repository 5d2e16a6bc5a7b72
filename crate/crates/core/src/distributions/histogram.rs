use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest number of bins accepted by [`make_histogram`].
pub const MIN_BINS: usize = 4;
/// Default bin count, matching the granularity of the published plots.
pub const DEFAULT_BINS: usize = 64;

/// Uniform-bin histogram with counts and a density normalization.
///
/// `density[i] = counts[i] / (total · bin_width)`, where `total` counts every
/// sample, inside the bounds or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
    pub total: u64,
}

impl Histogram {
    pub fn nbins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.nbins() as f64
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.bin_width()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.nbins()).map(|i| self.bin_center(i)).collect()
    }

    pub fn in_bounds(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn nonempty_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Count-weighted mean and variance of the bin centers.
    pub(crate) fn moments(&self) -> (f64, f64) {
        let n = self.in_bounds() as f64;
        let mean = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * self.bin_center(i))
            .sum::<f64>()
            / n;
        let var = self
            .counts
            .iter()
            .enumerate()
            .map(|(i, &c)| c as f64 * (self.bin_center(i) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var)
    }

    /// Mean and variance of the log bin centers, ignoring non-positive centers.
    pub(crate) fn log_moments(&self) -> Option<(f64, f64)> {
        let pts: Vec<(f64, f64)> = self
            .counts
            .iter()
            .enumerate()
            .filter(|&(i, &c)| c > 0 && self.bin_center(i) > 0.0)
            .map(|(i, &c)| (c as f64, self.bin_center(i).ln()))
            .collect();
        let n: f64 = pts.iter().map(|p| p.0).sum();
        if n == 0.0 {
            return None;
        }
        let mean = pts.iter().map(|p| p.0 * p.1).sum::<f64>() / n;
        let var = pts.iter().map(|p| p.0 * (p.1 - mean).powi(2)).sum::<f64>() / n;
        Some((mean, var))
    }
}

/// Bins `samples` uniformly.
///
/// Without `bounds` the range is `[0, max · (1 + 1e-9)]`. Samples must be
/// finite and nonnegative.
pub fn make_histogram(
    samples: &[f64],
    nbins: usize,
    bounds: Option<(f64, f64)>,
) -> Result<Histogram> {
    if samples.is_empty() {
        return Err(Error::argument("cannot histogram an empty sample"));
    }
    if nbins < MIN_BINS {
        return Err(Error::argument(format!(
            "need at least {MIN_BINS} bins, got {nbins}"
        )));
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::argument(format!(
            "samples must be finite and >= 0, got {x}"
        )));
    }
    let (lo, hi) = match bounds {
        Some((lo, hi)) => {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::argument(format!("invalid bounds [{lo}, {hi}]")));
            }
            (lo, hi)
        }
        None => {
            let max = samples.iter().copied().fold(0.0, f64::max);
            (0.0, (max * (1.0 + 1e-9)).max(f64::MIN_POSITIVE * 1e3))
        }
    };
    let width = (hi - lo) / nbins as f64;
    let mut counts = vec![0u64; nbins];
    for &x in samples {
        if x < lo || x > hi {
            continue;
        }
        let i = (((x - lo) / width) as usize).min(nbins - 1);
        counts[i] += 1;
    }
    let total = samples.len() as u64;
    let density = counts
        .iter()
        .map(|&c| c as f64 / (total as f64 * width))
        .collect();
    Ok(Histogram {
        lo,
        hi,
        counts,
        density,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mass(h: &Histogram) -> f64 {
        h.density.iter().sum::<f64>() * h.bin_width()
    }

    #[test]
    fn constant_sample_lands_in_last_bin() {
        let h = make_histogram(&[1.0; 4], 4, None).unwrap();
        assert_eq!(h.counts, vec![0, 0, 0, 4]);
        assert!((mass(&h) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_samples_reduce_mass() {
        let h = make_histogram(&[0.5, 1.5, 2.5, 9.0], 4, Some((0.0, 4.0))).unwrap();
        assert_eq!(h.in_bounds(), 3);
        assert!((mass(&h) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(make_histogram(&[], 8, None).is_err());
        assert!(make_histogram(&[1.0], 3, None).is_err());
        assert!(make_histogram(&[-1.0], 8, None).is_err());
        assert!(make_histogram(&[f64::NAN], 8, None).is_err());
        assert!(make_histogram(&[1.0], 8, Some((2.0, 1.0))).is_err());
    }

    #[test]
    fn all_zero_sample_still_has_positive_width() {
        let h = make_histogram(&[0.0; 5], 4, None).unwrap();
        assert!(h.hi > h.lo);
        assert_eq!(h.counts[0], 5);
    }
}
