use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on the Freedman–Diaconis bin count.
pub const MIN_AUTO_BINS: usize = 50;
const MAX_AUTO_BINS: usize = 20_000;

/// Uniform-bin histogram of pulse amplitudes (or any scalar).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeHistogram {
    bin_edges: Vec<f64>,
    counts: Vec<u64>,
}

impl AmplitudeHistogram {
    pub fn new(bin_edges: Vec<f64>, counts: Vec<u64>) -> Result<Self> {
        if bin_edges.len() < 2 || counts.len() + 1 != bin_edges.len() {
            return Err(Error::invalid(
                "histogram",
                "need len(counts) = len(edges) - 1 >= 1",
            ));
        }
        if bin_edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("bin_edges", "must be strictly increasing"));
        }
        Ok(Self { bin_edges, counts })
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_edges[1] - self.bin_edges[0]
    }

    pub fn centers(&self) -> Vec<f64> {
        self.bin_edges
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn nonzero_bins(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Count-weighted mean of bin centers.
    pub fn mean(&self) -> f64 {
        let total = self.total() as f64;
        self.centers()
            .iter()
            .zip(&self.counts)
            .map(|(x, &c)| x * c as f64)
            .sum::<f64>()
            / total
    }

    /// Centered moving average of the counts over `width` bins (truncated at
    /// the ends).
    pub fn smoothed(&self, width: usize) -> Vec<f64> {
        let half = width / 2;
        let n = self.counts.len();
        (0..n)
            .map(|i| {
                let lo = i.saturating_sub(half);
                let hi = (i + half + 1).min(n);
                self.counts[lo..hi].iter().sum::<u64>() as f64 / (hi - lo) as f64
            })
            .collect()
    }
}

/// Uniform bins spanning `[min, max]` of the data. A single distinct value
/// gets a unit-wide range centred on it.
pub fn build_histogram(values: &[f64], bin_count: usize) -> Result<AmplitudeHistogram> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
    build_histogram_in(values, bin_count, lo, hi)
}

/// Uniform bins on `[lo, hi]`; values outside are dropped and the top edge
/// is inclusive.
pub fn build_histogram_in(
    values: &[f64],
    bin_count: usize,
    lo: f64,
    hi: f64,
) -> Result<AmplitudeHistogram> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if bin_count < 2 {
        return Err(Error::invalid("bin_count", "must be at least 2"));
    }
    if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid("range", "need finite lo < hi"));
    }
    let width = (hi - lo) / bin_count as f64;
    let edges: Vec<f64> = (0..=bin_count)
        .map(|i| if i == bin_count { hi } else { lo + i as f64 * width })
        .collect();
    let mut counts = vec![0u64; bin_count];
    for &v in values {
        if !(v >= lo && v <= hi) {
            continue;
        }
        let i = (((v - lo) / width) as usize).min(bin_count - 1);
        counts[i] += 1;
    }
    AmplitudeHistogram::new(edges, counts)
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[i]
    }
}

/// Quartiles of `values`.
pub(crate) fn quartiles(values: &[f64]) -> (f64, f64) {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    (quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75))
}

/// Freedman–Diaconis bin count over the data range, at least
/// [`MIN_AUTO_BINS`].
pub fn freedman_diaconis_bins(values: &[f64]) -> usize {
    if values.len() < 2 {
        return MIN_AUTO_BINS;
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let (q1, q3) = quartiles(values);
    let width = 2.0 * (q3 - q1) / (values.len() as f64).cbrt();
    if !(width > 0.0) || !(hi > lo) {
        return MIN_AUTO_BINS;
    }
    (((hi - lo) / width).ceil() as usize).clamp(MIN_AUTO_BINS, MAX_AUTO_BINS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_value() {
        for bins in [2, 5, 50] {
            let h = build_histogram(&[3.3], bins).unwrap();
            assert_eq!(h.total(), 1);
            assert_eq!(h.nonzero_bins(), 1);
        }
    }

    #[test]
    fn direct_binning() {
        let h = build_histogram(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(h.counts(), &[2, 2]);
        assert_eq!(h.bin_edges(), &[0.0, 1.5, 3.0]);
    }

    #[test]
    fn errors() {
        assert!(matches!(build_histogram(&[], 10), Err(Error::EmptyInput)));
        assert!(build_histogram(&[1.0, 2.0], 1).is_err());
    }

    #[test]
    fn histogram_mean_tracks_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = Normal::new(5.0, 0.5).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| normal.sample(&mut rng)).collect();
        let bins = freedman_diaconis_bins(&xs);
        assert!(bins >= MIN_AUTO_BINS);
        let h = build_histogram(&xs, bins).unwrap();
        assert_eq!(h.total(), xs.len() as u64);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let se = 0.5 / (xs.len() as f64).sqrt();
        assert!((h.mean() - mean).abs() < 3.0 * se);
    }
}
