use serde::{Deserialize, Serialize};

use super::histogram::{build_histogram_in, freedman_diaconis_bins, quartiles};
use super::mixture::fit_gaussian_mixture;
use super::FWHM_PER_SIGMA;
use crate::error::{Error, Result};

pub const MIN_SAMPLES_GAUSSIAN_FIT: usize = 100;
pub const MIN_SAMPLES_DIRECT_FWHM: usize = 1000;

/// Delays further than this many IQRs outside the quartiles are treated as
/// outliers (missed edges, noise triggers) and left out of the histogram.
const OUTLIER_IQRS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JitterMethod {
    /// `2.355 σ` of a Gaussian fitted to the delay histogram.
    #[default]
    GaussianFit,
    /// Interpolated width at half maximum of the smoothed histogram.
    DirectFwhm,
}

/// FWHM timing jitter of a set of delays, in the delays' unit.
pub fn timing_jitter(delays: &[f64], method: JitterMethod) -> Result<f64> {
    let required = match method {
        JitterMethod::GaussianFit => MIN_SAMPLES_GAUSSIAN_FIT,
        JitterMethod::DirectFwhm => MIN_SAMPLES_DIRECT_FWHM,
    };
    if delays.len() < required {
        return Err(Error::TooFewSamples {
            required,
            got: delays.len(),
        });
    }
    if delays.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("delays", "must be finite"));
    }
    let (min, max) = delays
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if max == min {
        return Ok(0.0);
    }
    let (q1, q3) = quartiles(delays);
    let iqr = q3 - q1;
    let (lo, hi) = if iqr > 0.0 {
        (
            (q1 - OUTLIER_IQRS * iqr).max(min),
            (q3 + OUTLIER_IQRS * iqr).min(max),
        )
    } else {
        (min, max)
    };
    let kept: Vec<f64> = delays.iter().copied().filter(|d| *d >= lo && *d <= hi).collect();
    let bins = freedman_diaconis_bins(&kept);
    let hist = build_histogram_in(&kept, bins, lo, hi)?;

    match method {
        JitterMethod::GaussianFit => {
            let fit = fit_gaussian_mixture(&hist, 1, None)?;
            let std = fit.components()[0].std;
            if !(std <= hi - lo) {
                return Err(Error::DegenerateFit(format!(
                    "fitted width {std:e} exceeds the histogram span {:e}",
                    hi - lo
                )));
            }
            Ok(FWHM_PER_SIGMA * std)
        }
        JitterMethod::DirectFwhm => {
            let s = hist.smoothed(5);
            let x = hist.centers();
            let (peak, &top) = s
                .iter()
                .enumerate()
                .fold((0, &s[0]), |b, (i, v)| if *v > *b.1 { (i, v) } else { b });
            let half = top / 2.0;
            let mut l = peak;
            while l > 0 && s[l] > half {
                l -= 1;
            }
            let mut r = peak;
            while r + 1 < s.len() && s[r] > half {
                r += 1;
            }
            let cross = |inside: usize, outside: usize| {
                let (a, b) = (s[inside], s[outside]);
                if a == b {
                    x[outside]
                } else {
                    x[inside] + (x[outside] - x[inside]) * (a - half) / (a - b)
                }
            };
            let left = if s[l] <= half { cross(l + 1, l) } else { x[l] };
            let right = if s[r] <= half { cross(r - 1, r) } else { x[r] };
            Ok(right - left)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn delays(sd: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn gaussian_delays_give_2_355_sigma() {
        let d = delays(40e-12, 100_000, 1);
        for method in [JitterMethod::GaussianFit, JitterMethod::DirectFwhm] {
            let j = timing_jitter(&d, method).unwrap();
            assert!((j - 94.2e-12).abs() / 94.2e-12 < 0.02, "{method:?}: {j:e}");
        }
    }

    #[test]
    fn identical_delays_are_zero() {
        let d = vec![3.2e-9; 500];
        assert_eq!(timing_jitter(&d, JitterMethod::GaussianFit).unwrap(), 0.0);
    }

    #[test]
    fn translation_invariant() {
        let d = delays(40e-12, 10_000, 2);
        let shifted: Vec<f64> = d.iter().map(|v| v + 12.5e-9).collect();
        for method in [JitterMethod::GaussianFit, JitterMethod::DirectFwhm] {
            let a = timing_jitter(&d, method).unwrap();
            let b = timing_jitter(&shifted, method).unwrap();
            assert!((a - b).abs() / a < 1e-4, "{method:?}: {a:e} vs {b:e}");
        }
    }

    #[test]
    fn too_few_samples() {
        let d = delays(1.0, 99, 3);
        assert!(matches!(
            timing_jitter(&d, JitterMethod::GaussianFit),
            Err(Error::TooFewSamples { .. })
        ));
        let d = delays(1.0, 999, 3);
        assert!(timing_jitter(&d, JitterMethod::DirectFwhm).is_err());
    }

    #[test]
    fn outliers_do_not_dominate() {
        let mut d = delays(40e-12, 10_000, 4);
        d.extend([5e-9, -7e-9, 20e-9]);
        let j = timing_jitter(&d, JitterMethod::GaussianFit).unwrap();
        assert!((j - 94.2e-12).abs() / 94.2e-12 < 0.05);
    }
}
