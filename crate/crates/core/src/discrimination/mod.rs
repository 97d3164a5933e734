//! Event extraction and the statistics built on it: amplitude histograms,
//! multi-Gaussian fits, normalized peak spacing, timing jitter and
//! fired-pixel statistics.

mod histogram;
mod mixture;
mod peaks;
mod photon_stats;
mod timing;

pub use histogram::{build_histogram, build_histogram_in, freedman_diaconis_bins, AmplitudeHistogram};
pub use mixture::{
    fit_gaussian_mixture, initial_components, GaussianComponent, MixtureFit, MAX_FIT_ITERATIONS,
};
pub use peaks::{
    detect_peak, detect_peak_or_sample, last_threshold_crossing_in, max_slope_threshold,
    threshold_crossing_in,
    threshold_crossing_time, DetectionEvent, Edge,
};
pub use photon_stats::{
    estimate_mean_photon_number, fired_pixel_distribution, PhotonStatistics,
};
pub use timing::{timing_jitter, JitterMethod, MIN_SAMPLES_DIRECT_FWHM, MIN_SAMPLES_GAUSSIAN_FIT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// FWHM of a Gaussian in units of its standard deviation.
pub const FWHM_PER_SIGMA: f64 = 2.355;

/// `S_{n,n+1} = (p_{n+1} - p_n) / (2.355 · (σ_{n+1} + σ_n) / 2)` for every
/// adjacent pair of fitted components.
pub fn normalized_spacing(fit: &MixtureFit) -> Result<Vec<f64>> {
    let c = fit.components();
    if c.len() < 2 {
        return Err(Error::InvalidComponentCount(c.len()));
    }
    Ok(c.windows(2)
        .map(|w| (w[1].mean - w[0].mean) / (FWHM_PER_SIGMA * (w[1].std + w[0].std) / 2.0))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyMode {
    /// Component with the largest weighted density at the amplitude.
    #[default]
    Likelihood,
    /// Nearest mean; boundaries halfway between adjacent means.
    Midpoint,
}

/// Assigns each event the 1-based index of its component. Ties go to the
/// lower component.
pub fn classify_events(
    events: &[DetectionEvent],
    fit: &MixtureFit,
    mode: ClassifyMode,
) -> Vec<DetectionEvent> {
    events
        .iter()
        .map(|e| DetectionEvent {
            assigned_n: Some(classify_amplitude(e.peak_amplitude, fit, mode)),
            ..*e
        })
        .collect()
}

pub fn classify_amplitude(x: f64, fit: &MixtureFit, mode: ClassifyMode) -> u32 {
    let comps = fit.components();
    match mode {
        ClassifyMode::Likelihood => {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (i, c) in comps.iter().enumerate() {
                // log of a·exp(-(x-p)²/2σ²); `a` is a peak height, so this is
                // proportional to mixing weight times normalized density
                let v = c.weight.ln() - (x - c.mean).powi(2) / (2.0 * c.std * c.std);
                if v > best_v {
                    best_v = v;
                    best = i;
                }
            }
            best as u32 + 1
        }
        ClassifyMode::Midpoint => {
            let idx = comps
                .windows(2)
                .take_while(|w| x > (w[0].mean + w[1].mean) / 2.0)
                .count();
            idx as u32 + 1
        }
    }
}
