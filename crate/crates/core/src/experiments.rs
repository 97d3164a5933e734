//! Monte Carlo studies: SNR per photon number, amplitude discrimination,
//! timing jitter, low-pass cutoff sweeps and array-size extrapolation.
//!
//! Trial `i` draws its noise, photon number and arrival phase from seeds
//! derived from `(master seed, stream, i)`. Trials run on the rayon pool,
//! results are collected in trial order and reduced sequentially, so a
//! report depends only on the configuration, never on the thread count.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrimination::{
    build_histogram, classify_events, detect_peak, detect_peak_or_sample,
    estimate_mean_photon_number, fired_pixel_distribution, fit_gaussian_mixture,
    freedman_diaconis_bins, last_threshold_crossing_in, max_slope_threshold, normalized_spacing,
    timing_jitter, AmplitudeHistogram, ClassifyMode, DetectionEvent, Edge, JitterMethod,
    MixtureFit,
};
use crate::error::{Error, Result};
use crate::filtering::{
    apply_lowpass, build_matched_template, characteristic_frequency, power_spectrum, FilterKernel,
    LowpassKind, Normalization, PreparedFir, Spectrum,
};
use crate::signal_model::{
    add_noise, synthesize_trace, EventSchedule, NoiseModel, PulseShape, ReadoutConfig, Trace,
    DEFAULT_DURATION, DEFAULT_SAMPLE_RATE,
};

pub const DEFAULT_PULSE_OFFSET: f64 = 20.0e-9;
pub const DEFAULT_PEAK_WINDOW: f64 = 5.0e-9;
pub const DEFAULT_HISTOGRAM_BINS: usize = 2000;
pub const MIN_SNR_TRIALS: usize = 100;
pub const MIN_JITTER_TRIALS: usize = 1000;

pub const STREAM_NOISE: u64 = 0x6e6f697365;
pub const STREAM_PHOTONS: u64 = 0x70686f746f6e;
pub const STREAM_PHASE: u64 = 0x7068617365;

fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one trial's random stream.
pub fn derive_seed(master: u64, stream: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ trial)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    None,
    Matched {
        normalization: Normalization,
        /// Template length `t0`, seconds.
        template_duration: f64,
    },
    Lowpass {
        /// Hz.
        cutoff: f64,
        lowpass: LowpassKind,
    },
    Kernel {
        kernel: FilterKernel,
    },
}

impl FilterSpec {
    /// Unit-energy matched template spanning five fall times.
    pub fn matched(shape: &PulseShape) -> Self {
        FilterSpec::Matched {
            normalization: Normalization::UnitEnergy,
            template_duration: 5.0 * shape.tau_fall(),
        }
    }

    pub fn brickwall(cutoff: f64) -> Self {
        FilterSpec::Lowpass {
            cutoff,
            lowpass: LowpassKind::BrickwallFft,
        }
    }

    pub fn label(&self) -> String {
        match self {
            FilterSpec::None => "none".into(),
            FilterSpec::Matched { .. } => "matched".into(),
            FilterSpec::Lowpass { cutoff, .. } => format!("lowpass:{cutoff}"),
            FilterSpec::Kernel { .. } => "kernel".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingMethod {
    /// Threshold for unfiltered and low-pass outputs, peak time for FIR
    /// outputs.
    #[default]
    Auto,
    /// Rising crossing of the level at the reference pulse's steepest point.
    Threshold,
    PeakTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub shape: PulseShape,
    /// Only `sigma` is used; trial noise streams derive from `seed`.
    pub noise: NoiseModel,
    pub readout: ReadoutConfig,
    pub filter: FilterSpec,
    /// Events per discrimination run and traces per SNR estimate.
    pub trials: usize,
    /// Traces per SNR estimate inside [`run_report`].
    pub snr_trials: usize,
    pub jitter_trials: usize,
    pub seed: u64,
    pub sample_rate: f64,
    pub duration: f64,
    /// Arrival time of the pulse within each trace, seconds.
    pub pulse_offset: f64,
    /// Half-width of the peak search window around the reference peak.
    pub peak_window: f64,
    /// Amplitude histogram bins; 0 selects Freedman–Diaconis.
    pub histogram_bins: usize,
    /// Mean photon number for [`run_report`] and [`sweep_lowpass`].
    pub mu: f64,
    pub jitter_method: JitterMethod,
    /// Uniform sub-sample arrival phase in jitter runs.
    pub random_phase: bool,
    pub classify: ClassifyMode,
    /// Per-photon-number matched templates, used where `n` is known.
    pub template_overrides: Vec<(u32, FilterKernel)>,
}

impl ExperimentConfig {
    pub fn nominal() -> Self {
        let shape = PulseShape::nominal();
        Self {
            filter: FilterSpec::matched(&shape),
            shape,
            noise: NoiseModel {
                sigma: 0.40,
                seed: 0,
            },
            readout: ReadoutConfig::default(),
            trials: 100_000,
            snr_trials: 10_000,
            jitter_trials: 2_000,
            seed: 1,
            sample_rate: DEFAULT_SAMPLE_RATE,
            duration: DEFAULT_DURATION,
            pulse_offset: DEFAULT_PULSE_OFFSET,
            peak_window: DEFAULT_PEAK_WINDOW,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            mu: 5.7,
            jitter_method: JitterMethod::GaussianFit,
            random_phase: false,
            classify: ClassifyMode::Likelihood,
            template_overrides: Vec::new(),
        }
    }

    pub fn with_filter(&self, filter: FilterSpec) -> Self {
        Self {
            filter,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(Error::invalid("trials", "must be at least 1"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::invalid("sample_rate", "must be positive"));
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be non-negative"));
        }
        self.readout.validate()?;
        if self.shape.max_photon_number() < self.readout.num_pixels {
            return Err(Error::invalid(
                "amplitudes",
                format!(
                    "table covers n ≤ {} but the array has {} pixels",
                    self.shape.max_photon_number(),
                    self.readout.num_pixels
                ),
            ));
        }
        if !(self.pulse_offset >= 0.0 && self.peak_window > 0.0) {
            return Err(Error::invalid(
                "pulse_offset",
                "offset must be non-negative and peak window positive",
            ));
        }
        if !(self.duration > self.pulse_offset + self.shape.tau_fall()) {
            return Err(Error::DurationTooShort {
                duration: self.duration,
                reason: "must cover the pulse offset plus one fall time".into(),
            });
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu", "must be positive"));
        }
        if self.histogram_bins == 1 {
            return Err(Error::invalid("histogram_bins", "must be 0 (auto) or at least 2"));
        }
        match &self.filter {
            FilterSpec::None => {}
            FilterSpec::Matched {
                template_duration, ..
            } => {
                if !(*template_duration > 0.0) {
                    return Err(Error::invalid("template_duration", "must be positive"));
                }
            }
            FilterSpec::Lowpass { cutoff, .. } => {
                let nyquist = self.sample_rate / 2.0;
                if !(*cutoff > 0.0 && *cutoff <= nyquist) {
                    return Err(Error::CutoffOutOfRange {
                        cutoff: *cutoff,
                        nyquist,
                    });
                }
            }
            FilterSpec::Kernel { kernel } => self.check_kernel(kernel)?,
        }
        for (n, kernel) in &self.template_overrides {
            if *n < 1 || *n > self.readout.num_pixels {
                return Err(Error::PhotonNumberOutOfRange {
                    n: *n,
                    max: self.readout.num_pixels,
                });
            }
            self.check_kernel(kernel)?;
        }
        Ok(())
    }

    fn check_kernel(&self, kernel: &FilterKernel) -> Result<()> {
        if kernel.sample_rate() != self.sample_rate {
            return Err(Error::SampleRateMismatch {
                trace: self.sample_rate,
                kernel: kernel.sample_rate(),
            });
        }
        Ok(())
    }

    fn noise_for(&self, trial: usize) -> NoiseModel {
        self.noise
            .with_seed(derive_seed(self.seed, STREAM_NOISE, trial as u64))
    }

    fn clean_trace(&self, n: u32, arrival: f64) -> Result<Trace> {
        synthesize_trace(
            &self.shape,
            &EventSchedule::single(arrival, n)?,
            self.sample_rate,
            self.duration,
        )
    }

    fn bins_for(&self, values: &[f64]) -> usize {
        if self.histogram_bins == 0 {
            freedman_diaconis_bins(values)
        } else {
            self.histogram_bins
        }
    }
}

/// The configured filter, prepared once per experiment.
/// A [`FilterSpec`] resolved against a configuration, ready to apply to
/// records of `config.duration` at `config.sample_rate`.
pub enum FilterStage {
    Identity,
    Fir(PreparedFir),
    Lowpass(f64, LowpassKind),
}

impl FilterStage {
    pub fn for_config(config: &ExperimentConfig) -> Result<Self> {
        Self::build(config, None)
    }

    fn build(config: &ExperimentConfig, n: Option<u32>) -> Result<Self> {
        let len = (config.duration * config.sample_rate).round() as usize;
        let override_for = |n: u32| {
            config
                .template_overrides
                .iter()
                .find(|(m, _)| *m == n)
                .map(|(_, k)| k.clone())
        };
        Ok(match &config.filter {
            FilterSpec::None => FilterStage::Identity,
            FilterSpec::Matched {
                normalization,
                template_duration,
            } => {
                let kernel = match n.and_then(override_for) {
                    Some(k) => k,
                    None => build_matched_template(
                        &config.shape,
                        config.sample_rate,
                        *template_duration,
                        *normalization,
                    )?,
                };
                FilterStage::Fir(PreparedFir::new(kernel, len))
            }
            FilterSpec::Lowpass { cutoff, lowpass } => FilterStage::Lowpass(*cutoff, *lowpass),
            FilterSpec::Kernel { kernel } => FilterStage::Fir(PreparedFir::new(kernel.clone(), len)),
        })
    }

    pub fn apply(&self, trace: &Trace) -> Result<Trace> {
        match self {
            FilterStage::Identity => Ok(trace.clone()),
            FilterStage::Fir(f) => f.apply(trace),
            FilterStage::Lowpass(cutoff, kind) => apply_lowpass(trace, *cutoff, *kind),
        }
    }

    pub fn is_fir(&self) -> bool {
        matches!(self, FilterStage::Fir(_))
    }
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Noiseless filtered response and the sample windows derived from it.
struct Reference {
    clean: Trace,
    filtered: Trace,
    peak_index: usize,
    window: Range<usize>,
}

impl Reference {
    fn new(config: &ExperimentConfig, stage: &FilterStage, n: u32) -> Result<Self> {
        let clean = config.clean_trace(n, config.pulse_offset)?;
        let filtered = stage.apply(&clean)?;
        let peak_index = argmax(filtered.samples());
        let half = (config.peak_window * config.sample_rate).round().max(1.0) as usize;
        let window = peak_index.saturating_sub(half)..(peak_index + half + 1).min(filtered.len());
        if window.len() < 3 {
            return Err(Error::invalid("peak_window", "search window shorter than 3 samples"));
        }
        Ok(Self {
            clean,
            filtered,
            peak_index,
            window,
        })
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `mean / std` of the filtered output at the noiseless peak index over
/// `config.trials` noisy `n`-photon traces.
pub fn monte_carlo_snr(config: &ExperimentConfig, n: u32) -> Result<f64> {
    config.validate()?;
    if config.trials < MIN_SNR_TRIALS {
        return Err(Error::TooFewSamples {
            required: MIN_SNR_TRIALS,
            got: config.trials,
        });
    }
    if config.noise.sigma == 0.0 {
        return Err(Error::InfiniteSnr);
    }
    let stage = FilterStage::build(config, Some(n))?;
    let reference = Reference::new(config, &stage, n)?;
    let k = reference.peak_index;
    let peaks = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let noisy = add_noise(&reference.clean, &config.noise_for(i));
            Ok(stage.apply(&noisy)?.samples()[k])
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&peaks);
    Ok(mean / std)
}

/// A simulated triggered record with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRecord {
    pub trace: Trace,
    /// Seconds.
    pub arrival: f64,
    pub photon_number: u32,
}

/// `count` noisy records at `config.mu`, each holding one pulse with at least
/// one fired pixel. Illuminations that fire nothing are redrawn from the same
/// stream, as a trigger would skip them.
pub fn simulate_records(config: &ExperimentConfig, count: usize) -> Result<Vec<SimulatedRecord>> {
    config.validate()?;
    let stats = fired_pixel_distribution(config.mu, config.readout.num_pixels)?;
    if stats.fired_probabilities[0] >= 1.0 {
        return Err(Error::invalid("mu", "no pixel can fire"));
    }
    let dt = 1.0 / config.sample_rate;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_PHOTONS, i as u64));
            let k = loop {
                let k = stats.sample(&mut rng);
                if k > 0 {
                    break k;
                }
            };
            let arrival = if config.random_phase {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_PHASE, i as u64));
                config.pulse_offset + rng.random::<f64>() * dt
            } else {
                config.pulse_offset
            };
            let clean = config.clean_trace(k, arrival)?;
            Ok(SimulatedRecord {
                trace: add_noise(&clean, &config.noise_for(i)),
                arrival,
                photon_number: k,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationReport {
    pub filter: String,
    pub mu: f64,
    pub trials: usize,
    /// Trials with at least one fired pixel.
    pub detected: usize,
    /// Peaks taken from a window boundary without parabolic refinement.
    pub unrefined_peaks: usize,
    pub histogram: AmplitudeHistogram,
    pub fit: MixtureFit,
    /// `S_{n,n+1}` for `n = 1..N-1`.
    pub spacings: Vec<f64>,
    /// Fitted `p_n / σ_n`.
    pub snr_per_n: Vec<f64>,
    /// Classified fired-pixel counts, index `k = 0..=N`.
    pub fired_counts: Vec<u64>,
    pub true_fired_counts: Vec<u64>,
    pub classification_accuracy: f64,
    pub estimated_mu: f64,
    #[serde(skip)]
    pub events: Vec<DetectionEvent>,
}

/// Simulates `config.trials` illuminations at mean photon number `mu`,
/// extracts one amplitude per detected pulse, fits an `N`-component mixture
/// and inverts the classified counts for `mu`.
pub fn run_discrimination_experiment(
    config: &ExperimentConfig,
    mu: f64,
) -> Result<DiscriminationReport> {
    config.validate()?;
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid("mu", "must be positive"));
    }
    let num_pixels = config.readout.num_pixels;
    let stats = fired_pixel_distribution(mu, num_pixels)?;
    let stage = FilterStage::build(config, None)?;
    let references = (1..=num_pixels)
        .map(|n| Reference::new(config, &stage, n))
        .collect::<Result<Vec<_>>>()?;
    // same shape for every n, so one window serves all
    let window = references[0].window.clone();

    let outcomes = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_PHOTONS, i as u64));
            let k = stats.sample(&mut rng);
            if k == 0 {
                return Ok(None);
            }
            let noisy = add_noise(&references[k as usize - 1].clean, &config.noise_for(i));
            let y = stage.apply(&noisy)?;
            let (event, refined) = detect_peak_or_sample(&y, window.clone())?;
            Ok(Some((k, event, refined)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut true_fired_counts = vec![0u64; num_pixels as usize + 1];
    let mut truth = Vec::new();
    let mut events = Vec::new();
    let mut unrefined_peaks = 0;
    for outcome in &outcomes {
        match outcome {
            None => true_fired_counts[0] += 1,
            Some((k, event, refined)) => {
                true_fired_counts[*k as usize] += 1;
                truth.push(*k);
                events.push(*event);
                if !refined {
                    unrefined_peaks += 1;
                }
            }
        }
    }
    if events.is_empty() {
        return Err(Error::EmptyInput);
    }
    let amplitudes: Vec<f64> = events.iter().map(|e| e.peak_amplitude).collect();
    let histogram = build_histogram(&amplitudes, config.bins_for(&amplitudes))?;
    let fit = fit_gaussian_mixture(&histogram, num_pixels as usize, None)?;
    let spacings = normalized_spacing(&fit)?;
    let snr_per_n = fit.components().iter().map(|c| c.mean / c.std).collect();

    let events = classify_events(&events, &fit, config.classify);
    let mut fired_counts = vec![0u64; num_pixels as usize + 1];
    fired_counts[0] = true_fired_counts[0];
    let mut correct = 0usize;
    for (e, k) in events.iter().zip(&truth) {
        let n = e.assigned_n.expect("classified");
        fired_counts[n as usize] += 1;
        if n == *k {
            correct += 1;
        }
    }
    let estimated_mu = estimate_mean_photon_number(&fired_counts, num_pixels)?;

    Ok(DiscriminationReport {
        filter: config.filter.label(),
        mu,
        trials: config.trials,
        detected: events.len(),
        unrefined_peaks,
        histogram,
        fit,
        spacings,
        snr_per_n,
        fired_counts,
        true_fired_counts,
        classification_accuracy: correct as f64 / events.len() as f64,
        estimated_mu,
        events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterReport {
    pub n: u32,
    /// Resolved estimator; never `Auto`.
    pub method: TimingMethod,
    /// FWHM of measured minus true arrival, seconds.
    pub jitter: f64,
    pub mean_delay: f64,
    pub measured: usize,
    /// Trials with no crossing or an unbracketed peak.
    pub failed: usize,
    /// Threshold level in millivolts, for the threshold method.
    pub threshold: Option<f64>,
}

/// Measures `config.jitter_trials` noisy `n`-photon arrivals and returns
/// the FWHM of the timing error.
pub fn run_jitter_experiment(
    config: &ExperimentConfig,
    n: u32,
    method: TimingMethod,
) -> Result<JitterReport> {
    config.validate()?;
    if config.jitter_trials < MIN_JITTER_TRIALS {
        return Err(Error::TooFewSamples {
            required: MIN_JITTER_TRIALS,
            got: config.jitter_trials,
        });
    }
    let stage = FilterStage::build(config, Some(n))?;
    let reference = Reference::new(config, &stage, n)?;
    let method = match method {
        TimingMethod::Auto if stage.is_fir() => TimingMethod::PeakTime,
        TimingMethod::Auto => TimingMethod::Threshold,
        m => m,
    };

    let (threshold, edge_window) = if method == TimingMethod::Threshold {
        let f = &reference.filtered;
        if reference.peak_index == 0 {
            return Err(Error::NoCrossing);
        }
        let rising = Trace::from_parts(
            f.sample_rate(),
            f.start_time(),
            f.samples()[..=reference.peak_index].to_vec(),
        );
        let (level, _) = max_slope_threshold(&rising)?;
        // slow low-pass edges can wander by many samples, so search the
        // whole record up to the reference peak for the last crossing
        (Some(level), 0..reference.peak_index + 1)
    } else {
        (None, 0..0)
    };

    let dt = 1.0 / config.sample_rate;
    let delays = (0..config.jitter_trials)
        .into_par_iter()
        .map(|i| {
            let (arrival, clean) = if config.random_phase {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_PHASE, i as u64));
                let arrival = config.pulse_offset + rng.random::<f64>() * dt;
                (arrival, config.clean_trace(n, arrival)?)
            } else {
                (config.pulse_offset, reference.clean.clone())
            };
            let y = stage.apply(&add_noise(&clean, &config.noise_for(i)))?;
            let measured = match threshold {
                Some(level) => {
                    last_threshold_crossing_in(&y, edge_window.clone(), level, Edge::Rising)
                }
                None => detect_peak(&y, reference.window.clone()).map(|e| e.peak_time),
            };
            match measured {
                Ok(t) => Ok(Some(t - arrival)),
                Err(Error::NoCrossing) | Err(Error::PeakNotBracketed { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<Vec<Option<f64>>>>()?;

    let measured: Vec<f64> = delays.iter().flatten().copied().collect();
    let failed = delays.len() - measured.len();
    let jitter = timing_jitter(&measured, config.jitter_method)?;
    let mean_delay = measured.iter().sum::<f64>() / measured.len() as f64;
    Ok(JitterReport {
        n,
        method,
        jitter,
        mean_delay,
        measured: measured.len(),
        failed,
        threshold,
    })
}

/// `S_12` and single-photon jitter of one filter configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterPerformance {
    pub s12: f64,
    /// Seconds.
    pub jitter: f64,
}

pub fn filter_performance(config: &ExperimentConfig) -> Result<FilterPerformance> {
    let disc = run_discrimination_experiment(config, config.mu)?;
    let jitter = run_jitter_experiment(config, 1, TimingMethod::Auto)?;
    Ok(FilterPerformance {
        s12: disc.spacings[0],
        jitter: jitter.jitter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Hz.
    pub cutoff: f64,
    pub s12: f64,
    /// Seconds.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub lowpass: LowpassKind,
    pub points: Vec<SweepPoint>,
    /// Cutoff with the largest `S_12`; the lowest one on ties.
    pub best_cutoff: f64,
}

impl SweepResult {
    pub fn best(&self) -> &SweepPoint {
        self.points
            .iter()
            .find(|p| p.cutoff == self.best_cutoff)
            .expect("best cutoff is one of the points")
    }

    /// True when `S_12` never decreases up to its maximum and never
    /// increases after it.
    pub fn is_unimodal(&self) -> bool {
        let s: Vec<f64> = self.points.iter().map(|p| p.s12).collect();
        let top = argmax(&s);
        s[..=top].windows(2).all(|w| w[1] >= w[0]) && s[top..].windows(2).all(|w| w[1] <= w[0])
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cutoff_hz", "s12", "jitter_s"])?;
        for p in &self.points {
            w.write_record([p.cutoff.to_string(), p.s12.to_string(), p.jitter.to_string()])?;
        }
        w.flush()
    }
}

/// Runs the discrimination (at `config.mu`) and single-photon jitter
/// experiments with a low-pass filter at each cutoff. The low-pass kind is
/// taken from `config.filter` when it is a low-pass, brick-wall otherwise.
pub fn sweep_lowpass(config: &ExperimentConfig, cutoffs: &[f64]) -> Result<SweepResult> {
    if cutoffs.len() < 3 {
        return Err(Error::invalid("cutoffs", "at least 3 cutoffs required"));
    }
    if cutoffs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("cutoffs", "must be strictly increasing"));
    }
    let lowpass = match config.filter {
        FilterSpec::Lowpass { lowpass, .. } => lowpass,
        _ => LowpassKind::BrickwallFft,
    };
    let resolution = 1.0 / config.duration;
    if lowpass == LowpassKind::BrickwallFft && cutoffs[0] < resolution {
        return Err(Error::invalid(
            "cutoffs",
            format!(
                "{:e} Hz is below the record's bin spacing {:e} Hz; lengthen the trace duration",
                cutoffs[0], resolution
            ),
        ));
    }
    let points = cutoffs
        .iter()
        .map(|&cutoff| {
            let perf = filter_performance(&config.with_filter(FilterSpec::Lowpass { cutoff, lowpass }))?;
            Ok(SweepPoint {
                cutoff,
                s12: perf.s12,
                jitter: perf.jitter,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let s: Vec<f64> = points.iter().map(|p| p.s12).collect();
    let best_cutoff = points[argmax(&s)].cutoff;
    Ok(SweepResult {
        lowpass,
        points,
        best_cutoff,
    })
}

/// Largest array size whose extrapolated minimum spacing stays at or above
/// one, given minimum spacing `s_min` measured on an `n`-pixel array.
/// Spacing scales as `1 / (N + Z₀/R_S)`.
pub fn estimate_max_array_size(s_min: f64, n: u32, z0: f64, rs: f64) -> Result<u32> {
    if !(s_min > 0.0 && s_min.is_finite()) {
        return Err(Error::invalid("s_min", "must be positive"));
    }
    if n < 1 {
        return Err(Error::invalid("num_pixels", "must be at least 1"));
    }
    if !(z0 > 0.0 && rs > 0.0 && z0.is_finite() && rs.is_finite()) {
        return Err(Error::invalid("impedance", "Z0 and R_S must be positive"));
    }
    let ratio = z0 / rs;
    let x = s_min * (n as f64 + ratio) - ratio;
    // absorbs rounding when x is an integer in exact arithmetic
    let size = (x + 1e-9 * x.abs().max(1.0)).floor();
    if size < 1.0 {
        return Err(Error::NoValidSize);
    }
    Ok(size.min(u32::MAX as f64) as u32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCrossing {
    pub signal: Spectrum,
    /// Average of the noise-only periodograms.
    pub noise: Spectrum,
    /// Hz.
    pub characteristic_frequency: f64,
}

/// Spectrum of the noiseless `n`-photon trace against the averaged spectrum
/// of `records` noise-only traces, and their crossing frequency.
pub fn spectral_crossing(
    config: &ExperimentConfig,
    n: u32,
    records: usize,
) -> Result<SpectralCrossing> {
    config.validate()?;
    if records < 1 {
        return Err(Error::invalid("records", "must be at least 1"));
    }
    let clean = config.clean_trace(n, config.pulse_offset)?;
    let signal = power_spectrum(&clean, 1)?;
    let silent = Trace::zeros(config.sample_rate, clean.len())?;
    let spectra = (0..records)
        .into_par_iter()
        .map(|i| power_spectrum(&add_noise(&silent, &config.noise_for(i)), 1))
        .collect::<Result<Vec<_>>>()?;
    let noise = Spectrum::average(&spectra)?;
    let characteristic_frequency = characteristic_frequency(&signal, &noise)?;
    Ok(SpectralCrossing {
        signal,
        noise,
        characteristic_frequency,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrRow {
    pub n: u32,
    /// `A_n / σ`.
    pub analytic_unfiltered: f64,
    pub unfiltered: f64,
    pub filtered: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterRow {
    pub n: u32,
    pub unfiltered: JitterReport,
    pub filtered: JitterReport,
}

/// Every study on one configuration, unfiltered against `config.filter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub filter: String,
    pub snr: Vec<SnrRow>,
    pub unfiltered: DiscriminationReport,
    pub filtered: DiscriminationReport,
    pub jitter: Vec<JitterRow>,
    /// Hz; absent when the spectra do not cross.
    pub characteristic_frequency: Option<f64>,
    /// From the smallest filtered spacing; absent when no size is valid.
    pub max_array_size: Option<u32>,
}

pub const SPECTRAL_NOISE_RECORDS: usize = 64;

pub fn run_report(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    if config.noise.sigma == 0.0 {
        return Err(Error::InfiniteSnr);
    }
    let raw = config.with_filter(FilterSpec::None);
    let snr_cfg = |c: &ExperimentConfig| ExperimentConfig {
        trials: c.snr_trials,
        ..c.clone()
    };
    let num_pixels = config.readout.num_pixels;
    let snr = (1..=num_pixels)
        .map(|n| {
            Ok(SnrRow {
                n,
                analytic_unfiltered: config.shape.amplitude(n)? / config.noise.sigma,
                unfiltered: monte_carlo_snr(&snr_cfg(&raw), n)?,
                filtered: monte_carlo_snr(&snr_cfg(config), n)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let unfiltered = run_discrimination_experiment(&raw, config.mu)?;
    let filtered = run_discrimination_experiment(config, config.mu)?;
    let mut jitter_ns = vec![1];
    if num_pixels > 1 {
        jitter_ns.push(num_pixels.min(5));
    }
    let jitter = jitter_ns
        .into_iter()
        .map(|n| {
            Ok(JitterRow {
                n,
                unfiltered: run_jitter_experiment(&raw, n, TimingMethod::Auto)?,
                filtered: run_jitter_experiment(config, n, TimingMethod::Auto)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let characteristic_frequency = match spectral_crossing(config, 1, SPECTRAL_NOISE_RECORDS) {
        Ok(c) => Some(c.characteristic_frequency),
        Err(Error::NoCrossing) => None,
        Err(e) => return Err(e),
    };
    let s_min = filtered.spacings.iter().copied().fold(f64::INFINITY, f64::min);
    let max_array_size = estimate_max_array_size(
        s_min,
        num_pixels,
        config.readout.line_impedance,
        config.readout.shunt_resistance,
    )
    .ok();
    Ok(ExperimentReport {
        filter: config.filter.label(),
        snr,
        unfiltered,
        filtered,
        jitter,
        characteristic_frequency,
        max_array_size,
    })
}
