//! Detector pulse synthesis.
//!
//! A series array of `N` nanowire pixels produces, for `n` fired pixels, a
//! pulse of fixed shape and photon-number-dependent height:
//!
//! ```text
//! s_n(t) = A_n / u(t*) · (exp(-t/τ_fall) - exp(-t/τ_rise)),   t >= 0
//! ```
//!
//! The difference is written fall-minus-rise so that pulses are positive.
//! With `peak_normalized` set (the default) the raw bi-exponential is divided
//! by its maximum `u(t*)`, so `A_n` is the true waveform maximum. Recorded
//! traces are the pulse plus stationary white Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default digitizer rate, samples per second.
pub const DEFAULT_SAMPLE_RATE: f64 = 5.0e9;
/// Default record length, seconds.
pub const DEFAULT_DURATION: f64 = 200.0e-9;

/// Bi-exponential pulse shape with a per-photon-number amplitude table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    tau_rise: f64,
    tau_fall: f64,
    /// `amplitudes[n - 1]` is `A_n` in millivolts.
    amplitudes: Vec<f64>,
    peak_normalized: bool,
}

impl PulseShape {
    pub fn new(
        tau_rise: f64,
        tau_fall: f64,
        amplitudes: Vec<f64>,
        peak_normalized: bool,
    ) -> Result<Self> {
        if !(tau_rise > 0.0 && tau_rise.is_finite()) {
            return Err(Error::invalid("tau_rise", "must be positive"));
        }
        if !(tau_fall > 0.0 && tau_fall.is_finite()) {
            return Err(Error::invalid("tau_fall", "must be positive"));
        }
        if tau_rise >= tau_fall {
            return Err(Error::invalid("tau_rise", "must be smaller than tau_fall"));
        }
        if amplitudes.is_empty() {
            return Err(Error::invalid("amplitudes", "at least one entry required"));
        }
        if amplitudes.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(Error::invalid("amplitudes", "all entries must be positive"));
        }
        if amplitudes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "amplitudes",
                "must be strictly increasing in photon number",
            ));
        }
        Ok(Self {
            tau_rise,
            tau_fall,
            amplitudes,
            peak_normalized,
        })
    }

    /// Amplitudes `A_n = n · A_1` for `n = 1..=max_n`, peak normalized.
    pub fn linear(tau_rise: f64, tau_fall: f64, a1: f64, max_n: u32) -> Result<Self> {
        let amplitudes = (1..=max_n).map(|n| n as f64 * a1).collect();
        Self::new(tau_rise, tau_fall, amplitudes, true)
    }

    /// Six-pixel array with τ_rise = 0.21 ns, τ_fall = 25 ns and linear
    /// amplitudes from A_1 = 3.0 mV.
    pub fn nominal() -> Self {
        Self::linear(0.21e-9, 25.0e-9, 3.0, 6).expect("constants are valid")
    }

    pub fn tau_rise(&self) -> f64 {
        self.tau_rise
    }

    pub fn tau_fall(&self) -> f64 {
        self.tau_fall
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn peak_normalized(&self) -> bool {
        self.peak_normalized
    }

    /// Largest photon number with a tabulated amplitude.
    pub fn max_photon_number(&self) -> u32 {
        self.amplitudes.len() as u32
    }

    pub fn amplitude(&self, n: u32) -> Result<f64> {
        if n == 0 {
            return Err(Error::UnknownPhotonNumber(n));
        }
        self.amplitudes
            .get(n as usize - 1)
            .copied()
            .ok_or(Error::UnknownPhotonNumber(n))
    }

    /// Time of the continuous-time maximum of the bi-exponential.
    pub fn peak_time(&self) -> f64 {
        let (r, f) = (self.tau_rise, self.tau_fall);
        (f / r).ln() * r * f / (f - r)
    }

    /// Maximum of the raw (unnormalized) bi-exponential, `u(t*)`.
    pub fn raw_peak(&self) -> f64 {
        raw_biexp(self.tau_rise, self.tau_fall, self.peak_time())
    }

    /// Unit-amplitude pulse value at `t` seconds after arrival.
    pub fn unit(&self, t: f64) -> f64 {
        let raw = raw_biexp(self.tau_rise, self.tau_fall, t);
        if self.peak_normalized {
            raw / self.raw_peak()
        } else {
            raw
        }
    }

    /// `s_n(t)` in millivolts.
    pub fn value(&self, n: u32, t: f64) -> Result<f64> {
        Ok(self.amplitude(n)? * self.unit(t))
    }

    /// Adds `amplitude · unit(t_i - arrival)` to every sample of `out`,
    /// where `t_i = i / sample_rate`.
    pub fn accumulate(&self, amplitude: f64, arrival: f64, sample_rate: f64, out: &mut [f64]) {
        let norm = if self.peak_normalized {
            self.raw_peak()
        } else {
            1.0
        };
        let scale = amplitude / norm;
        let first = (arrival * sample_rate).floor().max(0.0) as usize;
        for (i, v) in out.iter_mut().enumerate().skip(first) {
            let t = i as f64 / sample_rate - arrival;
            *v += scale * raw_biexp(self.tau_rise, self.tau_fall, t);
        }
    }
}

fn raw_biexp(tau_rise: f64, tau_fall: f64, t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-t / tau_fall).exp() - (-t / tau_rise).exp()
    }
}

/// Uniformly sampled voltage record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    sample_rate: f64,
    start_time: f64,
    samples: Vec<f64>,
}

impl Trace {
    pub fn new(sample_rate: f64, start_time: f64, samples: Vec<f64>) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid("sample_rate", "must be positive"));
        }
        if !start_time.is_finite() {
            return Err(Error::invalid("start_time", "must be finite"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("samples", "trace must not be empty"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("samples", "all samples must be finite"));
        }
        Ok(Self {
            sample_rate,
            start_time,
            samples,
        })
    }

    /// Invariants already hold; used internally for derived traces.
    pub(crate) fn from_parts(sample_rate: f64, start_time: f64, samples: Vec<f64>) -> Self {
        debug_assert!(!samples.is_empty());
        Self {
            sample_rate,
            start_time,
            samples,
        }
    }

    pub fn zeros(sample_rate: f64, len: usize) -> Result<Self> {
        Self::new(sample_rate, 0.0, vec![0.0; len])
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.start_time + index as f64 / self.sample_rate
    }

    /// Index of the sample nearest `t`, clamped to the trace.
    pub fn index_near(&self, t: f64) -> usize {
        let i = ((t - self.start_time) * self.sample_rate).round();
        i.clamp(0.0, (self.len() - 1) as f64) as usize
    }

    pub fn end_time(&self) -> f64 {
        self.time_at(self.len() - 1)
    }

    /// Sample-wise linear combination `a·self + b·other`; grids must match.
    pub fn combine(&self, a: f64, other: &Trace, b: f64) -> Result<Trace> {
        if self.sample_rate != other.sample_rate || self.len() != other.len() {
            return Err(Error::invalid("trace", "grids differ"));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Trace::from_parts(self.sample_rate, self.start_time, samples))
    }
}

/// Stationary white Gaussian noise, `σ` in millivolts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be non-negative"));
        }
        Ok(Self { sigma, seed })
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Electrical parameters of the series array readout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub num_pixels: u32,
    /// Amperes.
    pub bias_current: f64,
    /// Ohms.
    pub line_impedance: f64,
    /// Ohms.
    pub shunt_resistance: f64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            num_pixels: 6,
            bias_current: 10.0e-6,
            line_impedance: 50.0,
            shunt_resistance: 52.0,
        }
    }
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_pixels < 1 {
            return Err(Error::invalid("num_pixels", "must be at least 1"));
        }
        for (name, v) in [
            ("bias_current", self.bias_current),
            ("line_impedance", self.line_impedance),
            ("shunt_resistance", self.shunt_resistance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }

    /// `Z₀ / R_S`, the effective pixel-count offset of the load.
    pub fn load_ratio(&self) -> f64 {
        self.line_impedance / self.shunt_resistance
    }
}

/// Pulse arrivals within one trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSchedule {
    events: Vec<(f64, u32)>,
}

impl EventSchedule {
    /// `events` are `(arrival_time_s, photon_number)` pairs.
    pub fn new(events: Vec<(f64, u32)>) -> Result<Self> {
        if events.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::invalid("events", "arrival times must be non-decreasing"));
        }
        if events.iter().any(|&(t, n)| !t.is_finite() || n == 0) {
            return Err(Error::invalid(
                "events",
                "times must be finite and photon numbers at least 1",
            ));
        }
        Ok(Self { events })
    }

    pub fn single(arrival: f64, n: u32) -> Result<Self> {
        Self::new(vec![(arrival, n)])
    }

    pub fn events(&self) -> &[(f64, u32)] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Continuous-time noiseless signal at `t`.
    pub fn evaluate(&self, shape: &PulseShape, t: f64) -> Result<f64> {
        self.events
            .iter()
            .try_fold(0.0, |acc, &(arrival, n)| Ok(acc + shape.value(n, t - arrival)?))
    }
}

fn sample_count(sample_rate: f64, duration: f64) -> Result<usize> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::invalid("sample_rate", "must be positive"));
    }
    let len = (duration * sample_rate).round();
    if !(len >= 1.0) {
        return Err(Error::DurationTooShort {
            duration,
            reason: "shorter than one sample".into(),
        });
    }
    Ok(len as usize)
}

/// Noiseless single `n`-photon pulse arriving at `t = 0`.
pub fn synthesize_pulse(
    shape: &PulseShape,
    n: u32,
    sample_rate: f64,
    duration: f64,
) -> Result<Trace> {
    let amplitude = shape.amplitude(n)?;
    if duration < 10.0 * shape.tau_rise {
        return Err(Error::DurationTooShort {
            duration,
            reason: format!(
                "rising edge needs at least 10·tau_rise = {:e} s",
                10.0 * shape.tau_rise
            ),
        });
    }
    let mut samples = vec![0.0; sample_count(sample_rate, duration)?];
    shape.accumulate(amplitude, 0.0, sample_rate, &mut samples);
    Ok(Trace::from_parts(sample_rate, 0.0, samples))
}

/// Linear superposition of the scheduled pulses over `[0, duration)`.
pub fn synthesize_trace(
    shape: &PulseShape,
    schedule: &EventSchedule,
    sample_rate: f64,
    duration: f64,
) -> Result<Trace> {
    let mut samples = vec![0.0; sample_count(sample_rate, duration)?];
    for &(arrival, n) in schedule.events() {
        if !(0.0..duration).contains(&arrival) {
            return Err(Error::EventOutsideWindow {
                time: arrival,
                duration,
            });
        }
        let amplitude = shape.amplitude(n)?;
        shape.accumulate(amplitude, arrival, sample_rate, &mut samples);
    }
    Ok(Trace::from_parts(sample_rate, 0.0, samples))
}

/// Adds i.i.d. `N(0, σ²)` noise drawn from a ChaCha8 stream seeded by
/// `noise.seed`.
pub fn add_noise(trace: &Trace, noise: &NoiseModel) -> Trace {
    if noise.sigma == 0.0 {
        return trace.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let normal = Normal::new(0.0, noise.sigma).expect("sigma validated");
    let samples = trace
        .samples
        .iter()
        .map(|v| v + normal.sample(&mut rng))
        .collect();
    Trace::from_parts(trace.sample_rate, trace.start_time, samples)
}

/// Output pulse height `V_n = n·I_B·Z₀ / (N + Z₀/R_S)` in millivolts.
pub fn electrical_amplitude(config: &ReadoutConfig, n: u32) -> Result<f64> {
    config.validate()?;
    if n < 1 || n > config.num_pixels {
        return Err(Error::PhotonNumberOutOfRange {
            n,
            max: config.num_pixels,
        });
    }
    let volts = n as f64 * config.bias_current * config.line_impedance
        / (config.num_pixels as f64 + config.load_ratio());
    Ok(volts * 1.0e3)
}
