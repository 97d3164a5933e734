//! Matched and low-pass filtering, plus the spectral estimate used to locate
//! the signal/noise crossing frequency.
//!
//! # Time alignment
//!
//! [`apply_filter`] returns the full discrete convolution `y = r ⊗ h` of
//! length `len(r) + len(h) - 1`. The output is stamped with
//! `start_time = input.start_time - (len(h) - 1) / fs`, so for a matched
//! template the peak produced by an isolated pulse lands on the pulse's
//! arrival time. Peak times read off a matched-filter output are arrival
//! times directly.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_model::{PulseShape, Trace};

/// Kernels up to this many taps are convolved directly.
pub const DIRECT_CONVOLUTION_MAX_TAPS: usize = 64;

/// Fraction of the pulse energy a matched template must capture.
pub const MIN_TEMPLATE_ENERGY_FRACTION: f64 = 0.99;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex<f64>], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

fn to_complex(x: &[f64], len: usize) -> Vec<Complex<f64>> {
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    buf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    UnitEnergy,
    UnitPeak,
    Raw,
}

impl Normalization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Normalization::UnitEnergy => "unit_energy",
            Normalization::UnitPeak => "unit_peak",
            Normalization::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unit_energy" => Some(Normalization::UnitEnergy),
            "unit_peak" => Some(Normalization::UnitPeak),
            "raw" => Some(Normalization::Raw),
            _ => None,
        }
    }
}

/// Discrete FIR impulse response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterKernel {
    taps: Vec<f64>,
    sample_rate: f64,
    normalization: Normalization,
}

impl FilterKernel {
    /// Builds a kernel; `UnitEnergy` and `UnitPeak` taps are rescaled to
    /// satisfy their normalization.
    pub fn new(taps: Vec<f64>, sample_rate: f64, normalization: Normalization) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::invalid("taps", "kernel must have at least one tap"));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("taps", "all taps must be finite"));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::invalid("sample_rate", "must be positive"));
        }
        let scale = match normalization {
            Normalization::UnitEnergy => taps.iter().map(|t| t * t).sum::<f64>().sqrt(),
            Normalization::UnitPeak => taps.iter().fold(0.0f64, |m, t| m.max(t.abs())),
            Normalization::Raw => 1.0,
        };
        if scale == 0.0 {
            return Err(Error::invalid("taps", "cannot normalize an all-zero kernel"));
        }
        let taps = if scale == 1.0 {
            taps
        } else {
            taps.into_iter().map(|t| t / scale).collect()
        };
        Ok(Self {
            taps,
            sample_rate,
            normalization,
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// `t0 = taps / fs`.
    pub fn duration(&self) -> f64 {
        self.taps.len() as f64 / self.sample_rate
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    /// Relabels already-normalized taps without rescaling them.
    pub(crate) fn with_normalization_label(self, normalization: Normalization) -> Self {
        Self {
            normalization,
            ..self
        }
    }
}

/// A kernel prepared for repeated filtering of equal-length signals; the
/// kernel spectrum is computed once. Output is bit-identical to
/// [`convolve`].
#[derive(Debug, Clone)]
pub struct PreparedFir {
    kernel: FilterKernel,
    signal_len: usize,
    spectrum: Option<Vec<Complex<f64>>>,
}

impl PreparedFir {
    pub fn new(kernel: FilterKernel, signal_len: usize) -> Self {
        let spectrum = (kernel.len() > DIRECT_CONVOLUTION_MAX_TAPS && signal_len > 0).then(|| {
            let n = (signal_len + kernel.len() - 1).next_power_of_two();
            let mut b = to_complex(kernel.taps(), n);
            fft_in_place(&mut b, false);
            b
        });
        Self {
            kernel,
            signal_len,
            spectrum,
        }
    }

    pub fn kernel(&self) -> &FilterKernel {
        &self.kernel
    }

    pub fn apply(&self, trace: &Trace) -> Result<Trace> {
        let spectrum = match &self.spectrum {
            Some(s) if trace.len() == self.signal_len => s,
            _ => return apply_filter(trace, &self.kernel),
        };
        if trace.sample_rate() != self.kernel.sample_rate() {
            return Err(Error::SampleRateMismatch {
                trace: trace.sample_rate(),
                kernel: self.kernel.sample_rate(),
            });
        }
        let out_len = trace.len() + self.kernel.len() - 1;
        let n = spectrum.len();
        let mut a = to_complex(trace.samples(), n);
        fft_in_place(&mut a, false);
        for (x, y) in a.iter_mut().zip(spectrum) {
            *x *= y;
        }
        fft_in_place(&mut a, true);
        let scale = 1.0 / n as f64;
        let out = a[..out_len].iter().map(|c| c.re * scale).collect();
        let start =
            trace.start_time() - (self.kernel.len() - 1) as f64 / self.kernel.sample_rate();
        Ok(Trace::from_parts(trace.sample_rate(), start, out))
    }
}

/// Energy of the unit pulse on `[0, window]` divided by its total energy,
/// from the closed-form integral of the squared bi-exponential.
pub fn template_energy_fraction(shape: &PulseShape, window: f64) -> f64 {
    let (r, f) = (shape.tau_rise(), shape.tau_fall());
    let c = r * f / (r + f);
    // ∫₀ᵀ (e^{-t/f} - e^{-t/r})² dt
    let partial = |t: f64| {
        f / 2.0 * (1.0 - (-2.0 * t / f).exp()) + r / 2.0 * (1.0 - (-2.0 * t / r).exp())
            - 2.0 * c * (1.0 - (-t / c).exp())
    };
    partial(window) / (f / 2.0 + r / 2.0 - 2.0 * c)
}

/// Time-reversed sampled unit pulse `h[k] = u((L - 1 - k) / fs)`.
pub fn build_matched_template(
    shape: &PulseShape,
    sample_rate: f64,
    duration: f64,
    normalization: Normalization,
) -> Result<FilterKernel> {
    let fraction = template_energy_fraction(shape, duration);
    if !(fraction >= MIN_TEMPLATE_ENERGY_FRACTION) {
        return Err(Error::DurationTooShort {
            duration,
            reason: format!(
                "template captures {:.4} of the pulse energy, {} required",
                fraction, MIN_TEMPLATE_ENERGY_FRACTION
            ),
        });
    }
    let len = (duration * sample_rate).round() as usize;
    if len < 2 {
        return Err(Error::DurationTooShort {
            duration,
            reason: "template shorter than two samples".into(),
        });
    }
    let mut taps = vec![0.0; len];
    shape.accumulate(1.0, 0.0, sample_rate, &mut taps);
    taps.reverse();
    FilterKernel::new(taps, sample_rate, normalization)
}

/// One matched template for all photon numbers, with optional per-`n`
/// replacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBank {
    default: FilterKernel,
    overrides: Vec<(u32, FilterKernel)>,
}

impl TemplateBank {
    pub fn new(default: FilterKernel) -> Self {
        Self {
            default,
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, n: u32, kernel: FilterKernel) -> Self {
        self.overrides.retain(|(m, _)| *m != n);
        self.overrides.push((n, kernel));
        self
    }

    pub fn default_kernel(&self) -> &FilterKernel {
        &self.default
    }

    pub fn for_photon_number(&self, n: u32) -> &FilterKernel {
        self.overrides
            .iter()
            .find(|(m, _)| *m == n)
            .map(|(_, k)| k)
            .unwrap_or(&self.default)
    }
}

pub fn convolve_direct(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    if signal.is_empty() || kernel.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; signal.len() + kernel.len() - 1];
    for (i, &x) in signal.iter().enumerate() {
        for (j, &h) in kernel.iter().enumerate() {
            out[i + j] += x * h;
        }
    }
    out
}

pub fn convolve_fft(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    if signal.is_empty() || kernel.is_empty() {
        return Vec::new();
    }
    let out_len = signal.len() + kernel.len() - 1;
    let n = out_len.next_power_of_two();
    let mut a = to_complex(signal, n);
    let mut b = to_complex(kernel, n);
    fft_in_place(&mut a, false);
    fft_in_place(&mut b, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    fft_in_place(&mut a, true);
    let scale = 1.0 / n as f64;
    a[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Full linear convolution; FFT-based above
/// [`DIRECT_CONVOLUTION_MAX_TAPS`] taps.
pub fn convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    if kernel.len() > DIRECT_CONVOLUTION_MAX_TAPS {
        convolve_fft(signal, kernel)
    } else {
        convolve_direct(signal, kernel)
    }
}

/// `y = r ⊗ h`; see the module docs for the output time stamps.
pub fn apply_filter(trace: &Trace, kernel: &FilterKernel) -> Result<Trace> {
    if trace.sample_rate() != kernel.sample_rate() {
        return Err(Error::SampleRateMismatch {
            trace: trace.sample_rate(),
            kernel: kernel.sample_rate(),
        });
    }
    let out = convolve(trace.samples(), kernel.taps());
    let start = trace.start_time() - (kernel.len() - 1) as f64 / kernel.sample_rate();
    Ok(Trace::from_parts(trace.sample_rate(), start, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowpassKind {
    BrickwallFft,
    SinglePole,
}

/// Zero-phase brick-wall (bins strictly above `cutoff` removed) or
/// first-order recursive low-pass with its -3 dB point at `cutoff`.
pub fn apply_lowpass(trace: &Trace, cutoff: f64, kind: LowpassKind) -> Result<Trace> {
    let fs = trace.sample_rate();
    let nyquist = fs / 2.0;
    if !(cutoff > 0.0 && cutoff <= nyquist) {
        return Err(Error::CutoffOutOfRange { cutoff, nyquist });
    }
    let out = match kind {
        LowpassKind::BrickwallFft => brickwall(trace.samples(), fs, cutoff),
        LowpassKind::SinglePole => single_pole(trace.samples(), fs, cutoff),
    };
    Ok(Trace::from_parts(fs, trace.start_time(), out))
}

/// Circular ideal low-pass over the record; the bin spacing `fs / len`
/// limits how low a cutoff can be resolved.
fn brickwall(x: &[f64], fs: f64, cutoff: f64) -> Vec<f64> {
    let n = x.len();
    let mut buf = to_complex(x, n);
    fft_in_place(&mut buf, false);
    let df = fs / n as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * df;
        if f > cutoff {
            *c = Complex::new(0.0, 0.0);
        }
    }
    fft_in_place(&mut buf, true);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Smoothing factor of `y[i] = y[i-1] + α(x[i] - y[i-1])` whose gain is
/// `1/√2` at `cutoff`.
pub fn single_pole_alpha(fs: f64, cutoff: f64) -> f64 {
    let y = 1.0 - (2.0 * PI * cutoff / fs).cos();
    -y + (y * y + 2.0 * y).sqrt()
}

fn single_pole(x: &[f64], fs: f64, cutoff: f64) -> Vec<f64> {
    let alpha = single_pole_alpha(fs, cutoff);
    // state starts at x[0] so a constant input passes unchanged
    let mut state = x[0];
    x.iter()
        .map(|&v| {
            state += alpha * (v - state);
            state
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / len as f64).cos())
                .collect(),
        }
    }
}

/// One-sided amplitude spectral density, mV/√Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    frequencies: Vec<f64>,
    magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn new(frequencies: Vec<f64>, magnitudes: Vec<f64>) -> Result<Self> {
        if frequencies.len() != magnitudes.len() || frequencies.is_empty() {
            return Err(Error::invalid(
                "spectrum",
                "frequencies and magnitudes must be non-empty and of equal length",
            ));
        }
        if frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("frequencies", "must be strictly increasing"));
        }
        if magnitudes.iter().any(|m| !(*m >= 0.0)) {
            return Err(Error::invalid("magnitudes", "must be non-negative"));
        }
        Ok(Self {
            frequencies,
            magnitudes,
        })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        if self.len() < 2 {
            return 0.0;
        }
        self.frequencies[1] - self.frequencies[0]
    }

    /// `Σ |X(f)|² Δf`, the mean-square value of the analysed record.
    pub fn total_power(&self) -> f64 {
        self.magnitudes.iter().map(|m| m * m).sum::<f64>() * self.bin_width()
    }

    pub fn scaled(&self, factor: f64) -> Spectrum {
        Spectrum {
            frequencies: self.frequencies.clone(),
            magnitudes: self.magnitudes.iter().map(|m| m * factor).collect(),
        }
    }

    /// Averages power across spectra sharing one grid.
    pub fn average(spectra: &[Spectrum]) -> Result<Spectrum> {
        let first = spectra.first().ok_or(Error::EmptyInput)?;
        if spectra.iter().any(|s| s.frequencies != first.frequencies) {
            return Err(Error::GridMismatch);
        }
        let k = spectra.len() as f64;
        let magnitudes = (0..first.len())
            .map(|i| (spectra.iter().map(|s| s.magnitudes[i].powi(2)).sum::<f64>() / k).sqrt())
            .collect();
        Ok(Spectrum {
            frequencies: first.frequencies.clone(),
            magnitudes,
        })
    }
}

/// Welch estimate: Hann window with 50 % overlap for `segments > 1`; a
/// single unwindowed periodogram for `segments == 1`.
pub fn power_spectrum(trace: &Trace, segments: usize) -> Result<Spectrum> {
    let window = if segments > 1 {
        Window::Hann
    } else {
        Window::Rectangular
    };
    power_spectrum_windowed(trace, segments, window)
}

pub fn power_spectrum_windowed(trace: &Trace, segments: usize, window: Window) -> Result<Spectrum> {
    let n = trace.len();
    if segments == 0 {
        return Err(Error::invalid("segments", "must be at least 1"));
    }
    if n < segments {
        return Err(Error::TraceTooShort { len: n, segments });
    }
    let seg_len = if segments == 1 {
        n
    } else {
        2 * n / (segments + 1)
    };
    if seg_len < 2 {
        return Err(Error::TraceTooShort { len: n, segments });
    }
    let step = (seg_len / 2).max(1);
    let fs = trace.sample_rate();
    let w = window.coefficients(seg_len);
    let w_energy: f64 = w.iter().map(|v| v * v).sum();
    let bins = seg_len / 2 + 1;
    let mut power = vec![0.0; bins];
    for s in 0..segments {
        let start = s * step;
        let seg = &trace.samples()[start..start + seg_len];
        let mut buf: Vec<Complex<f64>> = seg
            .iter()
            .zip(&w)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        fft_in_place(&mut buf, false);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p += c.norm_sqr();
        }
    }
    let norm = 1.0 / (segments as f64 * fs * w_energy);
    let even = seg_len % 2 == 0;
    let magnitudes = power
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || (even && k == bins - 1) {
                1.0
            } else {
                2.0
            };
            (p * norm * one_sided).sqrt()
        })
        .collect();
    let frequencies = (0..bins).map(|k| k as f64 * fs / seg_len as f64).collect();
    Ok(Spectrum {
        frequencies,
        magnitudes,
    })
}

/// Lowest frequency where the signal magnitude falls to the noise
/// magnitude, linearly interpolated between bins.
pub fn characteristic_frequency(signal: &Spectrum, noise: &Spectrum) -> Result<f64> {
    if signal.frequencies != noise.frequencies {
        return Err(Error::GridMismatch);
    }
    let diff: Vec<f64> = signal
        .magnitudes
        .iter()
        .zip(&noise.magnitudes)
        .map(|(s, g)| s - g)
        .collect();
    if diff[0] <= 0.0 {
        return Err(Error::NoCrossing);
    }
    let k = diff.iter().position(|&d| d <= 0.0).ok_or(Error::NoCrossing)?;
    let (f0, f1) = (signal.frequencies[k - 1], signal.frequencies[k]);
    let (d0, d1) = (diff[k - 1], diff[k]);
    Ok(f0 + (f1 - f0) * d0 / (d0 - d1))
}
