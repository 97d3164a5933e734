//! Run configuration file.
//!
//! TOML, one table per concern. Every physical quantity carries its unit in
//! the key name. Missing keys take nominal defaults.
//!
//! ```toml
//! seed = 1
//!
//! [pulse]
//! tau_rise_ns = 0.21
//! tau_fall_ns = 25.0
//! a1_mv = 3.0              # linear table A_n = n·a1_mv, unless
//! # amplitudes_mv = [...]  # an explicit table is given
//!
//! [noise]
//! sigma_mv = 0.40
//!
//! [readout]
//! num_pixels = 6
//! bias_current_ua = 10.0
//! line_impedance_ohm = 50.0
//! shunt_resistance_ohm = 52.0
//!
//! [acquisition]
//! sample_rate_hz = 5e9
//! duration_ns = 200.0
//! pulse_offset_ns = 20.0
//! peak_window_ns = 5.0
//!
//! [filter]
//! kind = "matched"         # matched | lowpass | none
//! template_duration_ns = 125.0
//! normalization = "unit_energy"
//! # cutoff_hz = 2e8        # lowpass only
//! lowpass = "brickwall_fft"
//!
//! [experiment]
//! trials = 100000
//! mu = 5.7
//!
//! [simulate]
//! traces = 100
//!
//! [sweep]
//! cutoffs_hz = []          # empty: 20 log-spaced from 1 MHz to 1 GHz
//! ```

use std::path::Path;

use pnr_core::discrimination::{ClassifyMode, JitterMethod};
use pnr_core::experiments::{ExperimentConfig, FilterSpec, DEFAULT_HISTOGRAM_BINS};
use pnr_core::filtering::{LowpassKind, Normalization};
use pnr_core::signal_model::{NoiseModel, PulseShape, ReadoutConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: u64,
    pub pulse: PulseSection,
    pub noise: NoiseSection,
    pub readout: ReadoutSection,
    pub acquisition: AcquisitionSection,
    pub filter: FilterSection,
    pub experiment: ExperimentSection,
    pub simulate: SimulateSection,
    pub sweep: SweepSection,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            pulse: PulseSection::default(),
            noise: NoiseSection::default(),
            readout: ReadoutSection::default(),
            acquisition: AcquisitionSection::default(),
            filter: FilterSection::default(),
            experiment: ExperimentSection::default(),
            simulate: SimulateSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseSection {
    pub tau_rise_ns: f64,
    pub tau_fall_ns: f64,
    pub a1_mv: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitudes_mv: Option<Vec<f64>>,
    pub peak_normalized: bool,
}

impl Default for PulseSection {
    fn default() -> Self {
        Self {
            tau_rise_ns: 0.21,
            tau_fall_ns: 25.0,
            a1_mv: 3.0,
            amplitudes_mv: None,
            peak_normalized: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_mv: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { sigma_mv: 0.40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutSection {
    pub num_pixels: u32,
    pub bias_current_ua: f64,
    pub line_impedance_ohm: f64,
    pub shunt_resistance_ohm: f64,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        Self {
            num_pixels: 6,
            bias_current_ua: 10.0,
            line_impedance_ohm: 50.0,
            shunt_resistance_ohm: 52.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub sample_rate_hz: f64,
    pub duration_ns: f64,
    pub pulse_offset_ns: f64,
    pub peak_window_ns: f64,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        Self {
            sample_rate_hz: 5e9,
            duration_ns: 200.0,
            pulse_offset_ns: 20.0,
            peak_window_ns: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Matched,
    Lowpass,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub kind: FilterKind,
    /// Defaults to five fall times.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template_duration_ns: Option<f64>,
    pub normalization: Normalization,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff_hz: Option<f64>,
    pub lowpass: LowpassKind,
}

impl Default for FilterSection {
    fn default() -> Self {
        Self {
            kind: FilterKind::Matched,
            template_duration_ns: None,
            normalization: Normalization::UnitEnergy,
            cutoff_hz: None,
            lowpass: LowpassKind::BrickwallFft,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub trials: usize,
    pub snr_trials: usize,
    pub jitter_trials: usize,
    pub mu: f64,
    /// 0 selects Freedman–Diaconis.
    pub histogram_bins: usize,
    pub jitter_estimator: JitterMethod,
    pub random_phase: bool,
    pub classify: ClassifyMode,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            trials: 100_000,
            snr_trials: 10_000,
            jitter_trials: 2_000,
            mu: 5.7,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            jitter_estimator: JitterMethod::GaussianFit,
            random_phase: false,
            classify: ClassifyMode::Likelihood,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub traces: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self { traces: 100 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub cutoffs_hz: Vec<f64>,
}

/// Command-line `--filter` value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterOverride {
    Matched,
    Lowpass(f64),
    None,
}

impl std::str::FromStr for FilterOverride {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "matched" => Ok(Self::Matched),
            "none" => Ok(Self::None),
            _ => {
                let hz = s
                    .strip_prefix("lowpass:")
                    .ok_or_else(|| format!("expected matched, none or lowpass:<hz>, got `{s}`"))?;
                let hz: f64 = hz.parse().map_err(|_| format!("bad cutoff `{hz}`"))?;
                if !(hz > 0.0 && hz.is_finite()) {
                    return Err(format!("cutoff must be positive, got {hz}"));
                }
                Ok(Self::Lowpass(hz))
            }
        }
    }
}

/// Config-file key for a core parameter name.
fn key_for(name: &str) -> &'static str {
    match name {
        "tau_rise" => "pulse.tau_rise_ns",
        "tau_fall" => "pulse.tau_fall_ns",
        "amplitudes" => "pulse.amplitudes_mv",
        "sigma" => "noise.sigma_mv",
        "num_pixels" => "readout.num_pixels",
        "bias_current" => "readout.bias_current_ua",
        "line_impedance" => "readout.line_impedance_ohm",
        "shunt_resistance" => "readout.shunt_resistance_ohm",
        "sample_rate" => "acquisition.sample_rate_hz",
        "pulse_offset" => "acquisition.pulse_offset_ns",
        "template_duration" => "filter.template_duration_ns",
        "cutoff" => "filter.cutoff_hz",
        "trials" => "experiment.trials",
        "mu" => "experiment.mu",
        "histogram_bins" => "experiment.histogram_bins",
        _ => "",
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> CliError {
    CliError::Config(format!("`{key}`: {}", reason.into()))
}

/// Rewrites a core validation error in terms of config-file keys.
fn config_error(e: pnr_core::Error) -> CliError {
    match e {
        pnr_core::Error::InvalidParameter { name, reason } => {
            let key = key_for(name);
            if key.is_empty() {
                invalid(name, reason)
            } else {
                invalid(key, reason)
            }
        }
        pnr_core::Error::DurationTooShort { reason, .. } => {
            invalid("acquisition.duration_ns", reason)
        }
        pnr_core::Error::CutoffOutOfRange { cutoff, nyquist } => invalid(
            "filter.cutoff_hz",
            format!("{cutoff} Hz outside (0, {nyquist}] Hz"),
        ),
        other => CliError::Config(other.to_string()),
    }
}

impl FileConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_overrides(&mut self, seed: Option<u64>, filter: Option<FilterOverride>) {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        match filter {
            Some(FilterOverride::Matched) => self.filter.kind = FilterKind::Matched,
            Some(FilterOverride::None) => self.filter.kind = FilterKind::None,
            Some(FilterOverride::Lowpass(hz)) => {
                self.filter.kind = FilterKind::Lowpass;
                self.filter.cutoff_hz = Some(hz);
            }
            None => {}
        }
    }

    pub fn pulse_shape(&self) -> Result<PulseShape, CliError> {
        let p = &self.pulse;
        if !(p.tau_rise_ns < p.tau_fall_ns) {
            return Err(invalid(
                "pulse.tau_rise_ns",
                format!(
                    "must be smaller than pulse.tau_fall_ns ({} ≥ {})",
                    p.tau_rise_ns, p.tau_fall_ns
                ),
            ));
        }
        let amplitudes = match &p.amplitudes_mv {
            Some(table) => table.clone(),
            None => {
                if !(p.a1_mv > 0.0 && p.a1_mv.is_finite()) {
                    return Err(invalid("pulse.a1_mv", "must be positive"));
                }
                (1..=self.readout.num_pixels)
                    .map(|n| n as f64 * p.a1_mv)
                    .collect()
            }
        };
        PulseShape::new(
            p.tau_rise_ns / 1e9,
            p.tau_fall_ns / 1e9,
            amplitudes,
            p.peak_normalized,
        )
        .map_err(config_error)
    }

    fn filter_spec(&self, shape: &PulseShape) -> Result<FilterSpec, CliError> {
        let f = &self.filter;
        Ok(match f.kind {
            FilterKind::None => FilterSpec::None,
            FilterKind::Matched => FilterSpec::Matched {
                normalization: f.normalization,
                template_duration: f
                    .template_duration_ns
                    .map(|ns| ns / 1e9)
                    .unwrap_or(5.0 * shape.tau_fall()),
            },
            FilterKind::Lowpass => FilterSpec::Lowpass {
                cutoff: f
                    .cutoff_hz
                    .ok_or_else(|| invalid("filter.cutoff_hz", "required when kind = \"lowpass\""))?,
                lowpass: f.lowpass,
            },
        })
    }

    /// The validated core configuration.
    pub fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let shape = self.pulse_shape()?;
        let filter = self.filter_spec(&shape)?;
        let e = &self.experiment;
        let a = &self.acquisition;
        let config = ExperimentConfig {
            filter,
            shape,
            noise: NoiseModel::new(self.noise.sigma_mv, 0).map_err(config_error)?,
            readout: ReadoutConfig {
                num_pixels: self.readout.num_pixels,
                bias_current: self.readout.bias_current_ua / 1e6,
                line_impedance: self.readout.line_impedance_ohm,
                shunt_resistance: self.readout.shunt_resistance_ohm,
            },
            trials: e.trials,
            snr_trials: e.snr_trials,
            jitter_trials: e.jitter_trials,
            seed: self.seed,
            sample_rate: a.sample_rate_hz,
            duration: a.duration_ns / 1e9,
            pulse_offset: a.pulse_offset_ns / 1e9,
            peak_window: a.peak_window_ns / 1e9,
            histogram_bins: e.histogram_bins,
            mu: e.mu,
            jitter_method: e.jitter_estimator,
            random_phase: e.random_phase,
            classify: e.classify,
            template_overrides: Vec::new(),
        };
        config.validate().map_err(config_error)?;
        Ok(config)
    }

    /// Sweep cutoffs from the file, or 20 log-spaced from 1 MHz to 1 GHz.
    pub fn sweep_cutoffs(&self) -> Vec<f64> {
        if self.sweep.cutoffs_hz.is_empty() {
            log_spaced(1e6, 1e9, 20)
        } else {
            self.sweep.cutoffs_hz.clone()
        }
    }
}

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

/// `--cutoffs` value: comma-separated Hz, or `log:<lo>:<hi>:<count>`.
pub fn parse_cutoffs(s: &str) -> Result<Vec<f64>, CliError> {
    let usage = |m: String| CliError::Usage(format!("--cutoffs: {m}"));
    if let Some(rest) = s.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(usage("expected log:<lo_hz>:<hi_hz>:<count>".into()));
        }
        let lo: f64 = parts[0].parse().map_err(|_| usage(format!("bad value `{}`", parts[0])))?;
        let hi: f64 = parts[1].parse().map_err(|_| usage(format!("bad value `{}`", parts[1])))?;
        let count: usize = parts[2].parse().map_err(|_| usage(format!("bad count `{}`", parts[2])))?;
        if !(lo > 0.0 && hi > lo) || count == 0 {
            return Err(usage("need 0 < lo < hi and count ≥ 1".into()));
        }
        return Ok(log_spaced(lo, hi, count));
    }
    s.split(',')
        .map(|v| {
            let v = v.trim();
            v.parse::<f64>().map_err(|_| usage(format!("bad value `{v}`")))
        })
        .collect()
}
