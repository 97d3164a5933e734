//! Simulation results checked against independent closed-form predictions.

use std::f64::consts::PI;

use pnr_core::discrimination::max_slope_threshold;
use pnr_core::experiments::{
    run_discrimination_experiment, run_jitter_experiment, spectral_crossing, ExperimentConfig,
    FilterSpec, TimingMethod,
};
use pnr_core::filtering::power_spectrum;
use pnr_core::signal_model::{synthesize_pulse, synthesize_trace, EventSchedule, PulseShape};

/// |U(f)| of the unit-peak bi-exponential, from
/// ∫ (e^{-t/τf} - e^{-t/τr}) e^{-j2πft} dt = τf/(1 + jωτf) - τr/(1 + jωτr).
fn analytic_magnitude(shape: &PulseShape, f: f64) -> f64 {
    let w = 2.0 * PI * f;
    let term = |tau: f64| {
        let d = 1.0 + (w * tau).powi(2);
        (tau / d, -w * tau * tau / d)
    };
    let (fr, fi) = term(shape.tau_fall());
    let (rr, ri) = term(shape.tau_rise());
    ((fr - rr).powi(2) + (fi - ri).powi(2)).sqrt() / shape.raw_peak()
}

#[test]
fn pulse_spectrum_matches_fourier_transform() {
    let shape = PulseShape::nominal();
    let (fs, duration) = (5e9, 2e-6);
    let trace = synthesize_pulse(&shape, 1, fs, duration).unwrap();
    let spec = power_spectrum(&trace, 1).unwrap();
    let a1 = shape.amplitude(1).unwrap();
    let mut checked = 0;
    for (&f, &m) in spec.frequencies().iter().zip(spec.magnitudes()) {
        if f == 0.0 || f > 200e6 {
            continue;
        }
        // one-sided |X|·√(2/T) for a deterministic pulse of length T
        let measured = m * (duration / 2.0).sqrt() / a1;
        let expected = analytic_magnitude(&shape, f);
        assert!(
            (measured - expected).abs() / expected < 0.02,
            "f = {f:e}: {measured:e} vs {expected:e}"
        );
        checked += 1;
    }
    assert!(checked > 300);
}

#[test]
fn characteristic_frequency_matches_analytic_crossing() {
    let cfg = ExperimentConfig::nominal();
    let crossing = spectral_crossing(&cfg, 1, 256).unwrap();
    let a1 = cfg.shape.amplitude(1).unwrap();
    // white noise has flat one-sided density σ√(2/fs)
    let noise = cfg.noise.sigma * (2.0 / cfg.sample_rate).sqrt();
    let signal = |f: f64| a1 * analytic_magnitude(&cfg.shape, f) * (2.0 / cfg.duration).sqrt();
    let (mut lo, mut hi) = (1e6, 2.5e9);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if signal(mid) > noise {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let expected = 0.5 * (lo + hi);
    let got = crossing.characteristic_frequency;
    assert!(
        (got - expected).abs() / expected < 0.10,
        "{got:e} vs {expected:e}"
    );
}

#[test]
fn threshold_jitter_tracks_sigma_over_slope() {
    let cfg = ExperimentConfig {
        jitter_trials: 4000,
        ..ExperimentConfig::nominal().with_filter(FilterSpec::None)
    };
    for n in [1, 3] {
        let clean = synthesize_trace(
            &cfg.shape,
            &EventSchedule::single(cfg.pulse_offset, n).unwrap(),
            cfg.sample_rate,
            cfg.duration,
        )
        .unwrap();
        let s = clean.samples();
        let slope = s
            .windows(2)
            .map(|w| (w[1] - w[0]) * cfg.sample_rate)
            .fold(f64::NEG_INFINITY, f64::max);
        let predicted = 2.355 * cfg.noise.sigma / slope;
        let (level, _) = max_slope_threshold(&clean).unwrap();
        let r = run_jitter_experiment(&cfg, n, TimingMethod::Threshold).unwrap();
        assert_eq!(r.threshold, Some(level));
        let ratio = r.jitter / predicted;
        assert!(
            (1.0 / 1.5..=1.5).contains(&ratio),
            "n = {n}: measured {:e}, predicted {predicted:e}",
            r.jitter
        );
    }
}

#[test]
fn spacing_grows_as_noise_falls() {
    let base = ExperimentConfig {
        trials: 10_000,
        ..ExperimentConfig::nominal()
    };
    let mut previous: Option<Vec<f64>> = None;
    for sigma in [0.4, 0.2, 0.1] {
        let mut cfg = base.clone();
        cfg.noise.sigma = sigma;
        let r = run_discrimination_experiment(&cfg, 5.7).unwrap();
        if let Some(p) = &previous {
            for (now, before) in r.spacings.iter().zip(p) {
                assert!(now > before, "σ = {sigma}: {:?} vs {p:?}", r.spacings);
            }
        }
        previous = Some(r.spacings);
    }
}

#[test]
fn peak_time_jitter_falls_with_photon_number() {
    let cfg = ExperimentConfig {
        jitter_trials: 2000,
        ..ExperimentConfig::nominal()
    };
    let j: Vec<f64> = (1..=5)
        .map(|n| run_jitter_experiment(&cfg, n, TimingMethod::PeakTime).unwrap().jitter)
        .collect();
    assert!(j.windows(2).all(|w| w[1] < w[0]), "{j:?}");
}
