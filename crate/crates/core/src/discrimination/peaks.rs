use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_model::Trace;

/// One extracted pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    /// Millivolts.
    pub peak_amplitude: f64,
    /// Seconds, sub-sample interpolated.
    pub peak_time: f64,
    pub assigned_n: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Rising,
    Falling,
}

fn check_window(trace: &Trace, window: &Range<usize>) -> Result<()> {
    if window.end > trace.len() || window.start >= window.end {
        return Err(Error::invalid("search_window", "must lie within the trace"));
    }
    if window.len() < 3 {
        return Err(Error::invalid("search_window", "needs at least 3 samples"));
    }
    Ok(())
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

/// Vertex offset (in samples, within ±0.5 for a bracketed maximum) and
/// height of the parabola through three equally spaced samples.
fn parabolic_vertex(y0: f64, y1: f64, y2: f64) -> (f64, f64) {
    let denom = y0 - 2.0 * y1 + y2;
    if denom == 0.0 {
        return (0.0, y1);
    }
    let delta = 0.5 * (y0 - y2) / denom;
    (delta, y1 - 0.25 * (y0 - y2) * delta)
}

/// Discrete argmax in `window` refined by a three-point parabola.
pub fn detect_peak(trace: &Trace, window: Range<usize>) -> Result<DetectionEvent> {
    check_window(trace, &window)?;
    let s = trace.samples();
    let i = window.start + argmax(&s[window.clone()]);
    if i == window.start || i + 1 == window.end {
        return Err(Error::PeakNotBracketed { index: i });
    }
    let (delta, height) = parabolic_vertex(s[i - 1], s[i], s[i + 1]);
    Ok(DetectionEvent {
        peak_amplitude: height,
        peak_time: trace.time_at(i) + delta * trace.dt(),
        assigned_n: None,
    })
}

/// Like [`detect_peak`], but an unbracketed maximum is returned as the raw
/// boundary sample. The flag is true when refinement was possible.
pub fn detect_peak_or_sample(trace: &Trace, window: Range<usize>) -> Result<(DetectionEvent, bool)> {
    match detect_peak(trace, window) {
        Ok(e) => Ok((e, true)),
        Err(Error::PeakNotBracketed { index }) => Ok((
            DetectionEvent {
                peak_amplitude: trace.samples()[index],
                peak_time: trace.time_at(index),
                assigned_n: None,
            },
            false,
        )),
        Err(e) => Err(e),
    }
}

/// First crossing of `threshold` in `direction`, linearly interpolated.
pub fn threshold_crossing_time(trace: &Trace, threshold: f64, direction: Edge) -> Result<f64> {
    threshold_crossing_in(trace, 0..trace.len(), threshold, direction)
}

pub fn threshold_crossing_in(
    trace: &Trace,
    window: Range<usize>,
    threshold: f64,
    direction: Edge,
) -> Result<f64> {
    if window.end > trace.len() || window.len() < 2 {
        return Err(Error::invalid("search_window", "must lie within the trace"));
    }
    let s = &trace.samples()[window.clone()];
    let hit = s.windows(2).position(|w| match direction {
        Edge::Rising => w[0] < threshold && w[1] >= threshold,
        Edge::Falling => w[0] > threshold && w[1] <= threshold,
    });
    let k = hit.ok_or(Error::NoCrossing)?;
    let (a, b) = (s[k], s[k + 1]);
    let frac = (threshold - a) / (b - a);
    Ok(trace.time_at(window.start + k) + frac * trace.dt())
}

/// Last crossing of `threshold` in `direction` inside `window`, i.e. the
/// one closest to the window end.
pub fn last_threshold_crossing_in(
    trace: &Trace,
    window: Range<usize>,
    threshold: f64,
    direction: Edge,
) -> Result<f64> {
    if window.end > trace.len() || window.len() < 2 {
        return Err(Error::invalid("search_window", "must lie within the trace"));
    }
    let s = &trace.samples()[window.clone()];
    let hit = s.windows(2).rposition(|w| match direction {
        Edge::Rising => w[0] < threshold && w[1] >= threshold,
        Edge::Falling => w[0] > threshold && w[1] <= threshold,
    });
    let k = hit.ok_or(Error::NoCrossing)?;
    let (a, b) = (s[k], s[k + 1]);
    let frac = (threshold - a) / (b - a);
    Ok(trace.time_at(window.start + k) + frac * trace.dt())
}

/// Level and time of the steepest rising sample pair of a (noiseless)
/// reference pulse: the midpoint of that pair.
pub fn max_slope_threshold(trace: &Trace) -> Result<(f64, f64)> {
    let s = trace.samples();
    if s.len() < 2 {
        return Err(Error::invalid("trace", "needs at least 2 samples"));
    }
    let (k, _) = s
        .windows(2)
        .map(|w| w[1] - w[0])
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best });
    Ok((
        0.5 * (s[k] + s[k + 1]),
        trace.time_at(k) + 0.5 * trace.dt(),
    ))
}
