//! Multi-Gaussian least-squares fit to histogram counts.
//!
//! The model is `f(x) = Σ a_k exp(-(x - p_k)² / (2σ_k²))` evaluated at bin
//! centres. Parameters are optimised with Levenberg–Marquardt in
//! `(ln a, p, ln σ)` so weights and widths stay positive.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::histogram::AmplitudeHistogram;
use crate::error::{Error, Result};

pub const MAX_FIT_ITERATIONS: usize = 500;
const RELATIVE_TOLERANCE: f64 = 1e-8;
const SMOOTHING_BINS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    /// Peak height in counts per bin.
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl GaussianComponent {
    pub fn eval(&self, x: f64) -> f64 {
        self.weight * (-(x - self.mean).powi(2) / (2.0 * self.std * self.std)).exp()
    }

    /// Number of events under the component for bins of width `bin_width`.
    pub fn area(&self, bin_width: f64) -> f64 {
        self.weight * self.std * (2.0 * std::f64::consts::PI).sqrt() / bin_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    components: Vec<GaussianComponent>,
    /// `‖y - f‖ / ‖y‖` over the fitted bins.
    residual_norm: f64,
    iterations: usize,
}

impl MixtureFit {
    /// Sorts by mean and checks the invariants.
    pub fn from_components(
        mut components: Vec<GaussianComponent>,
        residual_norm: f64,
        iterations: usize,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidComponentCount(0));
        }
        components.sort_by(|a, b| a.mean.total_cmp(&b.mean));
        if components
            .iter()
            .any(|c| !(c.weight > 0.0 && c.std > 0.0 && c.mean.is_finite()))
        {
            return Err(Error::DegenerateFit(
                "weights and widths must be positive and finite".into(),
            ));
        }
        if components.windows(2).any(|w| !(w[1].mean > w[0].mean)) {
            return Err(Error::DegenerateFit("two components share a mean".into()));
        }
        Ok(Self {
            components,
            residual_norm,
            iterations,
        })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.mean).collect()
    }

    pub fn stds(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.std).collect()
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.eval(x)).sum()
    }
}

/// Peaks of the smoothed histogram ranked by topographic prominence; the
/// `k` most prominent, sorted by position. Falls back to evenly spaced
/// components when fewer than `k` maxima exist.
pub fn initial_components(hist: &AmplitudeHistogram, k: usize) -> Vec<GaussianComponent> {
    initial_components_smoothed(hist, k, SMOOTHING_BINS)
}

fn evenly_spaced(hist: &AmplitudeHistogram, s: &[f64], k: usize) -> Vec<GaussianComponent> {
    let n = s.len();
    let (lo, hi) = (hist.bin_edges()[0], hist.bin_edges()[n]);
    let span = hi - lo;
    let height = s.iter().cloned().fold(0.0, f64::max).max(1.0);
    (0..k)
        .map(|j| GaussianComponent {
            weight: height,
            mean: lo + span * (j as f64 + 0.5) / k as f64,
            std: (span / (4.0 * k as f64)).max(hist.bin_width()),
        })
        .collect()
}

fn initial_components_smoothed(
    hist: &AmplitudeHistogram,
    k: usize,
    smoothing: usize,
) -> Vec<GaussianComponent> {
    let s = hist.smoothed(smoothing);
    let x = hist.centers();
    let n = s.len();
    let width = hist.bin_width();

    let mut maxima = Vec::new();
    let mut i = 0;
    while i < n {
        // treat plateaus as one maximum located at their centre
        let mut j = i;
        while j + 1 < n && s[j + 1] == s[i] {
            j += 1;
        }
        let left_lower = i == 0 || s[i - 1] < s[i];
        let right_lower = j + 1 == n || s[j + 1] < s[j];
        if left_lower && right_lower && s[i] > 0.0 {
            maxima.push((i + j) / 2);
        }
        i = j + 1;
    }

    let prominence = |p: usize| {
        let h = s[p];
        let mut left_min = h;
        let mut l = p;
        while l > 0 && s[l - 1] <= h {
            l -= 1;
            left_min = left_min.min(s[l]);
        }
        let mut right_min = h;
        let mut r = p;
        while r + 1 < n && s[r + 1] <= h {
            r += 1;
            right_min = right_min.min(s[r]);
        }
        h - left_min.max(right_min)
    };

    if maxima.len() < k {
        return evenly_spaced(hist, &s, k);
    }

    let mut ranked: Vec<(usize, f64)> = maxima.iter().map(|&p| (p, prominence(p))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut chosen: Vec<usize> = ranked.iter().take(k).map(|&(p, _)| p).collect();
    chosen.sort_unstable();

    chosen
        .iter()
        .map(|&p| {
            let half = s[p] / 2.0;
            let mut l = p;
            while l > 0 && s[l] > half {
                l -= 1;
            }
            let mut r = p;
            while r + 1 < n && s[r] > half {
                r += 1;
            }
            let hw = ((p - l).min(r - p) as f64 * width).max(width);
            GaussianComponent {
                weight: s[p],
                mean: x[p],
                std: hw / (2.0 * 2f64.ln()).sqrt(),
            }
        })
        .collect()
}

fn model_and_jacobian(
    x: &[f64],
    theta: &DVector<f64>,
    k: usize,
    jac: Option<&mut DMatrix<f64>>,
) -> Vec<f64> {
    let mut f = vec![0.0; x.len()];
    let mut jac = jac;
    for c in 0..k {
        let a = theta[3 * c].exp();
        let p = theta[3 * c + 1];
        let s = theta[3 * c + 2].exp();
        let inv_s2 = 1.0 / (s * s);
        for (i, &xi) in x.iter().enumerate() {
            let d = xi - p;
            let g = a * (-0.5 * d * d * inv_s2).exp();
            f[i] += g;
            if let Some(j) = jac.as_deref_mut() {
                j[(i, 3 * c)] = g;
                j[(i, 3 * c + 1)] = g * d * inv_s2;
                j[(i, 3 * c + 2)] = g * d * d * inv_s2;
            }
        }
    }
    f
}

fn ssr(y: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Prominence starts at increasing smoothing widths, then evenly spaced.
fn automatic_starts(hist: &AmplitudeHistogram, k: usize) -> Vec<Vec<GaussianComponent>> {
    let mut starts: Vec<Vec<GaussianComponent>> = Vec::new();
    let mut width = SMOOTHING_BINS;
    while width <= (hist.bin_count() / k).max(SMOOTHING_BINS) {
        let c = initial_components_smoothed(hist, k, width);
        if !starts.contains(&c) {
            starts.push(c);
        }
        width *= 3;
    }
    let even = evenly_spaced(hist, &hist.smoothed(SMOOTHING_BINS), k);
    if !starts.contains(&even) {
        starts.push(even);
    }
    starts
}

/// Least-squares fit of `k` Gaussians to the histogram counts. Without an
/// explicit `init`, several starting points are tried and the converged fit
/// with the smallest residual wins.
///
/// Converges when an accepted step changes the residual sum of squares by
/// less than 1e-8 relative, or when no downhill step exists at machine
/// precision; fails after [`MAX_FIT_ITERATIONS`].
pub fn fit_gaussian_mixture(
    hist: &AmplitudeHistogram,
    k: usize,
    init: Option<&[GaussianComponent]>,
) -> Result<MixtureFit> {
    if k == 0 {
        return Err(Error::InvalidComponentCount(0));
    }
    let nonzero = hist.nonzero_bins();
    if nonzero < 3 * k {
        return Err(Error::TooFewBins {
            nonzero,
            required: 3 * k,
            components: k,
        });
    }
    let starts = match init {
        Some(c) if c.len() == k => vec![c.to_vec()],
        Some(c) => return Err(Error::InvalidComponentCount(c.len())),
        None => automatic_starts(hist, k),
    };
    if starts[0].iter().any(|c| !(c.weight > 0.0 && c.std > 0.0)) {
        return Err(Error::invalid("init", "weights and widths must be positive"));
    }

    let x = hist.centers();
    let y: Vec<f64> = hist.counts().iter().map(|&c| c as f64).collect();
    let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = |cost: f64| if y_norm > 0.0 { cost.sqrt() / y_norm } else { 0.0 };

    let mut best: Option<Descent> = None;
    let mut last_failure = None;
    for start in starts {
        let d = descend(&x, &y, &start);
        if !d.converged {
            last_failure = Some((d.iterations, residual(d.cost)));
            continue;
        }
        if d.components.windows(2).any(|w| w[0].mean == w[1].mean)
            || d.components.iter().any(|c| !(c.std > 0.0 && c.std.is_finite()))
        {
            continue;
        }
        if best.as_ref().is_none_or(|b| d.cost < b.cost) {
            best = Some(d);
        }
    }
    match best {
        Some(d) => MixtureFit::from_components(d.components, residual(d.cost), d.iterations),
        None => match last_failure {
            Some((iterations, residual_norm)) => Err(Error::NonConvergence {
                iterations,
                residual_norm,
            }),
            None => Err(Error::DegenerateFit("every start collapsed".into())),
        },
    }
}

struct Descent {
    components: Vec<GaussianComponent>,
    cost: f64,
    iterations: usize,
    converged: bool,
}

/// Levenberg–Marquardt over `(ln a, p, ln σ)` per component.
fn descend(x: &[f64], y: &[f64], start: &[GaussianComponent]) -> Descent {
    let k = start.len();
    let m = 3 * k;
    let mut theta = DVector::from_iterator(
        m,
        start
            .iter()
            .flat_map(|c| [c.weight.ln(), c.mean, c.std.ln()]),
    );
    let mut jac = DMatrix::zeros(x.len(), m);
    let mut f = model_and_jacobian(x, &theta, k, Some(&mut jac));
    let mut cost = ssr(y, &f);
    let mut lambda = 1e-3;
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    while !converged && iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        let r = DVector::from_iterator(x.len(), y.iter().zip(&f).map(|(a, b)| a - b));
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * r;
        let mut accepted = false;
        while !accepted {
            let mut lhs = jtj.clone();
            for d in 0..m {
                lhs[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let step = match lhs.cholesky() {
                Some(ch) => ch.solve(&grad),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break;
                    }
                    continue;
                }
            };
            let trial = &theta + &step;
            let f_trial = model_and_jacobian(x, &trial, k, None);
            let cost_trial = ssr(y, &f_trial);
            if cost_trial.is_finite() && cost_trial < cost {
                let rel = (cost - cost_trial) / cost;
                theta = trial;
                f = model_and_jacobian(x, &theta, k, Some(&mut jac));
                cost = cost_trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < RELATIVE_TOLERANCE || cost == 0.0 {
                    converged = true;
                }
            } else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break;
                }
            }
        }
        if !accepted {
            // no downhill step left: a minimum at working precision
            converged = true;
        }
    }

    Descent {
        components: (0..k)
            .map(|c| GaussianComponent {
                weight: theta[3 * c].exp(),
                mean: theta[3 * c + 1],
                std: theta[3 * c + 2].exp(),
            })
            .collect(),
        cost,
        iterations,
        converged,
    }
}
