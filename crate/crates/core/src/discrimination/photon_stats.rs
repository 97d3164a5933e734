//! Fired-pixel statistics of a series array under uniform Poisson
//! illumination.
//!
//! With mean photon number `μ` spread over `N` pixels, each pixel fires
//! with probability `q = 1 - exp(-μ/N)` (several photons on one pixel
//! still fire it once), so the fired count is `Binomial(N, q)`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonStatistics {
    pub num_pixels: u32,
    pub mean_photon_number: f64,
    /// `P(k)` for `k = 0..=N`.
    pub fired_probabilities: Vec<f64>,
}

impl PhotonStatistics {
    pub fn firing_probability(&self) -> f64 {
        -(-self.mean_photon_number / self.num_pixels as f64).exp_m1()
    }

    /// Expected number of fired pixels.
    pub fn mean_fired(&self) -> f64 {
        self.fired_probabilities
            .iter()
            .enumerate()
            .map(|(k, p)| k as f64 * p)
            .sum()
    }

    /// Draws a fired-pixel count by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.fired_probabilities.iter().enumerate() {
            acc += p;
            if u < acc {
                return k as u32;
            }
        }
        // rounding left acc just below 1
        self.fired_probabilities
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(0) as u32
    }
}

pub fn fired_pixel_distribution(mu: f64, num_pixels: u32) -> Result<PhotonStatistics> {
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::invalid("mu", "must be non-negative and finite"));
    }
    if num_pixels < 1 {
        return Err(Error::invalid("num_pixels", "must be at least 1"));
    }
    let n = num_pixels as u64;
    let ln_one_minus_q = -mu / num_pixels as f64;
    let q = -ln_one_minus_q.exp_m1();
    let probs = (0..=n)
        .map(|k| {
            if q == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            (ln_binomial(n, k) + k as f64 * q.ln() + (n - k) as f64 * ln_one_minus_q).exp()
        })
        .collect();
    Ok(PhotonStatistics {
        num_pixels,
        mean_photon_number: mu,
        fired_probabilities: probs,
    })
}

/// Multinomial log-likelihood of `counts` (index = fired pixels) at `mu`,
/// up to a constant.
fn log_likelihood(counts: &[u64], n: u32, mu: f64) -> f64 {
    let ln_one_minus_q = -mu / n as f64;
    let ln_q = (-ln_one_minus_q.exp_m1()).ln();
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| c as f64 * (k as f64 * ln_q + (n as f64 - k as f64) * ln_one_minus_q))
        .sum()
}

/// Maximum-likelihood mean photon number from a fired-pixel histogram
/// (`counts[k]` events with `k` pixels fired, `k = 0..=N`), by golden-section
/// search.
pub fn estimate_mean_photon_number(counts: &[u64], num_pixels: u32) -> Result<f64> {
    if num_pixels < 1 {
        return Err(Error::invalid("num_pixels", "must be at least 1"));
    }
    if counts.len() > num_pixels as usize + 1 {
        return Err(Error::invalid(
            "fired_counts",
            format!("entries beyond k = N = {num_pixels}"),
        ));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    let fired: u64 = counts.iter().enumerate().map(|(k, &c)| k as u64 * c).sum();
    if fired == 0 {
        return Ok(0.0);
    }
    if counts.len() == num_pixels as usize + 1 && counts[num_pixels as usize] == total {
        return Err(Error::Saturated);
    }

    let ll = |mu: f64| log_likelihood(counts, num_pixels, mu);
    // expand until the likelihood turns down
    let mut hi = 1.0;
    while ll(2.0 * hi) > ll(hi) {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Saturated);
        }
    }
    let (mut a, mut b) = (0.0, 2.0 * hi);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (ll(c), ll(d));
    while (b - a) > 1e-10 * b.max(1e-12) {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = ll(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = ll(d);
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mean_photon_number() {
        let s = fired_pixel_distribution(0.0, 6).unwrap();
        assert_eq!(s.fired_probabilities[0], 1.0);
        assert!(s.fired_probabilities[1..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn single_pixel_is_poisson_click() {
        for mu in [0.1, 1.0, 4.0] {
            let s = fired_pixel_distribution(mu, 1).unwrap();
            assert!((s.fired_probabilities[1] - (1.0 - (-mu).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn all_six_fired_at_6_9() {
        let s = fired_pixel_distribution(6.9, 6).unwrap();
        let expected = (1.0 - (-1.15f64).exp()).powi(6);
        assert!((s.fired_probabilities[6] - expected).abs() < 1e-12);
        assert!((s.fired_probabilities[6] - 0.102).abs() < 1e-3);
    }

    #[test]
    fn estimate_edge_cases() {
        assert_eq!(estimate_mean_photon_number(&[10, 0, 0], 2).unwrap(), 0.0);
        assert!(matches!(
            estimate_mean_photon_number(&[0, 0, 7], 2),
            Err(Error::Saturated)
        ));
        assert!(matches!(
            estimate_mean_photon_number(&[0, 0, 0], 2),
            Err(Error::EmptyInput)
        ));
        assert!(estimate_mean_photon_number(&[1, 1, 1, 1], 2).is_err());
    }

    #[test]
    fn estimate_round_trip() {
        let s = fired_pixel_distribution(5.7, 6).unwrap();
        let counts: Vec<u64> = s
            .fired_probabilities
            .iter()
            .map(|p| (p * 1e9).round() as u64)
            .collect();
        let mu = estimate_mean_photon_number(&counts, 6).unwrap();
        assert!((mu - 5.7).abs() < 1e-3, "{mu}");
    }
}
