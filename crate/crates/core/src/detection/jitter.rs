//! Detector timing response: a four-component zero-mean Gaussian mixture.
//!
//! The component widths are not published; the defaults below are four
//! moderately spread widths rescaled once so the single-detector response
//! FWHM is exactly 3 ns, which also puts the response standard deviation at
//! the ~1.27 ns implied by a 3 ns FWHM. Coincidence peaks are broadened by
//! the combined response of two detectors (≈4.3 ns FWHM).

use super::DetectionError;
use crate::config::JitterComponent;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::sync::OnceLock;

const NS: f64 = 1.0e6; // fs per ns

/// Zero-mean Gaussian-mixture timing response. Sigmas stored in fs.
#[derive(Debug, Clone)]
pub struct JitterModel {
    weights: Vec<f64>,
    sigmas_fs: Vec<f64>,
}

/// Default four-component mixture, rescaled so the single-detector FWHM is
/// exactly 3 ns.
pub fn default_jitter_components() -> Vec<JitterComponent> {
    static SCALED: OnceLock<Vec<JitterComponent>> = OnceLock::new();
    SCALED
        .get_or_init(|| {
            let weights = [0.4, 0.3, 0.2, 0.1];
            let base_ns = [1.05, 1.20, 1.35, 1.55];
            let base = JitterModel {
                weights: weights.to_vec(),
                sigmas_fs: base_ns.iter().map(|s| s * NS).collect(),
            };
            // FWHM scales linearly with a global sigma scale
            let scale = 3.0 * NS / base.fwhm_fs();
            weights
                .iter()
                .zip(base_ns)
                .map(|(&w, s)| JitterComponent { weight: w, sigma_ns: s * scale })
                .collect()
        })
        .clone()
}

impl JitterModel {
    /// Build from configuration components. Structural validation only;
    /// the 3 ns response-width invariant is enforced at config level via
    /// [`JitterModel::validate_response_width`].
    pub fn from_components(components: &[JitterComponent]) -> Result<Self, DetectionError> {
        if components.is_empty() {
            return Err(DetectionError::InvalidJitter("no components".into()));
        }
        let sum: f64 = components.iter().map(|c| c.weight).sum();
        if (sum - 1.0).abs() > 1.0e-6 {
            return Err(DetectionError::InvalidJitter(format!("weights sum to {sum}, expected 1")));
        }
        for c in components {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(DetectionError::InvalidJitter("weights must be positive".into()));
            }
            if !(c.sigma_ns >= 0.0 && c.sigma_ns.is_finite()) {
                return Err(DetectionError::InvalidJitter("sigmas must be non-negative".into()));
            }
        }
        Ok(JitterModel {
            weights: components.iter().map(|c| c.weight).collect(),
            sigmas_fs: components.iter().map(|c| c.sigma_ns * NS).collect(),
        })
    }

    /// Enforce the 3 ns ± 10% single-detector response width.
    pub fn validate_response_width(&self) -> Result<(), DetectionError> {
        let fwhm_ns = self.fwhm_fs() / NS;
        if (fwhm_ns - 3.0).abs() > 0.3 {
            return Err(DetectionError::InvalidJitter(format!(
                "single-detector FWHM {fwhm_ns:.3} ns outside 3 ns ± 10%"
            )));
        }
        Ok(())
    }

    /// Delta response (no jitter); used by synthetic pipelines and tests.
    pub fn ideal() -> Self {
        JitterModel { weights: vec![1.0], sigmas_fs: vec![0.0] }
    }

    /// The crate-default four-component response (FWHM exactly 3 ns).
    pub fn standard() -> Self {
        Self::from_components(&default_jitter_components())
            .expect("default components are valid")
    }

    pub fn components(&self) -> Vec<JitterComponent> {
        self.weights
            .iter()
            .zip(&self.sigmas_fs)
            .map(|(&w, &s)| JitterComponent { weight: w, sigma_ns: s / NS })
            .collect()
    }

    /// `t` plus one draw from the mixture (fs).
    pub fn apply(&self, t: f64, rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        let mut idx = self.weights.len() - 1;
        for (i, &w) in self.weights.iter().enumerate() {
            cumulative += w;
            if u < cumulative {
                idx = i;
                break;
            }
        }
        let sigma = self.sigmas_fs[idx];
        if sigma == 0.0 {
            t
        } else {
            t + Normal::new(0.0, sigma).unwrap().sample(rng)
        }
    }

    /// Mixture density at `x` fs.
    fn pdf(&self, x: f64) -> f64 {
        let norm = (2.0 * std::f64::consts::PI).sqrt();
        self.weights
            .iter()
            .zip(&self.sigmas_fs)
            .filter(|(_, &s)| s > 0.0)
            .map(|(&w, &s)| w * (-0.5 * (x / s) * (x / s)).exp() / (s * norm))
            .sum()
    }

    /// Standard deviation (fs): sqrt(Σ w σ²) for a zero-mean mixture.
    pub fn std_fs(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.sigmas_fs)
            .map(|(&w, &s)| w * s * s)
            .sum::<f64>()
            .sqrt()
    }

    /// Single-detector full width at half maximum (fs), solved numerically;
    /// the mixture density is even and monotone decreasing in |x|.
    pub fn fwhm_fs(&self) -> f64 {
        fwhm_of_mixture(&self.weights, &self.sigmas_fs)
    }

    /// (weight, sigma) components of the difference of two independent
    /// draws — the timing response of a coincidence between two detectors.
    pub fn pair_components_fs(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for (i, (&wi, &si)) in self.weights.iter().zip(&self.sigmas_fs).enumerate() {
            for (j, (&wj, &sj)) in self.weights.iter().zip(&self.sigmas_fs).enumerate() {
                let _ = (i, j);
                out.push((wi * wj, (si * si + sj * sj).sqrt()));
            }
        }
        out
    }

    /// FWHM (fs) of the two-detector coincidence response.
    pub fn pair_fwhm_fs(&self) -> f64 {
        let comps = self.pair_components_fs();
        let (w, s): (Vec<f64>, Vec<f64>) = comps.into_iter().unzip();
        fwhm_of_mixture(&w, &s)
    }

    /// Probability that a coincidence whose true delay is `center` fs lands
    /// inside the recordable TAC range [0, window] after both detectors'
    /// jitter. Used to predict edge-peak truncation.
    pub fn pair_window_acceptance(&self, center_fs: f64, window_fs: f64) -> f64 {
        self.pair_interval_probability(center_fs, 0.0, window_fs)
    }

    /// Probability that the two-detector coincidence delay for a true delay
    /// `center` falls inside [lo, hi] fs.
    pub fn pair_interval_probability(&self, center_fs: f64, lo_fs: f64, hi_fs: f64) -> f64 {
        let mut acc = 0.0;
        for (w, s) in self.pair_components_fs() {
            if s == 0.0 {
                if (lo_fs..=hi_fs).contains(&center_fs) {
                    acc += w;
                }
            } else {
                let hi = normal_cdf((hi_fs - center_fs) / s);
                let lo = normal_cdf((lo_fs - center_fs) / s);
                acc += w * (hi - lo);
            }
        }
        acc
    }
}

fn fwhm_of_mixture(weights: &[f64], sigmas_fs: &[f64]) -> f64 {
    let model = JitterModel { weights: weights.to_vec(), sigmas_fs: sigmas_fs.to_vec() };
    let peak = model.pdf(0.0);
    if peak == 0.0 {
        return 0.0;
    }
    let target = 0.5 * peak;
    let mut hi = 10.0 * sigmas_fs.iter().cloned().fold(0.0, f64::max);
    if hi == 0.0 {
        return 0.0;
    }
    while model.pdf(hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if model.pdf(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + hi // 2 × half width
}

/// Standard normal CDF via the Abramowitz–Stegun erf approximation
/// (|error| < 1.5e-7, ample for window-acceptance factors).
fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};

    #[test]
    fn default_fwhm_is_3ns() {
        let model = JitterModel::from_components(&default_jitter_components()).unwrap();
        assert!((model.fwhm_fs() / NS - 3.0).abs() < 1.0e-6);
        model.validate_response_width().unwrap();
    }

    #[test]
    fn default_sample_std_matches_analytic_and_3ns_implication() {
        let model = JitterModel::from_components(&default_jitter_components()).unwrap();
        let mut rng = stream(17, StreamKind::Pulse, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let d = model.apply(0.0, &mut rng);
            sum += d;
            sum2 += d * d;
        }
        let mean = sum / n as f64;
        let std = (sum2 / n as f64 - mean * mean).sqrt();
        let analytic = model.std_fs();
        assert!((std / analytic - 1.0).abs() < 0.03, "sample std {std} vs {analytic}");
        // a 3 ns FWHM near-Gaussian response implies σ ≈ 1.27 ns
        assert!((analytic / NS - 1.27).abs() / 1.27 < 0.03, "σ = {} ns", analytic / NS);
    }

    #[test]
    fn two_detector_response_width() {
        let model = JitterModel::from_components(&default_jitter_components()).unwrap();
        let pair_fwhm_ns = model.pair_fwhm_fs() / NS;
        // combined resolution of two detectors: between √2·3 and ~5 ns
        assert!(
            (4.2..=5.0).contains(&pair_fwhm_ns),
            "two-detector FWHM {pair_fwhm_ns} ns"
        );
    }

    #[test]
    fn zero_sigma_is_identity() {
        let model = JitterModel::from_components(&[
            JitterComponent { weight: 0.5, sigma_ns: 0.0 },
            JitterComponent { weight: 0.5, sigma_ns: 0.0 },
        ])
        .unwrap();
        let mut rng = stream(1, StreamKind::Pulse, 0);
        for i in 0..100 {
            let t = i as f64 * 13.2e6;
            assert_eq!(model.apply(t, &mut rng), t);
        }
    }

    #[test]
    fn window_acceptance_limits() {
        let model = JitterModel::from_components(&default_jitter_components()).unwrap();
        // peak deep inside the window: full acceptance
        let a = model.pair_window_acceptance(45.0 * NS, 90.0 * NS);
        assert!(a > 0.999, "central acceptance {a}");
        // peak at the window edge: half
        let b = model.pair_window_acceptance(0.0, 90.0 * NS);
        assert!((b - 0.5).abs() < 1.0e-3, "edge acceptance {b}");
        // far outside: none
        let c = model.pair_window_acceptance(-50.0 * NS, 90.0 * NS);
        assert!(c < 1.0e-6);
    }

    #[test]
    fn bad_configs_rejected() {
        assert!(JitterModel::from_components(&[]).is_err());
        assert!(JitterModel::from_components(&[JitterComponent { weight: 0.7, sigma_ns: 1.0 }])
            .is_err());
        let wide = JitterModel::from_components(&[JitterComponent { weight: 1.0, sigma_ns: 9.0 }])
            .unwrap();
        assert!(wide.validate_response_width().is_err());
    }
}
