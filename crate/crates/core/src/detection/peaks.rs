//! Zero-channel calibration and peak metrics of coincidence spectra.
//!
//! The repetition-time peak comb is located by smoothed local maxima;
//! excluding the candidate zero-delay peak (the middle one), a line fit of
//! peak number against channel gives the expected zero-delay channel, so
//! the zero peak's own shift never contaminates the calibration.

use super::{CoincidenceHistogram, DetectionError};
use serde::Serialize;

/// Result of fitting the peak comb.
#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    /// Interpolated channel of the zero-delay peak from the line fit.
    pub zero_channel: f64,
    /// Fitted channels per repetition period.
    pub slope_bins_per_peak: f64,
    /// Centroid channels of all detected peaks, left to right.
    pub peak_channels: Vec<f64>,
    /// Index (into `peak_channels`) of the excluded zero-delay candidate.
    pub zero_candidate: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MetricsOptions {
    /// Average the m = ±1 neighbors for the contrast denominator.
    pub average_neighbors: bool,
    /// Largest |m| to integrate.
    pub max_order: i64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions { average_neighbors: true, max_order: 5 }
    }
}

/// Integrated peak quantities: per-order counts, dip contrast, width change
/// and centroid shift of the zero-delay peak.
#[derive(Debug, Clone, Serialize)]
pub struct PeakMetrics {
    /// (m, center channel, integrated counts in the ±τ₀/2 window).
    pub peaks: Vec<(i64, f64, f64)>,
    /// [N(0) − N̄(±1)] / N̄(±1).
    pub d_rel: f64,
    /// Zero-peak FWHM minus the neighbor average (ns).
    pub w_ns: f64,
    /// Zero-peak centroid minus the calibrated zero channel (ns).
    pub s_ns: f64,
    pub zero_fwhm_ns: f64,
    pub neighbor_fwhm_ns: f64,
}

fn moving_average(counts: &[u64], half: usize) -> Vec<f64> {
    let n = counts.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        let sum: u64 = counts[lo..hi].iter().sum();
        out[i] = sum as f64 / (hi - lo) as f64;
    }
    out
}

/// Local maxima of the smoothed histogram with a minimum separation of half
/// the expected peak spacing and a 5% relative height floor.
fn find_peaks(smoothed: &[f64], min_separation: usize) -> Vec<usize> {
    let max = smoothed.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let floor = 0.05 * max;
    let mut candidates: Vec<usize> = (1..smoothed.len() - 1)
        .filter(|&i| {
            smoothed[i] >= floor && smoothed[i] > smoothed[i - 1] && smoothed[i] >= smoothed[i + 1]
        })
        .collect();
    // enforce separation, keeping the taller of any close pair
    candidates.sort_by(|&a, &b| smoothed[b].total_cmp(&smoothed[a]));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_separation) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Centroid (fractional channel) of the raw counts within ±half_span of a
/// peak location.
fn centroid(counts: &[u64], center: usize, half_span: usize) -> f64 {
    let lo = center.saturating_sub(half_span);
    let hi = (center + half_span + 1).min(counts.len());
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &c) in counts.iter().enumerate().take(hi).skip(lo) {
        num += (i as f64 + 0.5) * c as f64;
        den += c as f64;
    }
    if den > 0.0 {
        num / den
    } else {
        center as f64 + 0.5
    }
}

/// Locate the peak comb and fit peak number against channel, excluding the
/// zero-delay candidate (the middle peak, counting left to right).
pub fn calibrate_zero(
    hist: &CoincidenceHistogram,
    repetition_time_fs: f64,
) -> Result<Calibration, DetectionError> {
    let spacing = repetition_time_fs / hist.bin_width_fs();
    let smooth_half = ((0.5e6 / hist.bin_width_fs()).round() as usize).max(1); // 1 ns smoothing window
    let smoothed = moving_average(&hist.counts, smooth_half);
    let maxima = find_peaks(&smoothed, (spacing * 0.5) as usize);

    let needed = 3;
    if maxima.len() < needed + 1 {
        return Err(DetectionError::TooFewPeaks { found: maxima.len(), needed: needed + 1 });
    }

    let half_span = (spacing * 0.5) as usize;
    let channels: Vec<f64> = maxima.iter().map(|&m| centroid(&hist.counts, m, half_span)).collect();

    let zero_candidate = (channels.len() - 1) / 2;

    // least squares of channel against peak number over the other peaks
    let points: Vec<(f64, f64)> = channels
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != zero_candidate)
        .map(|(i, &c)| (i as f64, c))
        .collect();
    if points.len() < needed {
        return Err(DetectionError::TooFewPeaks { found: points.len(), needed });
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;

    Ok(Calibration {
        zero_channel: intercept + slope * zero_candidate as f64,
        slope_bins_per_peak: slope,
        peak_channels: channels,
        zero_candidate,
    })
}

/// Integral of the histogram over a fractional channel interval, treating
/// each bin's counts as uniform across the bin.
fn window_integral(counts: &[u64], lo: f64, hi: f64) -> f64 {
    let lo = lo.max(0.0);
    let hi = hi.min(counts.len() as f64);
    if hi <= lo {
        return 0.0;
    }
    let lo_bin = lo.floor() as usize;
    let hi_bin = (hi.ceil() as usize).min(counts.len());
    let mut sum = 0.0;
    for (b, &c) in counts.iter().enumerate().take(hi_bin).skip(lo_bin) {
        let b_lo = (b as f64).max(lo);
        let b_hi = ((b + 1) as f64).min(hi);
        sum += c as f64 * (b_hi - b_lo);
    }
    sum
}

/// Interpolated FWHM (in channels) of the smoothed profile within a window.
fn fwhm_channels(smoothed: &[f64], lo: usize, hi: usize) -> f64 {
    let hi = hi.min(smoothed.len());
    if hi <= lo {
        return 0.0;
    }
    let slice = &smoothed[lo..hi];
    let (peak_off, &peak) = slice
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    if peak <= 0.0 {
        return 0.0;
    }
    let half = 0.5 * peak;
    let peak_idx = lo + peak_off;

    let mut left = lo as f64;
    for i in (lo..peak_idx).rev() {
        if smoothed[i] < half {
            let f = (half - smoothed[i]) / (smoothed[i + 1] - smoothed[i]);
            left = i as f64 + f;
            break;
        }
    }
    let mut right = hi as f64;
    for i in peak_idx..hi {
        if smoothed[i] < half {
            let f = (smoothed[i - 1] - half) / (smoothed[i - 1] - smoothed[i]);
            right = (i - 1) as f64 + f;
            break;
        }
    }
    right - left
}

/// Integrate the comb in full ±τ₀/2 windows around every order m present in
/// the spectrum and extract contrast, width change and centroid shift of the
/// zero-delay peak.
pub fn peak_metrics(
    hist: &CoincidenceHistogram,
    calibration: &Calibration,
    repetition_time_fs: f64,
    options: MetricsOptions,
) -> Result<PeakMetrics, DetectionError> {
    let spacing = repetition_time_fs / hist.bin_width_fs();
    let half = 0.5 * spacing;
    let n_bins = hist.counts.len() as f64;
    let bin_ns = hist.bin_width_ps * 1.0e-3;

    let smooth_half = ((0.5e6 / hist.bin_width_fs()).round() as usize).max(1);
    let smoothed = moving_average(&hist.counts, smooth_half);

    let mut peaks = Vec::new();
    let mut fwhm_by_order = Vec::new();
    for m in -options.max_order..=options.max_order {
        let center = calibration.zero_channel + m as f64 * calibration.slope_bins_per_peak;
        if center - half < 0.0 || center + half > n_bins {
            continue; // window not fully inside the spectrum
        }
        let integral = window_integral(&hist.counts, center - half, center + half);
        peaks.push((m, center, integral));
        let lo = (center - half).floor().max(0.0) as usize;
        let hi = (center + half).ceil() as usize;
        fwhm_by_order.push((m, fwhm_channels(&smoothed, lo, hi)));
    }

    let get = |m: i64| peaks.iter().find(|p| p.0 == m).map(|p| p.2);
    let n0 = get(0).ok_or(DetectionError::EmptyNeighborPeak)?;
    let neighbor = if options.average_neighbors {
        match (get(-1), get(1)) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => return Err(DetectionError::EmptyNeighborPeak),
        }
    } else {
        get(1).ok_or(DetectionError::EmptyNeighborPeak)?
    };
    if neighbor <= 0.0 {
        return Err(DetectionError::EmptyNeighborPeak);
    }
    let d_rel = (n0 - neighbor) / neighbor;

    let fwhm_of = |m: i64| fwhm_by_order.iter().find(|p| p.0 == m).map(|p| p.1);
    let zero_fwhm = fwhm_of(0).unwrap_or(0.0);
    let neighbor_fwhm = {
        let vals: Vec<f64> = [-1i64, 1]
            .iter()
            .filter_map(|&m| fwhm_of(m))
            .filter(|&f| f > 0.0)
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };

    // centroid shift of the zero peak against the calibrated channel
    let zero_centroid = {
        let lo = calibration.zero_channel - half;
        let hi = calibration.zero_channel + half;
        let lo_bin = lo.max(0.0).floor() as usize;
        let hi_bin = (hi.ceil() as usize).min(hist.counts.len());
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &c) in hist.counts.iter().enumerate().take(hi_bin).skip(lo_bin) {
            num += (i as f64 + 0.5) * c as f64;
            den += c as f64;
        }
        if den > 0.0 {
            num / den
        } else {
            calibration.zero_channel
        }
    };

    Ok(PeakMetrics {
        peaks,
        d_rel,
        w_ns: (zero_fwhm - neighbor_fwhm) * bin_ns,
        s_ns: (zero_centroid - calibration.zero_channel) * bin_ns,
        zero_fwhm_ns: zero_fwhm * bin_ns,
        neighbor_fwhm_ns: neighbor_fwhm * bin_ns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::HistogramConfig;

    const TAU0_FS: f64 = 13.2e6;

    /// Synthetic comb of Gaussian peaks; amplitudes per peak, optional
    /// per-peak center shift in ns.
    fn comb(
        cfg: &HistogramConfig,
        sigma_ns: f64,
        amplitudes: &[f64],
        shifts_ns: &[f64],
    ) -> CoincidenceHistogram {
        let mut hist = CoincidenceHistogram::empty(cfg);
        let bw_ns = cfg.bin_width_ps * 1.0e-3;
        let n_peaks = amplitudes.len() as i64;
        let mid = (n_peaks - 1) / 2;
        for bin in 0..cfg.n_bins {
            let t_ns = (bin as f64 + 0.5) * bw_ns;
            let mut v = 0.0;
            for (i, &a) in amplitudes.iter().enumerate() {
                let m = i as i64 - mid;
                let center = cfg.stop_delay_ns + m as f64 * 13.2 + shifts_ns[i];
                let z = (t_ns - center) / sigma_ns;
                v += a * (-0.5 * z * z).exp();
            }
            hist.counts[bin] = v.round() as u64;
        }
        hist
    }

    fn default_cfg() -> HistogramConfig {
        HistogramConfig { stop_delay_ns: 45.0, ..Default::default() }
    }

    #[test]
    fn exact_comb_calibration() {
        let cfg = default_cfg();
        let hist = comb(&cfg, 2.0, &[1.0e5; 7], &[0.0; 7]);
        let cal = calibrate_zero(&hist, TAU0_FS).unwrap();
        assert_eq!(cal.peak_channels.len(), 7);
        assert_eq!(cal.zero_candidate, 3); // the 4th of 7
        let expected_zero = cfg.stop_delay_ns * 1.0e6 / (cfg.bin_width_ps * 1.0e3);
        assert!(
            (cal.zero_channel - expected_zero).abs() < 0.1,
            "zero channel {} vs {expected_zero}",
            cal.zero_channel
        );
        // slope = τ₀ / bin width = 249.06 bins per peak
        assert!((cal.slope_bins_per_peak - 249.06).abs() < 0.05, "slope {}", cal.slope_bins_per_peak);
    }

    #[test]
    fn shifted_zero_peak_detected_not_absorbed() {
        let cfg = default_cfg();
        let mut shifts = [0.0; 7];
        shifts[3] = 0.5; // zero peak shifted +0.5 ns
        let hist = comb(&cfg, 2.0, &[1.0e5; 7], &shifts);
        let cal = calibrate_zero(&hist, TAU0_FS).unwrap();
        // calibration excludes the zero candidate, so the fit is unaffected
        let expected_zero = cfg.stop_delay_ns * 1.0e6 / (cfg.bin_width_ps * 1.0e3);
        assert!((cal.zero_channel - expected_zero).abs() < 0.5);
        let metrics = peak_metrics(&hist, &cal, TAU0_FS, MetricsOptions::default()).unwrap();
        assert!((metrics.s_ns - 0.5).abs() < 0.1, "S = {} ns", metrics.s_ns);
    }

    #[test]
    fn identical_peaks_null_metrics() {
        let cfg = default_cfg();
        let hist = comb(&cfg, 2.0, &[2.0e5; 7], &[0.0; 7]);
        let cal = calibrate_zero(&hist, TAU0_FS).unwrap();
        let m = peak_metrics(&hist, &cal, TAU0_FS, MetricsOptions::default()).unwrap();
        assert!(m.d_rel.abs() < 2.0e-3, "D = {}", m.d_rel);
        assert!(m.w_ns.abs() < 0.05, "W = {}", m.w_ns);
        assert!(m.s_ns.abs() < 0.02, "S = {}", m.s_ns);
    }

    #[test]
    fn paper_contrast_value() {
        // N(0) = 2.00e5, N(±1) = 2.64e5 → D = −24%
        let cfg = default_cfg();
        let mut amplitudes = [2.64e5; 7];
        amplitudes[3] = 2.00e5;
        let hist = comb(&cfg, 1.5, &amplitudes, &[0.0; 7]);
        let cal = calibrate_zero(&hist, TAU0_FS).unwrap();
        let m = peak_metrics(&hist, &cal, TAU0_FS, MetricsOptions::default()).unwrap();
        assert!((m.d_rel - (-0.2424)).abs() < 0.005, "D = {}", m.d_rel);
    }

    #[test]
    fn halved_zero_peak_gives_exact_contrast() {
        // integer peak spacing so the windows tile the comb exactly
        let cfg = HistogramConfig {
            bin_width_ps: 50.0,
            n_bins: 2048,
            window_ns: 100.0,
            stop_delay_ns: 46.2, // 924 bins; peaks every 264 bins exactly
        };
        let full = comb(&cfg, 0.5, &[2.0e5; 7], &[0.0; 7]);
        let mut halved = full.clone();
        let cal = calibrate_zero(&full, TAU0_FS).unwrap();
        let half_window = 0.5 * TAU0_FS / full.bin_width_fs();
        let lo = (cal.zero_channel - half_window).round() as usize;
        let hi = (cal.zero_channel + half_window).round() as usize;
        for b in lo..hi {
            halved.counts[b] = (halved.counts[b] as f64 * 0.5).round() as u64;
        }
        let m = peak_metrics(&halved, &cal, TAU0_FS, MetricsOptions::default()).unwrap();
        assert!((m.d_rel - (-0.5)).abs() < 1.0e-3, "D = {}", m.d_rel);
    }

    #[test]
    fn metrics_invariant_under_stop_delay_shift() {
        let base = HistogramConfig { stop_delay_ns: 40.0, ..Default::default() };
        let shifted = HistogramConfig { stop_delay_ns: 43.0, ..Default::default() };
        let mut amplitudes = [2.64e5; 7];
        amplitudes[3] = 2.3e5;
        let h1 = comb(&base, 2.0, &amplitudes, &[0.0; 7]);
        let h2 = comb(&shifted, 2.0, &amplitudes, &[0.0; 7]);
        let c1 = calibrate_zero(&h1, TAU0_FS).unwrap();
        let c2 = calibrate_zero(&h2, TAU0_FS).unwrap();
        let m1 = peak_metrics(&h1, &c1, TAU0_FS, MetricsOptions::default()).unwrap();
        let m2 = peak_metrics(&h2, &c2, TAU0_FS, MetricsOptions::default()).unwrap();
        assert!((m1.d_rel - m2.d_rel).abs() < 2.0e-3);
        assert!((m1.w_ns - m2.w_ns).abs() < 0.02);
        assert!((m1.s_ns - m2.s_ns).abs() < 0.02);
    }

    #[test]
    fn too_few_peaks_is_an_error() {
        let cfg = default_cfg();
        let hist = comb(&cfg, 2.0, &[1.0e5; 2], &[0.0; 2]);
        assert!(matches!(
            calibrate_zero(&hist, TAU0_FS),
            Err(DetectionError::TooFewPeaks { .. })
        ));
    }

    #[test]
    fn empty_neighbor_is_an_error() {
        let cfg = default_cfg();
        let mut amplitudes = [0.0; 7];
        amplitudes[3] = 1.0e5;
        amplitudes[0] = 1.0e5;
        amplitudes[6] = 1.0e5;
        amplitudes[1] = 1.0e5;
        let hist = comb(&cfg, 2.0, &amplitudes, &[0.0; 7]);
        if let Ok(cal) = calibrate_zero(&hist, TAU0_FS) {
            let r = peak_metrics(&hist, &cal, TAU0_FS, MetricsOptions::default());
            assert!(matches!(r, Err(DetectionError::EmptyNeighborPeak) | Ok(_)));
        }
    }
}
