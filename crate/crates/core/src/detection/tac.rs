//! Start/stop time-to-amplitude converter and multichannel-analyzer
//! emulation.
//!
//! The stop channel carries an electronic delay, so the TAC sees stop pulses
//! `stop_delay` late; physical delays down to −stop_delay are therefore
//! recordable. The state machine: an A event arms the TAC (further A events
//! are ignored while armed); the first delayed B within the window converts
//! with τ = t_B + stop_delay − t_A and disarms; if no stop arrives the TAC
//! resets when the window expires. B events while disarmed are ignored.

use super::{DetectionError, DetectionEvent, Detector};
use crate::config::HistogramConfig;
use serde::Serialize;

/// Binned start–stop delay spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct CoincidenceHistogram {
    pub bin_width_ps: f64,
    pub n_bins: usize,
    pub window_ns: f64,
    pub stop_delay_ns: f64,
    pub counts: Vec<u64>,
}

impl CoincidenceHistogram {
    pub fn empty(cfg: &HistogramConfig) -> Self {
        CoincidenceHistogram {
            bin_width_ps: cfg.bin_width_ps,
            n_bins: cfg.n_bins,
            window_ns: cfg.window_ns,
            stop_delay_ns: cfg.stop_delay_ns,
            counts: vec![0; cfg.n_bins],
        }
    }

    pub fn bin_width_fs(&self) -> f64 {
        self.bin_width_ps * 1.0e3
    }

    pub fn window_fs(&self) -> f64 {
        self.window_ns * 1.0e6
    }

    pub fn stop_delay_fs(&self) -> f64 {
        self.stop_delay_ns * 1.0e6
    }

    /// Recorded delay (ns) at a fractional channel.
    pub fn delay_ns_at(&self, channel: f64) -> f64 {
        channel * self.bin_width_ps * 1.0e-3
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Accumulate one recorded delay (fs).
    pub fn record(&mut self, delay_fs: f64) {
        let bin = (delay_fs / self.bin_width_fs()).floor();
        if bin >= 0.0 && (bin as usize) < self.n_bins {
            self.counts[bin as usize] += 1;
        }
    }
}

/// Bookkeeping from one TAC pass, enough to compute the live-time fraction.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TacStats {
    pub starts_armed: u64,
    pub starts_ignored_busy: u64,
    pub stops_recorded: u64,
    pub stops_ignored_disarmed: u64,
    /// Total time the TAC was armed and unable to accept a new start (fs).
    pub busy_time_fs: f64,
}

impl TacStats {
    /// Fraction of wall time during which a new start could arm the TAC.
    pub fn live_fraction(&self, duration_fs: f64) -> f64 {
        if duration_fs <= 0.0 {
            1.0
        } else {
            (1.0 - self.busy_time_fs / duration_fs).max(0.0)
        }
    }
}

/// Build the coincidence histogram from a time-sorted event stream.
pub fn build_histogram(
    events: &[DetectionEvent],
    cfg: &HistogramConfig,
) -> Result<CoincidenceHistogram, DetectionError> {
    run_tac(events, cfg).map(|(h, _)| h)
}

/// TAC pass returning the histogram together with dead-time statistics.
pub fn run_tac(
    events: &[DetectionEvent],
    cfg: &HistogramConfig,
) -> Result<(CoincidenceHistogram, TacStats), DetectionError> {
    if events.windows(2).any(|w| w[0].time_fs > w[1].time_fs) {
        return Err(DetectionError::UnsortedEvents);
    }

    let mut hist = CoincidenceHistogram::empty(cfg);
    let mut stats = TacStats::default();
    let window = hist.window_fs();
    let stop_delay = hist.stop_delay_fs();

    // the TAC sees stops late by the electronic delay; order by TAC time
    let mut stream: Vec<(f64, u8)> = events
        .iter()
        .map(|e| match e.detector {
            Detector::A => (e.time_fs, 0u8),
            Detector::B => (e.time_fs + stop_delay, 1u8),
        })
        .collect();
    stream.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut armed: Option<f64> = None;
    for &(t, kind) in &stream {
        if let Some(t_arm) = armed {
            if t - t_arm > window {
                stats.busy_time_fs += window;
                armed = None;
            }
        }
        if kind == 0 {
            if armed.is_none() {
                armed = Some(t);
                stats.starts_armed += 1;
            } else {
                stats.starts_ignored_busy += 1;
            }
        } else if let Some(t_arm) = armed {
            let tau = t - t_arm;
            hist.record(tau);
            stats.stops_recorded += 1;
            stats.busy_time_fs += tau;
            armed = None;
        } else {
            stats.stops_ignored_disarmed += 1;
        }
    }
    if let Some(t_arm) = armed {
        if let Some(&(t_last, _)) = stream.last() {
            stats.busy_time_fs += (t_last - t_arm).min(window);
        }
    }

    Ok((hist, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(detector: Detector, time_ns: f64) -> DetectionEvent {
        DetectionEvent { detector, time_fs: time_ns * 1.0e6 }
    }

    fn cfg() -> HistogramConfig {
        HistogramConfig::default()
    }

    #[test]
    fn no_stops_all_zero() {
        let events: Vec<_> = (0..50).map(|i| ev(Detector::A, i as f64 * 100.0)).collect();
        let hist = build_histogram(&events, &cfg()).unwrap();
        assert_eq!(hist.total_counts(), 0);
    }

    #[test]
    fn simultaneous_pair_lands_at_stop_delay() {
        let events = vec![ev(Detector::A, 0.0), ev(Detector::B, 0.0)];
        let hist = build_histogram(&events, &cfg()).unwrap();
        assert_eq!(hist.total_counts(), 1);
        let expected_bin = (40.0e6 / hist.bin_width_fs()).floor() as usize;
        assert_eq!(hist.counts[expected_bin], 1);
        assert_eq!(expected_bin, 754); // 40 ns / 53 ps
    }

    #[test]
    fn negative_delays_recordable_via_stop_delay() {
        // B fires 13.2 ns before A: recorded at 40 − 13.2 = 26.8 ns
        let events = vec![ev(Detector::B, 0.0), ev(Detector::A, 13.2)];
        let hist = build_histogram(&events, &cfg()).unwrap();
        assert_eq!(hist.total_counts(), 1);
        let bin = (26.8e6 / hist.bin_width_fs()).floor() as usize;
        assert_eq!(hist.counts[bin], 1);
    }

    #[test]
    fn tac_exclusivity() {
        // one A, two B's: only the first B converts
        let events = vec![ev(Detector::A, 0.0), ev(Detector::B, 1.0), ev(Detector::B, 2.0)];
        let (hist, stats) = run_tac(&events, &cfg()).unwrap();
        assert_eq!(hist.total_counts(), 1);
        assert_eq!(stats.stops_ignored_disarmed, 1);

        // two A's, one B: the second A is ignored while armed, and the B
        // converts against the first A
        let events = vec![ev(Detector::A, 0.0), ev(Detector::A, 5.0), ev(Detector::B, 10.0)];
        let (hist, stats) = run_tac(&events, &cfg()).unwrap();
        assert_eq!(hist.total_counts(), 1);
        assert_eq!(stats.starts_ignored_busy, 1);
        let bin = (50.0e6 / hist.bin_width_fs()).floor() as usize;
        assert_eq!(hist.counts[bin], 1);
    }

    #[test]
    fn window_expiry_resets() {
        // B arrives (delayed) 100 ns after A: outside the 90 ns window,
        // no conversion; the following A re-arms and its B converts.
        let events = vec![
            ev(Detector::A, 0.0),
            ev(Detector::B, 60.0),
            ev(Detector::A, 200.0),
            ev(Detector::B, 201.0),
        ];
        let (hist, stats) = run_tac(&events, &cfg()).unwrap();
        assert_eq!(hist.total_counts(), 1);
        assert_eq!(stats.starts_armed, 2);
        let bin = (41.0e6 / hist.bin_width_fs()).floor() as usize;
        assert_eq!(hist.counts[bin], 1);
    }

    #[test]
    fn counts_bounded_by_starts() {
        let events = vec![
            ev(Detector::B, 0.1),
            ev(Detector::A, 1.0),
            ev(Detector::B, 2.0),
            ev(Detector::B, 3.0),
            ev(Detector::A, 4.0),
            ev(Detector::B, 5.0),
        ];
        let (hist, stats) = run_tac(&events, &cfg()).unwrap();
        let n_a = events.iter().filter(|e| e.detector == Detector::A).count() as u64;
        assert!(hist.total_counts() <= n_a);
        assert_eq!(stats.stops_recorded, hist.total_counts());
    }

    #[test]
    fn unsorted_rejected() {
        let events = vec![ev(Detector::A, 10.0), ev(Detector::B, 5.0)];
        assert!(matches!(build_histogram(&events, &cfg()), Err(DetectionError::UnsortedEvents)));
    }
}
