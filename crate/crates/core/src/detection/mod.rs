//! Detection chain: hit classification at the detection plane, detector
//! timing response, start/stop TAC emulation with MCA binning, zero-channel
//! calibration, and peak metrics (dip D, width W, shift S).

mod jitter;
mod peaks;
mod tac;

pub use jitter::{default_jitter_components, JitterModel};
pub use peaks::{calibrate_zero, peak_metrics, Calibration, MetricsOptions, PeakMetrics};
pub use tac::{build_histogram, run_tac, CoincidenceHistogram, TacStats};

use crate::config::ApparatusGeometry;
use crate::dynamics::PlaneCrossing;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("events are not sorted by time")]
    UnsortedEvents,
    #[error("calibration failed: only {found} usable peaks (need at least {needed})")]
    TooFewPeaks { found: usize, needed: usize },
    #[error("neighbor peak is empty; contrast undefined")]
    EmptyNeighborPeak,
    #[error("invalid jitter model: {0}")]
    InvalidJitter(String),
}

/// Start (A) and stop (B) detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Detector {
    A = 0,
    B = 1,
}

/// One detector hit at an absolute laboratory time (fs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub detector: Detector,
    pub time_fs: f64,
}

/// Outcome of the geometric detector test for one plane crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hit {
    A,
    B,
    Miss,
}

/// Classify a plane crossing: miss if the trajectory failed the aperture
/// test on the way; otherwise detector A is the rectangle centered at
/// (−offset, 0), B at (+offset, 0). `beam_lateral_offset` displaces the beam
/// axis relative to the apparatus axis.
pub fn classify_hit(crossing: &PlaneCrossing, geometry: &ApparatusGeometry) -> Hit {
    if !crossing.within_aperture {
        return Hit::Miss;
    }
    let x = crossing.position.x + geometry.beam_lateral_offset;
    let y = crossing.position.y;
    if y.abs() > 0.5 * geometry.detector_width_y {
        return Hit::Miss;
    }
    let half_w = 0.5 * geometry.detector_width_x;
    if (x + geometry.detector_center_offset).abs() <= half_w {
        Hit::A
    } else if (x - geometry.detector_center_offset).abs() <= half_w {
        Hit::B
    } else {
        Hit::Miss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emission::ElectronLabel;
    use crate::vec3::Vec3;

    fn crossing(x: f64, y: f64, within_aperture: bool) -> PlaneCrossing {
        PlaneCrossing {
            position: Vec3::new(x, y, 5.0e7),
            crossing_time: 8.4e6,
            final_energy: 70.0,
            within_aperture,
            label: ElectronLabel::Single,
        }
    }

    #[test]
    fn rectangle_centers_and_gap() {
        let g = ApparatusGeometry::default();
        assert_eq!(classify_hit(&crossing(-g.detector_center_offset, 0.0, true), &g), Hit::A);
        assert_eq!(classify_hit(&crossing(g.detector_center_offset, 0.0, true), &g), Hit::B);
        // gap between the rectangles (offset > width/2 for the defaults)
        assert_eq!(classify_hit(&crossing(0.0, 0.0, true), &g), Hit::Miss);
        // aperture failure overrides geometry
        assert_eq!(classify_hit(&crossing(-g.detector_center_offset, 0.0, false), &g), Hit::Miss);
        // outside in y
        let y_out = 0.5 * g.detector_width_y + 1.0;
        assert_eq!(classify_hit(&crossing(-g.detector_center_offset, y_out, true), &g), Hit::Miss);
    }

    #[test]
    fn beam_offset_shifts_both_rectangles() {
        let mut g = ApparatusGeometry::default();
        g.beam_lateral_offset = 1.0e6; // beam 1 mm toward +x relative to the apparatus
        // a hit that was centered on A now needs x shifted by −offset
        let x = -g.detector_center_offset - g.beam_lateral_offset;
        assert_eq!(classify_hit(&crossing(x, 0.0, true), &g), Hit::A);
    }
}
