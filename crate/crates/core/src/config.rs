//! Run configuration: apparatus geometry, beam/emission parameters, detector
//! response and histogram settings.
//!
//! Configurations load from UTF-8 JSON with exactly the field names defined
//! here; unknown keys are rejected so that a typo in a physics parameter
//! fails loudly instead of silently running with a default. Every load is
//! validated — invalid values produce errors, never silent clamping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

/// Tip, aperture and detector geometry. All lengths in nanometers,
/// energies in eV.
///
/// The detection plane is perpendicular to the z axis at `detection_plane_L`;
/// the two rectangular detector openings are centered at
/// (±`detector_center_offset`, 0) in that plane. A circular aperture of
/// diameter `aperture_diameter` sits at `aperture_distance`. Just before the
/// plane, electrons are decelerated by `retard_barrier` eV spread uniformly
/// over the final `retard_length`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ApparatusGeometry {
    pub tip_radius: f64,
    #[serde(rename = "detection_plane_L")]
    pub detection_plane_l: f64,
    pub aperture_distance: f64,
    pub aperture_diameter: f64,
    pub detector_width_x: f64,
    pub detector_width_y: f64,
    pub detector_center_offset: f64,
    pub retard_length: f64,
    pub retard_barrier: f64,
    pub beam_lateral_offset: f64,
}

impl Default for ApparatusGeometry {
    fn default() -> Self {
        ApparatusGeometry {
            tip_radius: 25.0,
            detection_plane_l: 5.0e7,     // 5 cm
            aperture_distance: 3.4e7,     // 3.4 cm
            aperture_diameter: 1.4e7,     // 1.4 cm
            detector_width_x: 1.0e7,      // 1 cm; not fixed by the experiment, see README
            detector_width_y: 1.0e7,
            detector_center_offset: 0.75e7,
            retard_length: 5.0e6,         // 5 mm
            retard_barrier: 30.0,
            beam_lateral_offset: 0.0,
        }
    }
}

impl ApparatusGeometry {
    pub fn aperture_radius(&self) -> f64 {
        0.5 * self.aperture_diameter
    }

    /// Half-angle (rad) of the emission cone subtended by the aperture.
    pub fn cone_half_angle(&self) -> f64 {
        (self.aperture_radius() / self.aperture_distance).atan()
    }

    /// z coordinate where the retarding region begins.
    pub fn retard_start(&self) -> f64 {
        self.detection_plane_l - self.retard_length
    }

    pub fn validate(&self, asymptotic_energy: f64) -> Result<(), ConfigError> {
        let all = [
            ("tip_radius", self.tip_radius),
            ("detection_plane_L", self.detection_plane_l),
            ("aperture_distance", self.aperture_distance),
            ("aperture_diameter", self.aperture_diameter),
            ("detector_width_x", self.detector_width_x),
            ("detector_width_y", self.detector_width_y),
            ("detector_center_offset", self.detector_center_offset),
            ("retard_length", self.retard_length),
            ("retard_barrier", self.retard_barrier),
            ("beam_lateral_offset", self.beam_lateral_offset),
        ];
        for (name, v) in all {
            if !v.is_finite() {
                return Err(invalid("geometry", format!("{name} is not finite")));
            }
        }
        for (name, v) in &all[..9] {
            if *v < 0.0 {
                return Err(invalid("geometry", format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.tip_radius <= 0.0 {
            return Err(invalid("geometry", "tip_radius must be positive"));
        }
        if self.aperture_distance >= self.detection_plane_l {
            return Err(invalid(
                "geometry",
                "aperture_distance must be smaller than detection_plane_L",
            ));
        }
        if self.retard_length >= self.detection_plane_l - self.aperture_distance {
            return Err(invalid(
                "geometry",
                "retard_length must fit between aperture and detection plane",
            ));
        }
        if self.retard_barrier >= asymptotic_energy {
            return Err(invalid(
                "geometry",
                format!(
                    "retard_barrier {} eV would reflect {} eV primaries",
                    self.retard_barrier, asymptotic_energy
                ),
            ));
        }
        Ok(())
    }
}

/// Law for drawing emission times within the pulse window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmissionTimeLaw {
    /// Uniform on [0, pulse_window]. This is the primary law; it is the one
    /// that reproduces the measured dip.
    #[default]
    Uniform,
    /// Truncated normal centered at pulse_window/2 with sigma pulse_window/4,
    /// rejected into [0, pulse_window]. Exposed for sensitivity studies.
    Gaussian,
}

/// One Gaussian component of the detector timing response.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct JitterComponent {
    pub weight: f64,
    pub sigma_ns: f64,
}

/// Coincidence electronics settings (TAC range and MCA binning).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramConfig {
    pub bin_width_ps: f64,
    pub n_bins: usize,
    pub window_ns: f64,
    /// Electronic delay in the stop channel; makes negative physical delays
    /// recordable.
    pub stop_delay_ns: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        HistogramConfig { bin_width_ps: 53.0, n_bins: 2048, window_ns: 90.0, stop_delay_ns: 40.0 }
    }
}

impl HistogramConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.bin_width_ps > 0.0 && self.bin_width_ps.is_finite()) {
            return Err(invalid("histogram.bin_width_ps", "must be positive"));
        }
        if self.n_bins == 0 {
            return Err(invalid("histogram.n_bins", "must be positive"));
        }
        if !(self.window_ns > 0.0 && self.window_ns.is_finite()) {
            return Err(invalid("histogram.window_ns", "must be positive"));
        }
        if !(self.stop_delay_ns >= 0.0 && self.stop_delay_ns.is_finite()) {
            return Err(invalid("histogram.stop_delay_ns", "must be non-negative"));
        }
        if self.bin_width_ps * 1.0e-3 * (self.n_bins as f64) < self.window_ns {
            return Err(invalid(
                "histogram",
                "bin_width_ps * n_bins must cover the coincidence window",
            ));
        }
        Ok(())
    }
}

/// Complete run configuration.
///
/// `lambda_total` is the mean number of electrons emitted per laser pulse
/// over the full hemisphere; `cone_rate` is the emission rate (s⁻¹) into the
/// cone subtended by the aperture, so the per-pulse mean in the cone is
/// `cone_rate * repetition_time`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: ApparatusGeometry,
    pub lambda_total: f64,
    /// s⁻¹, emission rate into the detector cone.
    pub cone_rate: f64,
    /// ns between laser pulses.
    pub repetition_time: f64,
    /// fs, emission time window within one pulse.
    pub pulse_window: f64,
    /// eV, kinetic energy at the tip surface.
    pub initial_energy: f64,
    /// eV, asymptotic kinetic energy after tip acceleration.
    pub final_energy: f64,
    /// Dimensionless scale on the electron-electron Coulomb force;
    /// 1 is the physical strength, 0 disables the interaction.
    pub coulomb_strength: f64,
    /// Add an attractive +1e image charge at the tip center (sensitivity
    /// studies; the hole left by photoemission is normally negligible).
    pub image_charge: bool,
    pub emission_time_law: EmissionTimeLaw,
    pub rng_seed: u64,
    pub n_pulses: Option<u64>,
    pub n_pairs: Option<u64>,
    pub jitter: Vec<JitterComponent>,
    pub histogram: HistogramConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: ApparatusGeometry::default(),
            lambda_total: 0.141,
            cone_rate: 7.71e5,
            repetition_time: 13.2,
            pulse_window: 50.0,
            initial_energy: 0.5,
            final_energy: 100.0,
            coulomb_strength: 0.0,
            image_charge: false,
            emission_time_law: EmissionTimeLaw::Uniform,
            rng_seed: 1,
            n_pulses: None,
            n_pairs: None,
            jitter: crate::detection::default_jitter_components(),
            histogram: HistogramConfig::default(),
        }
    }
}

impl RunConfig {
    /// Mean electrons per pulse emitted into the detector cone
    /// (`cone_rate` · `repetition_time`).
    pub fn lambda_cone(&self) -> f64 {
        self.cone_rate * self.repetition_time * 1.0e-9
    }

    /// Repetition time in femtoseconds.
    pub fn repetition_time_fs(&self) -> f64 {
        self.repetition_time * 1.0e6
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.lambda_total > 0.0 && self.lambda_total.is_finite()) {
            return Err(invalid("lambda_total", "must be positive"));
        }
        if !(self.cone_rate > 0.0 && self.cone_rate.is_finite()) {
            return Err(invalid("cone_rate", "must be positive"));
        }
        if !(self.repetition_time > 0.0 && self.repetition_time.is_finite()) {
            return Err(invalid("repetition_time", "must be positive"));
        }
        if !(self.pulse_window >= 0.0 && self.pulse_window.is_finite()) {
            return Err(invalid("pulse_window", "must be non-negative"));
        }
        if !(self.initial_energy > 0.0 && self.initial_energy.is_finite()) {
            return Err(invalid("initial_energy", "must be positive"));
        }
        if !(self.final_energy > self.initial_energy && self.final_energy.is_finite()) {
            return Err(invalid("final_energy", "must exceed initial_energy"));
        }
        if !(self.coulomb_strength >= 0.0 && self.coulomb_strength.is_finite()) {
            return Err(invalid("coulomb_strength", "must be non-negative"));
        }
        self.geometry.validate(self.final_energy)?;
        self.histogram.validate()?;
        crate::detection::JitterModel::from_components(&self.jitter)
            .map_err(|e| invalid("jitter", e.to_string()))?;
        Ok(())
    }

    /// Parse and validate a JSON document.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("RunConfig serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn lambda_cone_from_supplement_rates() {
        let cfg = RunConfig::default();
        // 7.71e5 s^-1 * 13.2 ns
        assert!((cfg.lambda_cone() - 0.010177).abs() < 1.0e-6);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{ "lambda_total": 0.2, "typo_field": 1.0 }"#;
        assert!(RunConfig::from_json(text).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_json_pretty();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(back.to_json_pretty(), text);
    }

    #[test]
    fn invalid_values_error_not_clamped() {
        let mut cfg = RunConfig::default();
        cfg.lambda_total = -1.0;
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.geometry.aperture_distance = 6.0e7; // beyond the detection plane
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.geometry.retard_barrier = 150.0; // would reflect 100 eV primaries
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.final_energy = 0.2; // below initial energy
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cone_half_angle_matches_aperture() {
        let g = ApparatusGeometry::default();
        // arctan(0.7 cm / 3.4 cm)
        assert!((g.cone_half_angle() - (0.7f64 / 3.4).atan()).abs() < 1e-15);
        assert!((g.cone_half_angle() - 0.203045).abs() < 1e-5);
    }
}
