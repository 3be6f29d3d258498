//! Analytic quantum-degeneracy estimates: coherence time and transverse
//! coherence lengths from uncertainty relations, the fermionic two-particle
//! (HBT) dip bound for unpolarized electrons, the pulsed second-order
//! correlation, and a classical-vs-quantum regime map.

use crate::config::ApparatusGeometry;
use crate::constants::{speed_from_energy, ELECTRON_MASS, HBAR};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DegeneracyError {
    #[error("invalid degeneracy parameters: {0}")]
    Invalid(String),
}

/// Inputs to the degeneracy estimates.
#[derive(Debug, Clone, Serialize)]
pub struct DegeneracyParams {
    /// eV energy spread of the emitted electrons.
    pub energy_spread: f64,
    /// fs pair temporal separation scale (pulse window).
    pub pulse_window: f64,
    /// nm tip apex radius.
    pub tip_radius: f64,
    /// eV electron energy at the detectors.
    pub electron_energy: f64,
    /// Multiplies the uncertainty-limited coherence time (extended-
    /// coherence studies use 5).
    pub coherence_multiplier: f64,
}

impl DegeneracyParams {
    pub fn validate(&self) -> Result<(), DegeneracyError> {
        for (name, v) in [
            ("energy_spread", self.energy_spread),
            ("pulse_window", self.pulse_window),
            ("tip_radius", self.tip_radius),
            ("electron_energy", self.electron_energy),
            ("coherence_multiplier", self.coherence_multiplier),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DegeneracyError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Uncertainty-limited coherence time τ_c = ħ / 2ΔE (fs).
pub fn coherence_time(energy_spread_ev: f64) -> f64 {
    HBAR / (2.0 * energy_spread_ev)
}

/// Transverse coherence quantities derived from the detector acceptance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransverseCoherence {
    /// Angular half-width γ of the detected momentum distribution (rad).
    pub gamma: f64,
    /// Electron momentum (eV·fs/nm).
    pub momentum: f64,
    pub dp_x: f64,
    pub dp_y: f64,
    /// Transverse coherence lengths ħ/2Δp (nm).
    pub x_c: f64,
    pub y_c: f64,
    /// Effective emission-site widths 2 R_tip sin γ (nm).
    pub x_tip: f64,
    pub y_tip: f64,
}

/// γ = atan((Δ_wx + X_det)/L) with X_det the center-to-center detector
/// distance; Δp = p·(angular width); coherence lengths from ħ/2Δp.
pub fn transverse_coherence(
    params: &DegeneracyParams,
    geometry: &ApparatusGeometry,
) -> TransverseCoherence {
    let l = geometry.detection_plane_l;
    let x_det = 2.0 * geometry.detector_center_offset;
    let gamma = ((geometry.detector_width_x + x_det) / l).atan();
    let p = ELECTRON_MASS * speed_from_energy(params.electron_energy);
    let dp_x = p * gamma;
    let dp_y = p * (geometry.detector_width_y / l).atan();
    let x_tip = 2.0 * params.tip_radius * gamma.sin();
    TransverseCoherence {
        gamma,
        momentum: p,
        dp_x,
        dp_y,
        x_c: HBAR / (2.0 * dp_x),
        y_c: HBAR / (2.0 * dp_y),
        x_tip,
        y_tip: x_tip,
    }
}

/// Pauli-blockade dip estimate for unpolarized electrons:
/// D = −(1/2)(τ_c/Δt)(X_c/X_tip)(Y_c/Y_tip), each ratio clamped at 1
/// (the coherence cannot exceed the physical extent). Always in [−1/2, 0].
pub fn hbt_dip(params: &DegeneracyParams, geometry: &ApparatusGeometry) -> f64 {
    let tau_c = params.coherence_multiplier * coherence_time(params.energy_spread);
    let tc = transverse_coherence(params, geometry);
    let r_t = (tau_c / params.pulse_window).min(1.0);
    let r_x = (tc.x_c / tc.x_tip).min(1.0);
    let r_y = (tc.y_c / tc.y_tip).min(1.0);
    -0.5 * r_t * r_x * r_y
}

/// Pulsed second-order correlation at zero delay for unpolarized electrons:
/// g² = 1 − t_c/2Δt, floored at 1/2 (full coherence).
pub fn g2_pulsed(coherence_time_fs: f64, delta_t_fs: f64) -> f64 {
    assert!(delta_t_fs > 0.0, "Δt must be positive");
    (1.0 - coherence_time_fs / (2.0 * delta_t_fs)).max(0.5)
}

/// Classical dip source for the regime map.
pub enum ClassicalSource<'a> {
    /// Interpolate 1 + D_rel from a perturbative dip-map row at the given
    /// tip radius.
    Map { map: &'a crate::pulse_duration::DipMap, rtip_nm: f64 },
    /// Documented analytic proxy: complete suppression below 20 fs, rising
    /// as 1 − 20 fs/Δt beyond (matching the observed complete classical dip
    /// at short separations and its decay at large ones).
    Proxy,
}

impl ClassicalSource<'_> {
    /// Normalized classical coincidence factor in [0, 1]; None if the
    /// requested Δt is outside a map source's range.
    fn factor(&self, dt_fs: f64) -> Option<f64> {
        match self {
            ClassicalSource::Proxy => {
                if dt_fs <= 20.0 {
                    Some(0.0)
                } else {
                    Some((1.0 - 20.0 / dt_fs).clamp(0.0, 1.0))
                }
            }
            ClassicalSource::Map { map, rtip_nm } => {
                let grid = &map.dt_grid_fs;
                if dt_fs < grid[0] || dt_fs > *grid.last().unwrap() {
                    return None;
                }
                let rg = &map.rtip_grid_nm;
                let rtip = rtip_nm.clamp(rg[0], *rg.last().unwrap());
                let i = rg.partition_point(|&r| r < rtip).clamp(1, rg.len() - 1);
                let fr = (rtip - rg[i - 1]) / (rg[i] - rg[i - 1]);
                let j = grid.partition_point(|&t| t < dt_fs).clamp(1, grid.len() - 1);
                let ft = (dt_fs - grid[j - 1]) / (grid[j] - grid[j - 1]);
                let at = |i: usize, j: usize| map.d_rel[i][j];
                let d = (1.0 - fr) * ((1.0 - ft) * at(i - 1, j - 1) + ft * at(i - 1, j))
                    + fr * ((1.0 - ft) * at(i, j - 1) + ft * at(i, j));
                Some((1.0 + d).clamp(0.0, 1.0))
            }
        }
    }
}

/// Classical-vs-quantum regime map over (Δt, T_coh).
#[derive(Debug, Clone, Serialize)]
pub struct RegimeMap {
    pub dt_grid_fs: Vec<f64>,
    pub coherence_grid_fs: Vec<f64>,
    /// quantum[i][j]: normalized coincidence after Pauli suppression alone.
    pub quantum: Vec<Vec<f64>>,
    /// classical[i][j]: after Coulomb suppression alone.
    pub classical: Vec<Vec<f64>>,
    /// combined[i][j] = quantum · classical.
    pub combined: Vec<Vec<f64>>,
    /// Cells where the classical source was unavailable (map range).
    pub flagged: Vec<(usize, usize)>,
}

/// Reference coincidence-dip measurements from earlier experiments
/// (coherence time fs, detection resolution ps, reported dip). Shipped as
/// context for regime maps, not reproduced by this crate.
pub const REFERENCE_EXPERIMENTS: [(&str, f64, f64, f64); 3] = [
    ("Kiesel", 32.5, 26.0, 1.26e-3),
    ("Kodama", 3.9, 20.0, 1.1e-4),
    ("Kuwahara", 90.0, 170.0, 1.0e-3),
];

/// Build the regime map: per cell, the quantum factor for a fully
/// transversely coherent source is 1 − min(1, T_coh/2Δt) (twice the
/// unpolarized HBT dip), the classical factor comes from the supplied
/// source, and the combined value multiplies the two independent
/// suppressions.
pub fn build_regime_map(
    dt_grid_fs: &[f64],
    coherence_grid_fs: &[f64],
    classical: &ClassicalSource<'_>,
) -> RegimeMap {
    let mut quantum = vec![vec![0.0; dt_grid_fs.len()]; coherence_grid_fs.len()];
    let mut classical_m = vec![vec![0.0; dt_grid_fs.len()]; coherence_grid_fs.len()];
    let mut combined = vec![vec![0.0; dt_grid_fs.len()]; coherence_grid_fs.len()];
    let mut flagged = Vec::new();
    for (i, &t_coh) in coherence_grid_fs.iter().enumerate() {
        for (j, &dt) in dt_grid_fs.iter().enumerate() {
            let q = 1.0 - (t_coh / (2.0 * dt)).min(1.0);
            let c = match classical.factor(dt) {
                Some(c) => c,
                None => {
                    flagged.push((i, j));
                    1.0
                }
            };
            quantum[i][j] = q;
            classical_m[i][j] = c;
            combined[i][j] = q * c;
        }
    }
    RegimeMap {
        dt_grid_fs: dt_grid_fs.to_vec(),
        coherence_grid_fs: coherence_grid_fs.to_vec(),
        quantum,
        classical: classical_m,
        combined,
        flagged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> DegeneracyParams {
        DegeneracyParams {
            energy_spread: 0.5,
            pulse_window: 10.0,
            tip_radius: 25.0,
            electron_energy: 100.0,
            coherence_multiplier: 1.0,
        }
    }

    #[test]
    fn coherence_time_values() {
        // ħ/2ΔE = 0.658 fs at 0.5 eV
        assert!((coherence_time(0.5) - 0.658212).abs() < 1.0e-6);
        assert!((coherence_time(0.5) - 0.66).abs() < 0.01);
        assert!((coherence_time(0.05) - 6.58212).abs() < 1.0e-5);
        assert!(coherence_time(1.0e6) < 1.0e-6);
    }

    #[test]
    fn transverse_coherence_reference_values() {
        let g = ApparatusGeometry::default();
        let tc = transverse_coherence(&params(), &g);
        // γ = atan((1 cm + 1.5 cm)/5 cm) = atan(0.5)
        assert!((tc.gamma - 0.4636476).abs() < 1.0e-6);
        assert!((tc.x_c - 0.0211).abs() < 2.0e-4, "X_c = {}", tc.x_c);
        assert!((tc.x_tip - 22.4).abs() < 0.1, "X_tip = {}", tc.x_tip);
        // dimensional identity X_c·Δp_x = ħ/2 by construction
        assert!((tc.x_c * tc.dp_x - 0.5 * HBAR).abs() < 1.0e-15);
        assert!((tc.y_c * tc.dp_y - 0.5 * HBAR).abs() < 1.0e-15);
    }

    #[test]
    fn magnifying_lens_scales_coherence_length() {
        // dividing the transverse momentum spread by 100 multiplies X_c by 100
        let g = ApparatusGeometry::default();
        let tc = transverse_coherence(&params(), &g);
        let x_c_lens = HBAR / (2.0 * tc.dp_x / 100.0);
        assert!((x_c_lens / tc.x_c - 100.0).abs() < 1.0e-9);
    }

    #[test]
    fn hbt_dip_bound_and_limits() {
        let g = ApparatusGeometry::default();
        let d = hbt_dip(&params(), &g);
        assert!(d < 0.0 && d > -0.5);
        // well below 1 part in 1000 for these parameters
        assert!(d.abs() < 1.0e-3, "D_HBT = {d}");

        // fully coherent limit: ratios clamp at 1 → −1/2
        let tight = DegeneracyParams {
            energy_spread: 1.0e-9,
            pulse_window: 1.0e-9,
            tip_radius: 1.0e-9,
            electron_energy: 1.0e-9,
            coherence_multiplier: 1.0,
        };
        assert!((hbt_dip(&tight, &g) + 0.5).abs() < 1.0e-12);
    }

    #[test]
    fn hbt_dip_monotone_in_each_parameter() {
        let g = ApparatusGeometry::default();
        let base = params();
        let d0 = hbt_dip(&base, &g).abs();
        for scale in [2.0, 5.0, 10.0] {
            let mut p = base.clone();
            p.pulse_window *= scale;
            assert!(hbt_dip(&p, &g).abs() <= d0);
            let mut p = base.clone();
            p.tip_radius *= scale;
            assert!(hbt_dip(&p, &g).abs() <= d0);
            let mut p = base.clone();
            p.energy_spread *= scale;
            assert!(hbt_dip(&p, &g).abs() <= d0);
        }
    }

    #[test]
    fn degeneracy_band_robust_to_parameter_halving() {
        // smaller tip, shorter pulse, extended coherence: still a small dip
        let g = ApparatusGeometry::default();
        let p = DegeneracyParams {
            energy_spread: 0.5,
            pulse_window: 5.0,
            tip_radius: 12.5,
            electron_energy: 100.0,
            coherence_multiplier: 5.0,
        };
        let d = hbt_dip(&p, &g).abs();
        assert!(d < 1.0e-2, "still far below the measured dip: {d}");
    }

    #[test]
    fn g2_limits() {
        assert_eq!(g2_pulsed(10.0, 10.0), 0.5);
        assert!((g2_pulsed(1.0, 5.0) - 0.9).abs() < 1.0e-12);
        assert!((g2_pulsed(1.0e-6, 10.0) - 1.0).abs() < 1.0e-6);
        // coherence-to-pulse ratio of 10⁻¹ gives 0.95
        assert!((g2_pulsed(1.0, 10.0) - 0.95).abs() < 1.0e-12);
        for tc in [0.1, 1.0, 10.0, 100.0] {
            let g2 = g2_pulsed(tc, 7.0);
            assert!((0.5..=1.0).contains(&g2));
        }
    }

    #[test]
    fn regime_map_corners() {
        let dt: Vec<f64> = vec![1.0, 5.0, 10.0, 20.0, 50.0, 200.0, 2000.0, 20000.0];
        let coh: Vec<f64> = vec![0.1, 1.0, 10.0, 100.0, 1000.0];
        let map = build_regime_map(&dt, &coh, &ClassicalSource::Proxy);

        for row in &map.combined {
            for &v in row {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        // long separation, short coherence: no suppression
        let v = map.combined[0][dt.len() - 1];
        assert!(v > 0.95, "Poissonian corner {v}");
        // coherence above twice the separation: complete quantum dip
        let i = coh.iter().position(|&c| c == 1000.0).unwrap();
        let j = dt.iter().position(|&t| t == 50.0).unwrap();
        assert_eq!(map.quantum[i][j], 0.0);
        assert_eq!(map.combined[i][j], 0.0);
        // short separation: complete classical dip regardless of coherence
        let j = dt.iter().position(|&t| t == 10.0).unwrap();
        assert_eq!(map.classical[0][j], 0.0);
        assert_eq!(map.combined[0][j], 0.0);
        // factorization: combined equals q wherever c = 1
        let i = 0;
        let j = dt.len() - 1;
        assert!((map.combined[i][j] - map.quantum[i][j] * map.classical[i][j]).abs() < 1e-15);
    }

    #[test]
    fn params_validated() {
        let mut p = params();
        p.energy_spread = -1.0;
        assert!(p.validate().is_err());
        assert!(params().validate().is_ok());
    }
}
