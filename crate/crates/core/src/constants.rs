//! Physical constants in the crate's nm / fs / eV unit system.
//!
//! The values are CODATA constants converted once; they are fixed, not
//! configuration. In these units electron dynamics at eV energies stay near
//! magnitude one, which keeps the integrators well conditioned.

/// Electron mass, eV·fs²/nm² (m_e c² / c² with c = 299.792458 nm/fs).
pub const ELECTRON_MASS: f64 = 5.68563;

/// Reduced Planck constant, eV·fs.
pub const HBAR: f64 = 0.658212;

/// Coulomb coupling k_e·e², eV·nm. The potential energy of two electrons
/// separated by d nm is `COULOMB_COUPLING / d` eV.
pub const COULOMB_COUPLING: f64 = 1.43996;

/// Kinetic energy (eV) of an electron moving at `speed` nm/fs.
#[inline]
pub fn energy_from_speed(speed: f64) -> f64 {
    0.5 * ELECTRON_MASS * speed * speed
}

/// Speed (nm/fs) of an electron with kinetic energy `energy` eV.
///
/// Inverse of [`energy_from_speed`] on magnitudes. Negative energies are a
/// caller bug and panic in debug builds; callers validate first.
#[inline]
pub fn speed_from_energy(energy: f64) -> f64 {
    debug_assert!(energy >= 0.0, "negative kinetic energy {energy}");
    (2.0 * energy / ELECTRON_MASS).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent route: solve ½·m·v² = E for v by bisection, without using
    /// the closed form under test.
    fn speed_by_bisection(energy: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 1.0e3_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if energy_from_speed(mid) < energy {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn speed_energy_round_trip() {
        // relative identity to 1e-12 across eV-scale to 10 keV
        let mut e = 1.0e-3;
        while e <= 1.0e4 {
            let v = speed_from_energy(e);
            let back = energy_from_speed(v);
            assert!(
                ((back - e) / e).abs() < 1.0e-12,
                "round trip failed at E={e}: got {back}"
            );
            e *= 1.3;
        }
    }

    #[test]
    fn zero_velocity_zero_energy() {
        assert_eq!(energy_from_speed(0.0), 0.0);
        assert_eq!(speed_from_energy(0.0), 0.0);
    }

    #[test]
    fn reference_speeds() {
        // 100 eV electron: bisection oracle agrees with closed form to 1e-12,
        // and the value is 5.9310 nm/fs (5.9317 at 4-digit mass rounding).
        let v100 = speed_from_energy(100.0);
        let oracle = speed_by_bisection(100.0);
        assert!(((v100 - oracle) / oracle).abs() < 1.0e-12);
        assert!(((v100 - 5.9317) / 5.9317).abs() < 2.0e-4);
        assert!((v100 - 5.9309696).abs() < 1.0e-6);

        let v05 = speed_from_energy(0.5);
        assert!(((v05 - 0.41944) / 0.41944).abs() < 2.0e-4);
        assert!((energy_from_speed(0.41944) - 0.500).abs() < 3.0e-4);
    }
}
