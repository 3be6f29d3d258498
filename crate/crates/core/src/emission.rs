//! Stochastic photoemission from the hemispherical tip apex.
//!
//! Per laser pulse the electron count is Poisson-distributed (truncated at
//! three electrons; the folded residual mass is below 6e-6 at the operating
//! λ ≈ 0.14 and far smaller in the cone). Emission sites are uniform by area
//! on the spherical cap subtended by the detector aperture, launch
//! directions follow a cosine law about the local surface normal, and
//! emission times fall inside the pulse window.

use crate::config::{EmissionTimeLaw, RunConfig};
use crate::constants::speed_from_energy;
use crate::rng::{stream, StreamKind};
use crate::vec3::Vec3;
use rand::Rng;

/// Emission cone around +z; electrons outside it cannot pass the aperture
/// and are not simulated.
#[derive(Debug, Clone, Copy)]
pub struct EmissionCone {
    pub half_angle: f64,
}

impl EmissionCone {
    pub fn from_geometry(geometry: &crate::config::ApparatusGeometry) -> Self {
        EmissionCone { half_angle: geometry.cone_half_angle() }
    }
}

/// Role of an electron within its pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElectronLabel {
    Single,
    Leading,
    Trailing,
}

/// One electron in flight. Position in nm (on the tip surface at creation),
/// velocity in nm/fs, emission time in fs relative to the pulse start.
#[derive(Debug, Clone, Copy)]
pub struct ElectronState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub emission_time: f64,
    pub label: ElectronLabel,
}

/// All electrons emitted by one laser pulse, ordered by emission time.
#[derive(Debug, Clone)]
pub struct PulseEmission {
    pub pulse_index: u64,
    pub electrons: Vec<ElectronState>,
}

/// Electron count for one pulse: Poisson(λ) truncated at 3, with the
/// residual mass folded into n = 3.
pub fn sample_count(lambda: f64, rng: &mut impl Rng) -> u32 {
    debug_assert!(lambda > 0.0);
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut p = (-lambda).exp();
    for n in 0..3u32 {
        cumulative += p;
        if u < cumulative {
            return n;
        }
        p *= lambda / (n + 1) as f64;
    }
    3
}

/// Count conditioned on n ≥ 1, used by the sparse pulse-train driver.
pub(crate) fn sample_count_nonempty(lambda: f64, rng: &mut impl Rng) -> u32 {
    let p0 = (-lambda).exp();
    let u: f64 = rng.random::<f64>() * (1.0 - p0);
    let mut cumulative = 0.0;
    let mut p = p0 * lambda; // P(1)
    for n in 1..3u32 {
        cumulative += p;
        if u < cumulative {
            return n;
        }
        p *= lambda / (n + 1) as f64;
    }
    3
}

/// Uniform-by-area point on the spherical cap of polar angle ≤ `half_angle`,
/// at radius `tip_radius`. Uniformity on the sphere means cos θ uniform on
/// [cos θ_c, 1].
pub fn sample_position(tip_radius: f64, cone: EmissionCone, rng: &mut impl Rng) -> Vec3 {
    let cos_min = cone.half_angle.cos();
    let cos_theta = 1.0 - rng.random::<f64>() * (1.0 - cos_min);
    let sin_theta = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    Vec3::new(
        tip_radius * sin_theta * phi.cos(),
        tip_radius * sin_theta * phi.sin(),
        tip_radius * cos_theta,
    )
}

/// Unit launch direction with a cosine distribution about `surface_normal`:
/// density ∝ cos α sin α for the polar angle α from the normal, azimuth
/// uniform. Zero probability parallel to the surface.
pub fn sample_direction(surface_normal: Vec3, rng: &mut impl Rng) -> Vec3 {
    // sin²α uniform on [0,1]  ⇒  sin α = √u
    let u: f64 = rng.random();
    let sin_a = u.sqrt();
    let cos_a = (1.0 - u).sqrt();
    let phi = rng.random::<f64>() * std::f64::consts::TAU;

    // orthonormal frame about the normal
    let n = surface_normal;
    let helper = if n.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
    let t1 = {
        let raw = Vec3::new(
            helper.y * n.z - helper.z * n.y,
            helper.z * n.x - helper.x * n.z,
            helper.x * n.y - helper.y * n.x,
        );
        raw.normalized()
    };
    let t2 = Vec3::new(
        n.y * t1.z - n.z * t1.y,
        n.z * t1.x - n.x * t1.z,
        n.x * t1.y - n.y * t1.x,
    );

    (n * cos_a + t1 * (sin_a * phi.cos()) + t2 * (sin_a * phi.sin())).normalized()
}

fn sample_emission_time(window: f64, law: EmissionTimeLaw, rng: &mut impl Rng) -> f64 {
    if window == 0.0 {
        return 0.0;
    }
    match law {
        EmissionTimeLaw::Uniform => rng.random::<f64>() * window,
        EmissionTimeLaw::Gaussian => {
            // truncated normal centered in the window
            let dist = rand_distr::Normal::new(0.5 * window, 0.25 * window).unwrap();
            loop {
                let t = rng.sample(dist);
                if (0.0..=window).contains(&t) {
                    return t;
                }
            }
        }
    }
}

fn make_electron(
    config: &RunConfig,
    cone: EmissionCone,
    emission_time: f64,
    label: ElectronLabel,
    rng: &mut impl Rng,
) -> ElectronState {
    let position = sample_position(config.geometry.tip_radius, cone, rng);
    let normal = position.normalized();
    let direction = sample_direction(normal, rng);
    let speed = speed_from_energy(config.initial_energy);
    ElectronState { position, velocity: direction * speed, emission_time, label }
}

fn label_by_order(electrons: &mut [ElectronState]) {
    electrons.sort_by(|a, b| a.emission_time.total_cmp(&b.emission_time));
    match electrons.len() {
        0 => {}
        1 => electrons[0].label = ElectronLabel::Single,
        _ => {
            electrons[0].label = ElectronLabel::Leading;
            for e in &mut electrons[1..] {
                e.label = ElectronLabel::Trailing;
            }
        }
    }
}

/// Pulse-train emission: n ~ truncated Poisson(λ_cone) electrons with
/// emission times inside the pulse window.
pub fn emit_pulse(config: &RunConfig, pulse_index: u64, rng: &mut impl Rng) -> PulseEmission {
    let n = sample_count(config.lambda_cone(), rng);
    emit_pulse_with_count(config, pulse_index, n, rng)
}

/// Pulse emission with externally chosen electron count. The sparse train
/// driver uses this with counts conditioned on n ≥ 1.
pub(crate) fn emit_pulse_with_count(
    config: &RunConfig,
    pulse_index: u64,
    n: u32,
    rng: &mut impl Rng,
) -> PulseEmission {
    let cone = EmissionCone::from_geometry(&config.geometry);
    let mut electrons = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let t = sample_emission_time(config.pulse_window, config.emission_time_law, rng);
        electrons.push(make_electron(config, cone, t, ElectronLabel::Single, rng));
    }
    label_by_order(&mut electrons);
    PulseEmission { pulse_index, electrons }
}

/// Dedicated two-electron mode: the leading electron is pinned to t = 0
/// (only the relative delay matters for the dip, and pinning halves the
/// variance); the trailing electron launches within the pulse window.
pub fn emit_pair(config: &RunConfig, pair_index: u64, rng: &mut impl Rng) -> PulseEmission {
    let cone = EmissionCone::from_geometry(&config.geometry);
    let first = make_electron(config, cone, 0.0, ElectronLabel::Leading, rng);
    let dt = sample_emission_time(config.pulse_window, config.emission_time_law, rng);
    let second = make_electron(config, cone, dt, ElectronLabel::Trailing, rng);
    PulseEmission { pulse_index: pair_index, electrons: vec![first, second] }
}

/// Convenience: the (seed, index)-derived stream for a pulse.
pub fn pulse_rng(seed: u64, pulse_index: u64) -> rand_chacha::ChaCha8Rng {
    stream(seed, StreamKind::Pulse, pulse_index)
}

/// Convenience: the (seed, index)-derived stream for a pair.
pub fn pair_rng(seed: u64, pair_index: u64) -> rand_chacha::ChaCha8Rng {
    stream(seed, StreamKind::Pair, pair_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ApparatusGeometry;

    fn test_config() -> RunConfig {
        RunConfig::default()
    }

    #[test]
    fn count_frequencies_match_poisson() {
        // χ² against the Poisson law over n ∈ {0,1,2,3+} at λ = 0.141
        let lambda = 0.141;
        let n_pulses = 1_000_000u64;
        let mut observed = [0u64; 4];
        for i in 0..n_pulses {
            let mut rng = pulse_rng(20240601, i);
            observed[sample_count(lambda, &mut rng) as usize] += 1;
        }
        let p3_plus = 1.0
            - crate::statistics::poisson_pn(lambda, 0)
            - crate::statistics::poisson_pn(lambda, 1)
            - crate::statistics::poisson_pn(lambda, 2);
        let expected = [
            crate::statistics::poisson_pn(lambda, 0),
            crate::statistics::poisson_pn(lambda, 1),
            crate::statistics::poisson_pn(lambda, 2),
            p3_plus,
        ];
        let mut chi2 = 0.0;
        for k in 0..4 {
            let e = expected[k] * n_pulses as f64;
            let d = observed[k] as f64 - e;
            chi2 += d * d / e;
        }
        // χ² 99th percentile at 3 dof is 11.345, i.e. p > 0.01
        assert!(chi2 < 11.345, "χ² = {chi2}, observed {observed:?}");
    }

    #[test]
    fn two_electron_fraction_at_cone_rate() {
        // P(n = 2) at λ_cone = 0.010177 is 5.1256e-5
        let lambda = 0.010177;
        let n_pulses = 10_000_000u64;
        let mut doubles = 0u64;
        for i in 0..n_pulses {
            let mut rng = pulse_rng(8, i);
            if sample_count(lambda, &mut rng) == 2 {
                doubles += 1;
            }
        }
        let frac = doubles as f64 / n_pulses as f64;
        let expected = crate::statistics::poisson_pn(lambda, 2);
        assert!(
            (frac / expected - 1.0).abs() < 0.05,
            "doubles fraction {frac:.3e} vs {expected:.3e}"
        );
    }

    #[test]
    fn empty_beam_limit() {
        let mut rng = pulse_rng(1, 0);
        for _ in 0..1000 {
            assert_eq!(sample_count(1.0e-12, &mut rng), 0);
        }
    }

    #[test]
    fn positions_on_cap() {
        let geometry = ApparatusGeometry::default();
        let cone = EmissionCone::from_geometry(&geometry);
        let r = geometry.tip_radius;
        let z_min = r * cone.half_angle.cos();
        let mut rng = pulse_rng(2, 0);
        for _ in 0..10_000 {
            let p = sample_position(r, cone, &mut rng);
            assert!(((p.norm() - r) / r).abs() < 1.0e-9);
            assert!(p.z >= z_min - 1.0e-9 * r, "outside cap: {p:?}");
        }
    }

    #[test]
    fn degenerate_cone_hits_pole() {
        let mut rng = pulse_rng(3, 0);
        let p = sample_position(25.0, EmissionCone { half_angle: 1.0e-300 }, &mut rng);
        assert!((p.z - 25.0).abs() < 1.0e-9);
    }

    #[test]
    fn cap_mean_polar_angle() {
        // oracle: <θ> = ∫θ sinθ dθ / (1 − cos θ_c) over the cap, by Simpson
        let half_angle = ApparatusGeometry::default().cone_half_angle();
        let n = 4000;
        let h = half_angle / n as f64;
        let f = |t: f64| t * t.sin();
        let mut integral = f(0.0) + f(half_angle);
        for i in 1..n {
            let t = i as f64 * h;
            integral += if i % 2 == 1 { 4.0 * f(t) } else { 2.0 * f(t) };
        }
        integral *= h / 3.0;
        let oracle = integral / (1.0 - half_angle.cos());

        let cone = EmissionCone { half_angle };
        let mut rng = pulse_rng(4, 0);
        let n_samples = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n_samples {
            let p = sample_position(25.0, cone, &mut rng);
            sum += (p.z / 25.0).clamp(-1.0, 1.0).acos();
        }
        let mean = sum / n_samples as f64;
        assert!((mean - oracle).abs() < 0.002, "mean {mean} vs oracle {oracle}");
        // the oracle itself sits near 0.135 rad for the default cone
        assert!((oracle - 0.1350).abs() < 0.0005, "oracle {oracle}");
    }

    #[test]
    fn direction_law_moments() {
        let normal = Vec3::new(0.3, -0.2, 0.93).normalized();
        let mut rng = pulse_rng(5, 0);
        let n = 1_000_000;
        let mut sum_cos = 0.0;
        let mut below_median = 0u64;
        for _ in 0..n {
            let d = sample_direction(normal, &mut rng);
            let c = d.dot(normal);
            assert!(c > 0.0, "direction below the surface");
            sum_cos += c;
            if c.acos() < std::f64::consts::FRAC_PI_4 {
                below_median += 1;
            }
        }
        // E[cos α] = ∫ cos α · 2 sin α cos α dα = 2/3
        let mean_cos = sum_cos / n as f64;
        assert!((mean_cos - 2.0 / 3.0).abs() < 0.001, "mean cos {mean_cos}");
        // CDF sin²α = 1/2 at α = π/4, so the median sits there
        let frac = below_median as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.002, "median check frac {frac}");
    }

    #[test]
    fn pulse_emission_contract() {
        let mut cfg = test_config();
        cfg.pulse_window = 50.0;
        let mut rng = pulse_rng(6, 123);
        for _ in 0..2000 {
            let pulse = emit_pulse(&cfg, 123, &mut rng);
            assert!(pulse.electrons.len() <= 3);
            for e in &pulse.electrons {
                assert!((0.0..=cfg.pulse_window).contains(&e.emission_time));
                let ke = crate::constants::energy_from_speed(e.velocity.norm());
                assert!((ke - cfg.initial_energy).abs() < 1.0e-9);
                assert!(e.velocity.normalized().dot(e.position.normalized()) > 0.0);
            }
            // labels follow emission order
            match pulse.electrons.len() {
                1 => assert_eq!(pulse.electrons[0].label, ElectronLabel::Single),
                n if n >= 2 => {
                    assert_eq!(pulse.electrons[0].label, ElectronLabel::Leading);
                    assert!(pulse.electrons[1..]
                        .iter()
                        .all(|e| e.label == ElectronLabel::Trailing));
                }
                _ => {}
            }
        }
    }

    #[test]
    fn instantaneous_pulse() {
        let mut cfg = test_config();
        cfg.pulse_window = 0.0;
        cfg.lambda_total = 5.0; // force multi-electron pulses
        cfg.cone_rate = 5.0 / (13.2e-9);
        let mut rng = pulse_rng(7, 0);
        let pulse = emit_pulse(&cfg, 0, &mut rng);
        assert!(pulse.electrons.iter().all(|e| e.emission_time == 0.0));
        let pair = emit_pair(&cfg, 0, &mut rng);
        assert!(pair.electrons.iter().all(|e| e.emission_time == 0.0));
    }

    #[test]
    fn pair_mode_contract() {
        let mut cfg = test_config();
        cfg.pulse_window = 10.0;
        let n = 1_000_000;
        let mut sum = 0.0;
        for i in 0..n {
            let mut rng = pair_rng(9, i);
            let pair = emit_pair(&cfg, i, &mut rng);
            assert_eq!(pair.electrons.len(), 2);
            assert_eq!(pair.electrons[0].emission_time, 0.0);
            let t = pair.electrons[1].emission_time;
            assert!((0.0..=10.0).contains(&t));
            sum += t;
        }
        let mean = sum / n as f64;
        assert!((mean - 5.0).abs() < 0.01, "mean delay {mean}");
    }

    #[test]
    fn deterministic_per_index() {
        let cfg = test_config();
        let mut r1 = pulse_rng(77, 1001);
        let mut r2 = pulse_rng(77, 1001);
        let a = emit_pulse(&cfg, 1001, &mut r1);
        let b = emit_pulse(&cfg, 1001, &mut r2);
        assert_eq!(a.electrons.len(), b.electrons.len());
        for (x, y) in a.electrons.iter().zip(&b.electrons) {
            assert_eq!(x.position.x.to_bits(), y.position.x.to_bits());
            assert_eq!(x.velocity.z.to_bits(), y.velocity.z.to_bits());
            assert_eq!(x.emission_time.to_bits(), y.emission_time.to_bits());
        }
    }
}
