//! Trajectory propagation from the tip surface to the detection plane.
//!
//! Forces on an electron at position r (tip at the origin):
//!   - tip acceleration: the field of a sphere held at fixed potential,
//!     radial with magnitude `tip_energy_gain · R_tip / r²`, so the kinetic
//!     energy at radius r is E₀ + ΔE·(1 − R_tip/r);
//!   - mutual Coulomb repulsion between live electrons, scaled by the
//!     dimensionless strength k;
//!   - a uniform retarding force over the final `retard_length` before the
//!     detection plane (detector front bias);
//!   - optionally, an attractive +1e image charge at the origin (sensitivity
//!     studies only, off by default).
//!
//! [`propagate`] integrates the coupled equations with classic fourth-order
//! Runge–Kutta under piecewise step control: the step is capped near the tip
//! (the stiff region), capped loosely in the drift region, shrunk wherever
//! the per-step fractional force change exceeds the configured bound, and
//! always lands exactly on emission times and on the retard-region boundary
//! so that no step straddles a force discontinuity.
//!
//! [`fly_single`] evaluates the same physics for a single non-interacting
//! electron without stepping: the tip field is an exact repulsive-Coulomb
//! central force, so the orbit is integrated by quadrature in its orbital
//! plane and continued analytically along the asymptote and through the
//! retarding region. The two paths are cross-validated in the tests; the
//! fast one makes long pulse trains affordable.

use crate::config::ApparatusGeometry;
use crate::constants::{COULOMB_COUPLING, ELECTRON_MASS};
use crate::emission::{ElectronLabel, ElectronState, PulseEmission};
use crate::vec3::Vec3;
use std::sync::OnceLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("electron at radius {radius} nm is inside the tip (R = {tip_radius} nm)")]
    InsideTip { radius: f64, tip_radius: f64 },
    #[error("coincident electron positions at {0:?}")]
    CoincidentPositions(Vec3),
    #[error(
        "step size underflow at t = {time} fs (dt = {dt} fs); initial conditions: {initial:?}"
    )]
    StepUnderflow { time: f64, dt: f64, initial: Vec<(Vec3, Vec3, f64)> },
    #[error("integration exceeded {0} steps")]
    MaxSteps(u64),
}

/// Static force configuration for one run.
#[derive(Debug, Clone)]
pub struct ForceField {
    /// eV gained from the tip field between the surface and infinity.
    pub tip_energy_gain: f64,
    /// nm.
    pub tip_radius: f64,
    /// Dimensionless electron-electron coupling scale (1 = physical).
    pub coulomb_strength: f64,
    /// Attractive +1e charge at the origin, for sensitivity checks.
    pub image_charge: bool,
}

impl ForceField {
    pub fn from_config(cfg: &crate::config::RunConfig) -> Self {
        ForceField {
            tip_energy_gain: cfg.final_energy - cfg.initial_energy,
            tip_radius: cfg.geometry.tip_radius,
            coulomb_strength: cfg.coulomb_strength,
            image_charge: cfg.image_charge,
        }
    }

    fn tip_a(&self) -> f64 {
        self.tip_energy_gain * self.tip_radius
    }
}

/// Step-size control; `halved` supports convergence checks.
#[derive(Debug, Clone)]
pub struct StepControl {
    /// fs cap while any electron is within 100 tip radii.
    pub near_tip_cap: f64,
    /// fs cap in the drift region.
    pub drift_cap: f64,
    /// Maximum per-step fractional change of the force on any electron.
    pub force_change_frac: f64,
    /// fs; steps below this are reported as underflow.
    pub min_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl { near_tip_cap: 0.25, drift_cap: 1.0e4, force_change_frac: 0.01, min_step: 1.0e-9 }
    }
}

impl StepControl {
    pub fn halved(&self) -> Self {
        StepControl {
            near_tip_cap: 0.5 * self.near_tip_cap,
            drift_cap: 0.5 * self.drift_cap,
            force_change_frac: 0.5 * self.force_change_frac,
            min_step: self.min_step,
        }
    }
}

/// An electron's arrival at the detection plane z = L.
#[derive(Debug, Clone, Copy)]
pub struct PlaneCrossing {
    /// Interpolated position with position.z = L exactly (nm).
    pub position: Vec3,
    /// fs from the pulse start, includes the emission time.
    pub crossing_time: f64,
    /// eV at the plane (after the retarding region).
    pub final_energy: f64,
    /// Whether the trajectory passed the aperture test on the way.
    pub within_aperture: bool,
    pub label: ElectronLabel,
}

#[derive(Debug, Clone, Default)]
pub struct PropagationResult {
    pub crossings: Vec<PlaneCrossing>,
    /// Electrons that left the 2L bounding sphere or returned into the tip.
    pub lost: usize,
}

/// Tip force (eV/nm) at position `r`. Radial, magnitude ΔE·R_tip/r².
pub fn tip_force(r: Vec3, field: &ForceField) -> Result<Vec3, DynamicsError> {
    let dist = r.norm();
    if dist < field.tip_radius {
        return Err(DynamicsError::InsideTip { radius: dist, tip_radius: field.tip_radius });
    }
    Ok(tip_force_unchecked(r, field))
}

#[inline]
fn tip_force_unchecked(r: Vec3, field: &ForceField) -> Vec3 {
    let d2 = r.norm_sq();
    if d2 == 0.0 {
        return Vec3::ZERO;
    }
    let inv = 1.0 / d2.sqrt();
    let mut mag = field.tip_a() * inv * inv;
    if field.image_charge {
        mag -= COULOMB_COUPLING * inv * inv;
    }
    r * (mag * inv)
}

/// Tip potential energy (eV), zero at infinity.
pub fn tip_potential(r: f64, field: &ForceField) -> f64 {
    let mut v = field.tip_a() / r;
    if field.image_charge {
        v -= COULOMB_COUPLING / r;
    }
    v
}

/// Coulomb force (eV/nm) on the electron at `r1` from the one at `r2`.
/// The force on electron 2 is the exact negation.
pub fn coulomb_force(r1: Vec3, r2: Vec3, k: f64) -> Result<Vec3, DynamicsError> {
    let d = r1 - r2;
    let d2 = d.norm_sq();
    if d2 == 0.0 {
        return Err(DynamicsError::CoincidentPositions(r1));
    }
    let inv = 1.0 / d2.sqrt();
    Ok(d * (k * COULOMB_COUPLING * inv * inv * inv))
}

/// Mutual Coulomb potential energy (eV) of a pair at separation `d` nm.
pub fn pair_potential(d: f64, k: f64) -> f64 {
    k * COULOMB_COUPLING / d
}

/// Retarding force (eV/nm): uniform along −z inside
/// [L − retard_length, L], zero elsewhere.
pub fn retard_force(r: Vec3, geometry: &ApparatusGeometry) -> Vec3 {
    if r.z >= geometry.retard_start() && r.z <= geometry.detection_plane_l {
        Vec3::new(0.0, 0.0, -geometry.retard_barrier / geometry.retard_length)
    } else {
        Vec3::ZERO
    }
}

/// Retarding potential energy (eV) as a function of z.
pub fn retard_potential(z: f64, geometry: &ApparatusGeometry) -> f64 {
    let start = geometry.retard_start();
    if z <= start {
        0.0
    } else if z >= geometry.detection_plane_l {
        geometry.retard_barrier
    } else {
        geometry.retard_barrier * (z - start) / geometry.retard_length
    }
}

// Internal retard force without the upper z cutoff: electrons are finalized
// at the plane by interpolation, and keeping the force continuous past L
// avoids a discontinuity inside the final step.
#[inline]
fn retard_force_open(z: f64, retard_start: f64, decel: f64) -> f64 {
    if z >= retard_start {
        -decel
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Waiting,
    Active,
    Finished,
}

#[derive(Debug, Clone, Copy)]
struct Body {
    pos: Vec3,
    vel: Vec3,
    launch: f64,
    label: ElectronLabel,
    phase: Phase,
    aperture_ok: Option<bool>,
}

const MAX_BODIES: usize = 3;
const MAX_STEPS: u64 = 200_000_000;

/// Observer invoked once per accepted step per live electron with
/// (time fs, electron index, position, velocity).
pub type StepObserver<'a> = &'a mut dyn FnMut(f64, usize, Vec3, Vec3);

/// Integrate a pulse's electrons to the detection plane. See the module
/// docs for the force model and step control. Trailing electrons are held
/// at their emission site, exerting and feeling no forces, until their
/// emission time.
pub fn propagate(
    emission: &PulseEmission,
    field: &ForceField,
    geometry: &ApparatusGeometry,
    control: &StepControl,
) -> Result<PropagationResult, DynamicsError> {
    propagate_observed(emission, field, geometry, control, None)
}

/// [`propagate`] with an optional per-step observer (trajectory dumps,
/// conservation checks).
pub fn propagate_observed(
    emission: &PulseEmission,
    field: &ForceField,
    geometry: &ApparatusGeometry,
    control: &StepControl,
    mut observer: Option<StepObserver<'_>>,
) -> Result<PropagationResult, DynamicsError> {
    let n = emission.electrons.len();
    assert!((1..=MAX_BODIES).contains(&n), "propagate expects 1 to 3 electrons");

    let mut bodies: Vec<Body> = emission
        .electrons
        .iter()
        .map(|e| Body {
            pos: e.position,
            vel: e.velocity,
            launch: e.emission_time,
            label: e.label,
            phase: Phase::Waiting,
            aperture_ok: None,
        })
        .collect();

    let initial: Vec<(Vec3, Vec3, f64)> =
        emission.electrons.iter().map(|e| (e.position, e.velocity, e.emission_time)).collect();

    let plane_z = geometry.detection_plane_l;
    let retard_start = geometry.retard_start();
    let decel = geometry.retard_barrier / geometry.retard_length;
    let aperture_z = geometry.aperture_distance;
    let aperture_r2 = geometry.aperture_radius() * geometry.aperture_radius();
    let lost_r2 = 4.0 * plane_z * plane_z;
    let near_r = 100.0 * field.tip_radius;
    let k = field.coulomb_strength;

    let mut result = PropagationResult::default();
    let mut t = 0.0f64;
    let mut dt_ctrl = 0.01f64.min(control.near_tip_cap);
    let mut steps: u64 = 0;

    loop {
        // launch everything due at the current time
        for b in bodies.iter_mut() {
            if b.phase == Phase::Waiting && b.launch <= t + 1.0e-9 {
                b.phase = Phase::Active;
            }
        }

        let active: Vec<usize> =
            (0..n).filter(|&i| bodies[i].phase == Phase::Active).collect();

        if active.is_empty() {
            // jump to the next launch, or finish
            match bodies
                .iter()
                .filter(|b| b.phase == Phase::Waiting)
                .map(|b| b.launch)
                .min_by(f64::total_cmp)
            {
                Some(next) => {
                    t = next;
                    continue;
                }
                None => break,
            }
        }

        // regional caps: fine near the tip, moderate inside the retarding
        // region (keeps the final crossing interpolation sub-fs), loose in
        // the drift region
        let mut dt_cap = control.drift_cap;
        for &i in &active {
            let b = &bodies[i];
            if b.pos.norm() < near_r {
                dt_cap = dt_cap.min(control.near_tip_cap);
            }
            if b.pos.z >= retard_start {
                dt_cap = dt_cap.min(2000.0_f64.min(control.drift_cap));
            }
        }
        let mut dt = dt_ctrl.min(dt_cap);

        // land exactly on the next launch event
        let mut event_capped = false;
        for b in &bodies {
            if b.phase == Phase::Waiting {
                let gap = b.launch - t;
                if gap < dt {
                    dt = gap.max(1.0e-9);
                    event_capped = true;
                }
            }
        }

        // stop just short of the retard-region boundary, then hop across it
        // with a tiny step, so that no sizable step straddles the force
        // discontinuity
        for &i in &active {
            let b = &bodies[i];
            if b.pos.z < retard_start && b.vel.z > 0.0 {
                let cross = (retard_start - b.pos.z) / b.vel.z;
                if cross > 1.0e-3 {
                    let land = cross * (1.0 - 1.0e-9);
                    if land < dt {
                        dt = land;
                        event_capped = true;
                    }
                } else if dt > 2.0e-3 {
                    dt = 2.0e-3; // hop
                    event_capped = true;
                }
            }
        }

        // forces at the step start, for the force-change criterion
        let start_forces = forces(&bodies, &active, field, k, retard_start, decel)?;

        // trial step with force-change rejection
        let mut trial;
        let mut frac;
        loop {
            trial = rk4_step(&bodies, &active, dt, field, k, retard_start, decel)?;
            let end_forces = forces(&trial, &active, field, k, retard_start, decel)?;
            frac = force_change(&start_forces, &end_forces, &active);
            if frac <= control.force_change_frac || event_capped {
                break;
            }
            dt *= 0.5;
            if dt < control.min_step {
                return Err(DynamicsError::StepUnderflow { time: t, dt, initial });
            }
        }

        // controller update for the next step; event-capped steps leave the
        // controller alone so landings don't collapse it
        if !event_capped {
            if frac < 0.25 * control.force_change_frac {
                dt_ctrl = (dt * 1.5).min(control.drift_cap);
            } else if frac <= control.force_change_frac {
                dt_ctrl = (dt * 1.05).min(control.drift_cap);
            } else {
                dt_ctrl = dt;
            }
        }

        let t_new = t + dt;

        // commit, then detect crossings on the committed segment
        for &i in &active {
            let old = bodies[i];
            let new = trial[i];

            // aperture plane
            if bodies[i].aperture_ok.is_none() && old.pos.z < aperture_z && new.pos.z >= aperture_z
            {
                let f = (aperture_z - old.pos.z) / (new.pos.z - old.pos.z);
                let x = old.pos.x + f * (new.pos.x - old.pos.x) + geometry.beam_lateral_offset;
                let y = old.pos.y + f * (new.pos.y - old.pos.y);
                bodies[i].aperture_ok = Some(x * x + y * y <= aperture_r2);
            }
            let aperture_ok = bodies[i].aperture_ok;

            if new.pos.z >= plane_z {
                let f = (plane_z - old.pos.z) / (new.pos.z - old.pos.z);
                let pos = Vec3::new(
                    old.pos.x + f * (new.pos.x - old.pos.x),
                    old.pos.y + f * (new.pos.y - old.pos.y),
                    plane_z,
                );
                let vel = old.vel + (new.vel - old.vel) * f;
                result.crossings.push(PlaneCrossing {
                    position: pos,
                    crossing_time: t + f * dt,
                    final_energy: 0.5 * ELECTRON_MASS * vel.norm_sq(),
                    within_aperture: aperture_ok.unwrap_or(false),
                    label: old.label,
                });
                bodies[i].phase = Phase::Finished;
            } else if new.pos.norm_sq() > lost_r2 || new.pos.norm() < field.tip_radius {
                result.lost += 1;
                bodies[i].phase = Phase::Finished;
            } else {
                bodies[i].pos = new.pos;
                bodies[i].vel = new.vel;
                if let Some(obs) = observer.as_mut() {
                    obs(t_new, i, new.pos, new.vel);
                }
            }
        }

        t = t_new;
        steps += 1;
        if steps > MAX_STEPS {
            return Err(DynamicsError::MaxSteps(MAX_STEPS));
        }

        if bodies.iter().all(|b| b.phase == Phase::Finished) {
            break;
        }
    }

    Ok(result)
}

fn forces(
    bodies: &[Body],
    active: &[usize],
    field: &ForceField,
    k: f64,
    retard_start: f64,
    decel: f64,
) -> Result<Vec<Vec3>, DynamicsError> {
    let mut out = vec![Vec3::ZERO; bodies.len()];
    for &i in active {
        let p = bodies[i].pos;
        let mut f = tip_force_unchecked(p, field);
        f.z += retard_force_open(p.z, retard_start, decel);
        out[i] = f;
    }
    if k > 0.0 {
        for (a_idx, &i) in active.iter().enumerate() {
            for &j in &active[a_idx + 1..] {
                let fc = coulomb_force(bodies[i].pos, bodies[j].pos, k)?;
                out[i] += fc;
                out[j] -= fc;
            }
        }
    }
    Ok(out)
}

fn rk4_step(
    bodies: &[Body],
    active: &[usize],
    dt: f64,
    field: &ForceField,
    k: f64,
    retard_start: f64,
    decel: f64,
) -> Result<Vec<Body>, DynamicsError> {
    let inv_m = 1.0 / ELECTRON_MASS;
    let stage = |base: &[Body], src: &[Body], h: f64| -> Result<Vec<Body>, DynamicsError> {
        // state = base + h * derivative(src)
        let f = forces(src, active, field, k, retard_start, decel)?;
        let mut out = base.to_vec();
        for &i in active {
            out[i].pos = base[i].pos + src[i].vel * h;
            out[i].vel = base[i].vel + f[i] * (h * inv_m);
        }
        Ok(out)
    };

    let k1 = bodies.to_vec();
    let k2 = stage(bodies, &k1, 0.5 * dt)?;
    let k3 = stage(bodies, &k2, 0.5 * dt)?;
    let k4 = stage(bodies, &k3, dt)?;

    let f1 = forces(&k1, active, field, k, retard_start, decel)?;
    let f2 = forces(&k2, active, field, k, retard_start, decel)?;
    let f3 = forces(&k3, active, field, k, retard_start, decel)?;
    let f4 = forces(&k4, active, field, k, retard_start, decel)?;

    let mut out = bodies.to_vec();
    let sixth = dt / 6.0;
    for &i in active {
        let dv = (f1[i] + f2[i] * 2.0 + f3[i] * 2.0 + f4[i]) * (sixth * inv_m);
        let dx = (k1[i].vel + k2[i].vel * 2.0 + k3[i].vel * 2.0 + k4[i].vel) * sixth;
        out[i].pos = bodies[i].pos + dx;
        out[i].vel = bodies[i].vel + dv;
    }
    Ok(out)
}

fn force_change(start: &[Vec3], end: &[Vec3], active: &[usize]) -> f64 {
    let mut worst = 0.0f64;
    for &i in active {
        let delta = (end[i] - start[i]).norm();
        let scale = start[i].norm().max(end[i].norm()).max(1.0e-30);
        worst = worst.max(delta / scale);
    }
    worst
}

// ---------------------------------------------------------------------------
// Fast exact path for a single non-interacting electron.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub enum SingleOutcome {
    Crossed(PlaneCrossing),
    Lost,
}

/// Gauss–Legendre nodes/weights on [-1, 1], computed once by Newton
/// iteration on the Legendre recurrence.
fn gauss_legendre_32() -> &'static [(f64, f64); 32] {
    static TABLE: OnceLock<[(f64, f64); 32]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let n = 32usize;
        let mut table = [(0.0f64, 0.0f64); 32];
        for i in 0..(n + 1) / 2 {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                // Legendre P_n(x) and derivative by recurrence
                let (mut p0, mut p1) = (1.0f64, x);
                for j in 2..=n {
                    let jf = j as f64;
                    let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1.0e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            table[i] = (x, w);
            table[n - 1 - i] = (-x, w);
        }
        table
    })
}

/// ∫ f over [a, b] with 32-point Gauss–Legendre.
fn gl32<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    gauss_legendre_32()
        .iter()
        .map(|&(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Exact flight of one electron with no electron-electron interaction.
///
/// Inside the central tip field the radial motion and azimuthal sweep are
/// reduced to one-dimensional quadratures in the orbital plane (energy and
/// angular momentum are conserved); beyond a matching radius the trajectory
/// is its straight asymptote with the closed-form residual time of the
/// 1/r potential, followed by analytic kinematics through the retarding
/// region. Not valid with the image-charge option (the potential is no
/// longer purely repulsive); callers fall back to RK4 there.
pub fn fly_single(
    state: &ElectronState,
    field: &ForceField,
    geometry: &ApparatusGeometry,
) -> SingleOutcome {
    debug_assert!(!field.image_charge, "fast path requires a purely repulsive field");
    let m = ELECTRON_MASS;
    let r_start = state.position.norm();
    let a_coef = field.tip_a(); // eV·nm
    let e_total = 0.5 * m * state.velocity.norm_sq() + a_coef / r_start;
    let v_inf = (2.0 * e_total / m).sqrt();
    let c = a_coef / e_total; // length scale of the 1/r tail

    // orbital-plane basis
    let e_r = state.position * (1.0 / r_start);
    let v_r0 = state.velocity.dot(e_r);
    let v_t_vec = state.velocity - e_r * v_r0;
    let v_t0 = v_t_vec.norm();
    let ang_l = m * v_t0 * r_start; // angular momentum
    let e_t = if v_t0 > 1.0e-14 { v_t_vec * (1.0 / v_t0) } else { Vec3::ZERO };

    let r_match = (4000.0 * r_start).min(0.5 * geometry.aperture_distance);

    // radial speed along the orbit
    let vr = |r: f64| -> f64 {
        let lr = ang_l / (m * r);
        ((2.0 / m) * (e_total - a_coef / r) - lr * lr).max(0.0).sqrt()
    };

    // time and azimuthal sweep up to r_match: singular-start substitution
    // r = r0 + u² over the first segment, log substitution beyond
    let mut t_match = 0.0;
    let mut phi = 0.0;
    {
        let u_max = r_start.sqrt(); // first segment [r0, 2 r0]
        t_match += gl32(0.0, u_max, |u| 2.0 * u / vr(r_start + u * u));
        if ang_l > 0.0 {
            phi += gl32(0.0, u_max, |u| {
                let r = r_start + u * u;
                2.0 * u * ang_l / (m * r * r * vr(r))
            });
        }
        for (lo, hi) in [(2.0 * r_start, 40.0 * r_start), (40.0 * r_start, r_match)] {
            let (sa, sb) = (lo.ln(), hi.ln());
            t_match += gl32(sa, sb, |s| {
                let r = s.exp();
                r / vr(r)
            });
            if ang_l > 0.0 {
                phi += gl32(sa, sb, |s| {
                    let r = s.exp();
                    ang_l / (m * r * vr(r))
                });
            }
        }
    }

    // state at the matching radius
    let (sin_phi, cos_phi) = phi.sin_cos();
    let pos_m = (e_r * cos_phi + e_t * sin_phi) * r_match;
    let v_radial = vr(r_match);
    let v_tang = ang_l / (m * r_match);
    let vel_m = (e_r * cos_phi + e_t * sin_phi) * v_radial + (e_t * cos_phi - e_r * sin_phi) * v_tang;
    let dir = vel_m.normalized();

    if dir.z <= 1.0e-9 {
        return SingleOutcome::Lost;
    }

    // closed-form время along the asymptote: t(r) = g(r)/v_inf,
    // g(r) = sqrt(r(r−c)) + c·ln(√r + √(r−c)) for v(r) = v_inf√(1−c/r)
    let g = |r: f64| -> f64 {
        let rc = (r - c).max(0.0);
        (r * rc).sqrt() + c * (r.sqrt() + rc.sqrt()).ln()
    };
    let line_time = |r_from: f64, r_to: f64| (g(r_to) - g(r_from)) / v_inf;
    let speed_at = |r: f64| (2.0 * (e_total - a_coef / r) / m).sqrt();

    // aperture plane
    let s_ap = (geometry.aperture_distance - pos_m.z) / dir.z;
    let ap_x = pos_m.x + dir.x * s_ap + geometry.beam_lateral_offset;
    let ap_y = pos_m.y + dir.y * s_ap;
    let within_aperture =
        ap_x * ap_x + ap_y * ap_y <= geometry.aperture_radius() * geometry.aperture_radius();

    // retard-region entry
    let retard_start = geometry.retard_start();
    let s_ret = (retard_start - pos_m.z) / dir.z;
    if s_ret < 0.0 {
        return SingleOutcome::Lost; // matching radius beyond the retard region: degenerate config
    }
    let r_ret = r_match + s_ret;
    let p_ret = pos_m + dir * s_ret;
    let v_ret = speed_at(r_ret);
    let vel_ret = dir * v_ret;
    if vel_ret.z <= 0.0 {
        return SingleOutcome::Lost;
    }

    // uniform deceleration along z over the retard length
    let decel = geometry.retard_barrier / (geometry.retard_length * m); // nm/fs²
    let vz2_exit = vel_ret.z * vel_ret.z - 2.0 * geometry.retard_barrier / m;
    if vz2_exit <= 0.0 {
        return SingleOutcome::Lost; // reflected by the barrier
    }
    let vz_exit = vz2_exit.sqrt();
    let t_ret = if decel > 0.0 { (vel_ret.z - vz_exit) / decel } else {
        geometry.retard_length / vel_ret.z
    };

    let pos_final = Vec3::new(
        p_ret.x + vel_ret.x * t_ret,
        p_ret.y + vel_ret.y * t_ret,
        geometry.detection_plane_l,
    );
    let vel_final = Vec3::new(vel_ret.x, vel_ret.y, vz_exit);

    // same bounding sphere as the stepped integrator
    if pos_final.norm_sq() > 4.0 * geometry.detection_plane_l * geometry.detection_plane_l {
        return SingleOutcome::Lost;
    }

    let crossing_time =
        state.emission_time + t_match + line_time(r_match, r_ret) + t_ret;

    SingleOutcome::Crossed(PlaneCrossing {
        position: pos_final,
        crossing_time,
        final_energy: 0.5 * m * vel_final.norm_sq(),
        within_aperture,
        label: state.label,
    })
}
