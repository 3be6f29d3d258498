//! Perturbative Coulomb-impulse model: dip size as a function of the pair's
//! emission-time separation and the tip radius.
//!
//! Electrons follow straight radial rays with the speed law of the tip
//! field; the mutual Coulomb force, evaluated along the unperturbed rays,
//! is integrated into a transverse momentum kick that displaces the landing
//! points on the detection plane. The two electrons launch at the same
//! polar angle and opposite azimuths, the second delayed by Δt. The dip is
//! the change in coincidence fraction caused by the kick. Inverting the map
//! column at a given tip radius turns a measured dip into an upper bound on
//! the pair's temporal separation.

use crate::config::ApparatusGeometry;
use crate::constants::{COULOMB_COUPLING, ELECTRON_MASS};
use crate::rng::{stream, StreamKind};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PulseDurationError {
    #[error("invalid dip map spec: {0}")]
    InvalidSpec(String),
    #[error("map cell ({dt_fs} fs, {rtip_nm} nm) has zero baseline coincidences")]
    EmptyCell { dt_fs: f64, rtip_nm: f64 },
    #[error("measured dip {measured} is outside the map's range at R_tip = {rtip_nm} nm; refusing to extrapolate")]
    OutOfRange { measured: f64, rtip_nm: f64 },
    #[error("R_tip = {0} nm is outside the map grid")]
    RadiusOutsideGrid(f64),
}

/// Tabulated radial motion in the tip field: t, r(t), v(t) from the surface
/// outward, radial launch at the surface speed.
#[derive(Debug, Clone)]
pub struct RadialProfile {
    ts: Vec<f64>,
    rs: Vec<f64>,
    vs: Vec<f64>,
}

impl RadialProfile {
    /// Integrate dr/dt = v, dv/dt = A/(m r²) with A = ΔE·R_tip from the
    /// surface to `r_max`, storing every step. Steps are kept below a 0.4%
    /// radial change so linear interpolation errs well under 1e-4.
    pub fn build(tip_radius: f64, initial_energy: f64, final_energy: f64, r_max: f64) -> Self {
        let m = ELECTRON_MASS;
        let a = (final_energy - initial_energy) * tip_radius;
        let accel = |r: f64| a / (m * r * r);
        let mut t = 0.0;
        let mut r = tip_radius;
        let mut v = crate::constants::speed_from_energy(initial_energy);
        let mut ts = vec![t];
        let mut rs = vec![r];
        let mut vs = vec![v];
        while r < r_max {
            let dt = (0.004 * r / v).min(0.25 * tip_radius / v);
            // RK4 on (r, v)
            let k1 = (v, accel(r));
            let k2 = (v + 0.5 * dt * k1.1, accel(r + 0.5 * dt * k1.0));
            let k3 = (v + 0.5 * dt * k2.1, accel(r + 0.5 * dt * k2.0));
            let k4 = (v + dt * k3.1, accel(r + dt * k3.0));
            r += dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
            v += dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
            t += dt;
            ts.push(t);
            rs.push(r);
            vs.push(v);
        }
        RadialProfile { ts, rs, vs }
    }

    pub fn max_time(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    pub fn max_radius(&self) -> f64 {
        *self.rs.last().unwrap()
    }

    /// Radius at time `t` (clamped to the table's range at the far end,
    /// where the motion is ballistic).
    pub fn radius_at_time(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.rs[0];
        }
        if t >= self.max_time() {
            return self.max_radius() + (t - self.max_time()) * *self.vs.last().unwrap();
        }
        let i = self.ts.partition_point(|&x| x < t).max(1);
        let f = (t - self.ts[i - 1]) / (self.ts[i] - self.ts[i - 1]);
        self.rs[i - 1] + f * (self.rs[i] - self.rs[i - 1])
    }

    pub fn speed_at_time(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.vs[0];
        }
        if t >= self.max_time() {
            return *self.vs.last().unwrap();
        }
        let i = self.ts.partition_point(|&x| x < t).max(1);
        let f = (t - self.ts[i - 1]) / (self.ts[i] - self.ts[i - 1]);
        self.vs[i - 1] + f * (self.vs[i] - self.vs[i - 1])
    }

    pub fn time_at_radius(&self, r: f64) -> f64 {
        if r <= self.rs[0] {
            return 0.0;
        }
        if r >= self.max_radius() {
            return self.max_time() + (r - self.max_radius()) / *self.vs.last().unwrap();
        }
        let i = self.rs.partition_point(|&x| x < r).max(1);
        let f = (r - self.rs[i - 1]) / (self.rs[i] - self.rs[i - 1]);
        self.ts[i - 1] + f * (self.ts[i] - self.ts[i - 1])
    }
}

/// One Monte Carlo dip estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DipEstimate {
    pub d_rel: f64,
    pub stderr: f64,
    pub n_with: u64,
    pub n_without: u64,
    pub samples: u64,
}

struct Rays {
    u1: [f64; 3],
    u2: [f64; 3],
}

fn sample_rays(half_angle: f64, rng: &mut impl Rng) -> Rays {
    let cos_min = half_angle.cos();
    let cos_t = 1.0 - rng.random::<f64>() * (1.0 - cos_min);
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    let (s, c) = phi.sin_cos();
    Rays {
        u1: [sin_t * c, sin_t * s, cos_t],
        u2: [-sin_t * c, -sin_t * s, cos_t], // same polar angle, azimuth + π
    }
}

/// Transverse Coulomb impulse on electron 1, and the time-weighted moment
/// needed for the first-order landing displacement, integrated along the
/// unperturbed rays between `t_from` and `t_to`. Electron 2's kick is the
/// exact negation before projection.
#[allow(clippy::too_many_arguments)]
fn accumulate_kick(
    profile: &RadialProfile,
    rays: &Rays,
    delta_t: f64,
    coulomb_scale: f64,
    t_from: f64,
    t_to: f64,
    kick: &mut [f64; 3],
    moment: &mut [f64; 3],
) {
    // geometric blocks to resolve the early near-field, Gauss-Legendre
    // inside each block
    const NODES: [(f64, f64); 8] = [
        (-0.960289856497536, 0.101228536290376),
        (-0.796666477413627, 0.222381034453374),
        (-0.525532409916329, 0.313706645877887),
        (-0.183434642495650, 0.362683783378362),
        (0.183434642495650, 0.362683783378362),
        (0.525532409916329, 0.313706645877887),
        (0.796666477413627, 0.222381034453374),
        (0.960289856497536, 0.101228536290376),
    ];
    let c = coulomb_scale * COULOMB_COUPLING;
    let mut a = t_from;
    let first_width = 2.0; // fs
    let mut width = first_width;
    while a < t_to {
        let b = (a + width).min(t_to);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in NODES {
            let t = mid + half * x;
            let r1 = profile.radius_at_time(t);
            let r2 = profile.radius_at_time(t - delta_t);
            let d = [
                r1 * rays.u1[0] - r2 * rays.u2[0],
                r1 * rays.u1[1] - r2 * rays.u2[1],
                r1 * rays.u1[2] - r2 * rays.u2[2],
            ];
            let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            let inv = 1.0 / d2.sqrt();
            let scale = c * inv * inv * inv * w * half;
            for i in 0..3 {
                kick[i] += scale * d[i];
                moment[i] += scale * d[i] * t;
            }
        }
        a = b;
        width *= 1.6;
    }
}

fn perp(v: [f64; 3], unit: [f64; 3]) -> [f64; 3] {
    let dot = v[0] * unit[0] + v[1] * unit[1] + v[2] * unit[2];
    [v[0] - dot * unit[0], v[1] - dot * unit[1], v[2] - dot * unit[2]]
}

struct PlaneTest<'a> {
    geometry: &'a ApparatusGeometry,
}

impl PlaneTest<'_> {
    /// true if (x, y) at the detection plane is inside either rectangle.
    fn rectangle(&self, x: f64, y: f64) -> Option<crate::detection::Hit> {
        let g = self.geometry;
        let x = x + g.beam_lateral_offset;
        if y.abs() > 0.5 * g.detector_width_y {
            return None;
        }
        let half = 0.5 * g.detector_width_x;
        if (x + g.detector_center_offset).abs() <= half {
            Some(crate::detection::Hit::A)
        } else if (x - g.detector_center_offset).abs() <= half {
            Some(crate::detection::Hit::B)
        } else {
            None
        }
    }

    fn aperture(&self, x: f64, y: f64) -> bool {
        let g = self.geometry;
        let x = x + g.beam_lateral_offset;
        x * x + y * y <= g.aperture_radius() * g.aperture_radius()
    }
}

/// Monte Carlo dip at one (Δt, R_tip) cell.
pub fn perturbative_dip(
    delta_t_fs: f64,
    tip_radius: f64,
    geometry: &ApparatusGeometry,
    initial_energy: f64,
    final_energy: f64,
    coulomb_scale: f64,
    samples: u64,
    rng: &mut impl Rng,
) -> Result<DipEstimate, PulseDurationError> {
    let half_angle = geometry.cone_half_angle();
    let plane_l = geometry.detection_plane_l;
    let r_needed = plane_l / half_angle.cos() * 1.02;
    let profile = RadialProfile::build(tip_radius, initial_energy, final_energy, r_needed);
    let m = ELECTRON_MASS;
    let test = PlaneTest { geometry };

    let mut n_with = 0u64;
    let mut n_without = 0u64;

    for _ in 0..samples {
        let rays = sample_rays(half_angle, rng);
        let cos_t = rays.u1[2];
        let tan_t = (1.0 - cos_t * cos_t).max(0.0).sqrt() / cos_t;

        // unperturbed landing points and times
        let ray_len_plane = plane_l / cos_t;
        let ray_len_ap = geometry.aperture_distance / cos_t;
        let t1_ap = profile.time_at_radius(ray_len_ap);
        let t1_plane = profile.time_at_radius(ray_len_plane);
        let (x1, y1) = (plane_l * tan_t * rays.u1[0] / rays.u1[2] / tan_t.max(1e-300), 0.0);
        // direct components: landing = L·tanθ·(cosφ, sinφ)
        let _ = (x1, y1);
        let land1 = [ray_len_plane * rays.u1[0], ray_len_plane * rays.u1[1]];
        let land2 = [ray_len_plane * rays.u2[0], ray_len_plane * rays.u2[1]];
        let ap1 = [ray_len_ap * rays.u1[0], ray_len_ap * rays.u1[1]];
        let ap2 = [ray_len_ap * rays.u2[0], ray_len_ap * rays.u2[1]];

        // baseline (no kick): both through aperture and opposite rectangles
        let base_ok = test.aperture(ap1[0], ap1[1])
            && test.aperture(ap2[0], ap2[1])
            && matches!(
                (test.rectangle(land1[0], land1[1]), test.rectangle(land2[0], land2[1])),
                (Some(a), Some(b)) if a != b
            );
        if base_ok {
            n_without += 1;
        }

        if coulomb_scale > 0.0 {
            // impulse along the unperturbed rays; checkpoints at the
            // aperture and the plane
            let mut kick = [0.0; 3];
            let mut moment = [0.0; 3];
            accumulate_kick(
                &profile, &rays, delta_t_fs, coulomb_scale, delta_t_fs, t1_ap, &mut kick,
                &mut moment,
            );
            let kick_ap = kick;
            let moment_ap = moment;
            accumulate_kick(
                &profile, &rays, delta_t_fs, coulomb_scale, t1_ap, t1_plane, &mut kick,
                &mut moment,
            );

            // displacement = (Δp·T − ∫F t dt)/m, transverse per ray
            let disp = |k: &[f64; 3], mo: &[f64; 3], unit: [f64; 3], t_end: f64, sign: f64| {
                let kp = perp([sign * k[0], sign * k[1], sign * k[2]], unit);
                let mp = perp([sign * mo[0], sign * mo[1], sign * mo[2]], unit);
                [(kp[0] * t_end - mp[0]) / m, (kp[1] * t_end - mp[1]) / m]
            };
            let t2_ap = t1_ap + delta_t_fs;
            let t2_plane = t1_plane + delta_t_fs;
            let d1_ap = disp(&kick_ap, &moment_ap, rays.u1, t1_ap, 1.0);
            let d2_ap = disp(&kick_ap, &moment_ap, rays.u2, t2_ap, -1.0);
            let d1_pl = disp(&kick, &moment, rays.u1, t1_plane, 1.0);
            let d2_pl = disp(&kick, &moment, rays.u2, t2_plane, -1.0);

            let kicked_ok = test.aperture(ap1[0] + d1_ap[0], ap1[1] + d1_ap[1])
                && test.aperture(ap2[0] + d2_ap[0], ap2[1] + d2_ap[1])
                && matches!(
                    (
                        test.rectangle(land1[0] + d1_pl[0], land1[1] + d1_pl[1]),
                        test.rectangle(land2[0] + d2_pl[0], land2[1] + d2_pl[1])
                    ),
                    (Some(a), Some(b)) if a != b
                );
            if kicked_ok {
                n_with += 1;
            }
        } else if base_ok {
            n_with += 1; // zero impulse: identical outcome by construction
        }
    }

    if n_without == 0 {
        return Err(PulseDurationError::EmptyCell { dt_fs: delta_t_fs, rtip_nm: tip_radius });
    }
    let ratio = n_with as f64 / n_without as f64;
    let stderr = if n_with > 0 {
        ratio * ((1.0 / n_with as f64) + (1.0 / n_without as f64)).sqrt()
    } else {
        1.0 / n_without as f64
    };
    Ok(DipEstimate { d_rel: ratio - 1.0, stderr, n_with, n_without, samples })
}

/// Grid specification for a dip map.
#[derive(Debug, Clone, Serialize)]
pub struct DipMapSpec {
    pub dt_grid_fs: Vec<f64>,
    pub rtip_grid_nm: Vec<f64>,
    pub samples_per_cell: u64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub coulomb_scale: f64,
}

impl DipMapSpec {
    pub fn validate(&self) -> Result<(), PulseDurationError> {
        let increasing = |g: &[f64]| g.windows(2).all(|w| w[1] > w[0]);
        if self.dt_grid_fs.is_empty() || self.rtip_grid_nm.is_empty() {
            return Err(PulseDurationError::InvalidSpec("empty grid".into()));
        }
        if !increasing(&self.dt_grid_fs) || !increasing(&self.rtip_grid_nm) {
            return Err(PulseDurationError::InvalidSpec("grids must be strictly increasing".into()));
        }
        if self.samples_per_cell < 1000 {
            return Err(PulseDurationError::InvalidSpec("need at least 1000 samples per cell".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContourSegment {
    pub level: f64,
    pub from: (f64, f64),
    pub to: (f64, f64),
}

/// Dip map over (Δt, R_tip) with the standard contour levels.
#[derive(Debug, Clone, Serialize)]
pub struct DipMap {
    pub dt_grid_fs: Vec<f64>,
    pub rtip_grid_nm: Vec<f64>,
    /// d_rel[i][j] at rtip_grid[i], dt_grid[j].
    pub d_rel: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub contours: Vec<ContourSegment>,
}

pub const CONTOUR_LEVELS: [f64; 5] = [-0.1, -0.3, -0.5, -0.7, -0.9];

/// Build the map cell by cell; cells are independent and parallel, each with
/// its own derived stream, so the result is reproducible bit-exactly.
pub fn build_dip_map(
    spec: &DipMapSpec,
    geometry: &ApparatusGeometry,
    seed: u64,
) -> Result<DipMap, PulseDurationError> {
    spec.validate()?;
    let n_dt = spec.dt_grid_fs.len();
    let cells: Vec<(usize, usize)> = (0..spec.rtip_grid_nm.len())
        .flat_map(|i| (0..n_dt).map(move |j| (i, j)))
        .collect();
    let estimates: Result<Vec<DipEstimate>, PulseDurationError> = cells
        .par_iter()
        .map(|&(i, j)| {
            let mut geo = geometry.clone();
            geo.tip_radius = spec.rtip_grid_nm[i];
            let mut rng = stream(seed, StreamKind::MapCell, (i * n_dt + j) as u64);
            perturbative_dip(
                spec.dt_grid_fs[j],
                spec.rtip_grid_nm[i],
                &geo,
                spec.initial_energy,
                spec.final_energy,
                spec.coulomb_scale,
                spec.samples_per_cell,
                &mut rng,
            )
        })
        .collect();
    let estimates = estimates?;

    let mut d_rel = vec![vec![0.0; n_dt]; spec.rtip_grid_nm.len()];
    let mut stderr = vec![vec![0.0; n_dt]; spec.rtip_grid_nm.len()];
    for (&(i, j), est) in cells.iter().zip(&estimates) {
        d_rel[i][j] = est.d_rel;
        stderr[i][j] = est.stderr;
    }

    let contours = extract_contours(&spec.dt_grid_fs, &spec.rtip_grid_nm, &d_rel);
    Ok(DipMap {
        dt_grid_fs: spec.dt_grid_fs.clone(),
        rtip_grid_nm: spec.rtip_grid_nm.clone(),
        d_rel,
        stderr,
        contours,
    })
}

/// Marching-squares segments at the standard levels.
fn extract_contours(dt: &[f64], rtip: &[f64], z: &[Vec<f64>]) -> Vec<ContourSegment> {
    let mut out = Vec::new();
    for &level in &CONTOUR_LEVELS {
        for i in 0..rtip.len().saturating_sub(1) {
            for j in 0..dt.len().saturating_sub(1) {
                let corners = [
                    (z[i][j], dt[j], rtip[i]),
                    (z[i][j + 1], dt[j + 1], rtip[i]),
                    (z[i + 1][j + 1], dt[j + 1], rtip[i + 1]),
                    (z[i + 1][j], dt[j], rtip[i + 1]),
                ];
                let mut crossings = Vec::new();
                for e in 0..4 {
                    let (v0, x0, y0) = corners[e];
                    let (v1, x1, y1) = corners[(e + 1) % 4];
                    if (v0 - level) * (v1 - level) < 0.0 {
                        let f = (level - v0) / (v1 - v0);
                        crossings.push((x0 + f * (x1 - x0), y0 + f * (y1 - y0)));
                    }
                }
                if crossings.len() >= 2 {
                    out.push(ContourSegment { level, from: crossings[0], to: crossings[1] });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PulseDurationBound {
    /// The measured dip places no constraint (consistent with zero).
    Unconstrained,
    /// Largest Δt (fs) whose model dip is at least as deep as measured.
    UpperBoundFs(f64),
}

/// Invert the map column at `rtip_nm` on the large-Δt branch: the largest
/// Δt still consistent with a dip at least as deep as `measured_d`.
pub fn estimate_pulse_duration(
    measured_d: f64,
    rtip_nm: f64,
    map: &DipMap,
) -> Result<PulseDurationBound, PulseDurationError> {
    if measured_d >= 0.0 {
        return Ok(PulseDurationBound::Unconstrained);
    }
    let grid = &map.rtip_grid_nm;
    if rtip_nm < grid[0] || rtip_nm > *grid.last().unwrap() {
        return Err(PulseDurationError::RadiusOutsideGrid(rtip_nm));
    }
    // linear interpolation between the two nearest radius rows
    let i = grid.partition_point(|&r| r < rtip_nm).clamp(1, grid.len() - 1);
    let f = (rtip_nm - grid[i - 1]) / (grid[i] - grid[i - 1]);
    let column: Vec<f64> = (0..map.dt_grid_fs.len())
        .map(|j| map.d_rel[i - 1][j] + f * (map.d_rel[i][j] - map.d_rel[i - 1][j]))
        .collect();

    // scan from large Δt: the first interval where the dip deepens past the
    // measurement brackets the bound
    for j in (0..column.len() - 1).rev() {
        let (d_lo, d_hi) = (column[j], column[j + 1]); // deeper at smaller Δt
        if d_lo <= measured_d {
            if d_hi <= measured_d {
                continue; // still deeper at the larger Δt; keep scanning right
            }
            let t = (measured_d - d_lo) / (d_hi - d_lo);
            let dt = map.dt_grid_fs[j] + t * (map.dt_grid_fs[j + 1] - map.dt_grid_fs[j]);
            return Ok(PulseDurationBound::UpperBoundFs(dt));
        }
    }
    if column.last().map(|&d| d <= measured_d).unwrap_or(false) {
        // even the largest Δt is consistent with the dip
        return Ok(PulseDurationBound::UpperBoundFs(*map.dt_grid_fs.last().unwrap()));
    }
    Err(PulseDurationError::OutOfRange { measured: measured_d, rtip_nm })
}
