// Scratch diagnostics (removed before release).
use nanotip_core::config::{ApparatusGeometry, RunConfig};
use nanotip_core::constants::{speed_from_energy, ELECTRON_MASS};
use nanotip_core::dynamics::*;
use nanotip_core::emission::{ElectronLabel, ElectronState, PulseEmission};
use nanotip_core::vec3::Vec3;

fn radial_emission(energy: f64) -> PulseEmission {
    let v = speed_from_energy(energy);
    PulseEmission {
        pulse_index: 0,
        electrons: vec![ElectronState {
            position: Vec3::new(0.0, 0.0, 25.0),
            velocity: Vec3::new(0.0, 0.0, v),
            emission_time: 0.0,
            label: ElectronLabel::Single,
        }],
    }
}

// referee: fixed small-step leapfrog/RK4 for the radial problem in 1-D
fn referee_time(geometry: &ApparatusGeometry) -> f64 {
    let m = ELECTRON_MASS;
    let a_coef = 99.5 * 25.0;
    let accel = |z: f64| {
        let mut a = a_coef / (m * z * z);
        if z >= geometry.retard_start() && z <= geometry.detection_plane_l {
            a -= geometry.retard_barrier / (geometry.retard_length * m);
        }
        a
    };
    let mut z = 25.0f64;
    let mut v = speed_from_energy(0.5);
    let mut t = 0.0f64;
    while z < geometry.detection_plane_l {
        let dt = (0.0005 * z / v).min(2000.0).min(
            if z < geometry.retard_start() && z + v * 3000.0 > geometry.retard_start() {
                ((geometry.retard_start() - z) / v).max(1e-7)
            } else {
                2000.0
            },
        );
        // rk4 1-D
        let k1 = (v, accel(z));
        let k2 = (v + 0.5 * dt * k1.1, accel(z + 0.5 * dt * k1.0));
        let k3 = (v + 0.5 * dt * k2.1, accel(z + 0.5 * dt * k2.0));
        let k4 = (v + dt * k3.1, accel(z + dt * k3.0));
        let z_new = z + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        let v_new = v + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
        if z_new >= geometry.detection_plane_l {
            let f = (geometry.detection_plane_l - z) / (z_new - z);
            return t + f * dt;
        }
        z = z_new;
        v = v_new;
        t += dt;
    }
    t
}

fn main() {
    let geometry = ApparatusGeometry::default();
    let field = ForceField {
        tip_energy_gain: 99.5,
        tip_radius: 25.0,
        coulomb_strength: 0.0,
        image_charge: false,
    };

    let referee = referee_time(&geometry);
    println!("referee (fine 1-D RK4):  {referee:.3}");

    // energy along the default propagate run, sampled by decade in r
    {
        let mut next_r = 50.0;
        let mut observer = |t: f64, _i: usize, p: Vec3, v: Vec3| {
            let r = p.norm();
            if r >= next_r {
                let e = 0.5 * ELECTRON_MASS * v.norm_sq()
                    + 99.5 * 25.0 / r
                    + retard_potential(p.z, &geometry);
                println!("  t={t:12.1}  r={r:12.1}  E={e:.9}");
                next_r *= 2.0;
            }
        };
        propagate_observed(
            &radial_emission(0.5),
            &field,
            &geometry,
            &StepControl::default(),
            Some(&mut observer),
        )
        .unwrap();
    }

    let control = StepControl::default();
    let r1 = propagate(&radial_emission(0.5), &field, &geometry, &control).unwrap();
    println!("propagate default:       {:.3}", r1.crossings[0].crossing_time);
    let r2 = propagate(&radial_emission(0.5), &field, &geometry, &control.halved()).unwrap();
    println!("propagate halved:        {:.3}", r2.crossings[0].crossing_time);
    let r3 = propagate(
        &radial_emission(0.5),
        &field,
        &geometry,
        &control.halved().halved().halved(),
    )
    .unwrap();
    println!("propagate 1/8:           {:.3}", r3.crossings[0].crossing_time);

    match fly_single(&radial_emission(0.5).electrons[0], &field, &geometry) {
        SingleOutcome::Crossed(c) => println!("fly_single:              {:.3}", c.crossing_time),
        SingleOutcome::Lost => println!("fly_single: LOST"),
    }

    // perturbative kick diagnostic
    use nanotip_core::pulse_duration::*;
    let profile = RadialProfile::build(25.0, 0.5, 100.0, 6.0e7);
    println!("profile rows: t_max {:.3e} r_max {:.3e}", profile.max_time(), profile.max_radius());
    println!("r(10 fs)  = {:.3}", profile.radius_at_time(10.0));
    println!("r(100 fs) = {:.3}", profile.radius_at_time(100.0));
    println!("t(L)      = {:.4e}", profile.time_at_radius(5.0e7));

    // perturbative dip versus separation
    let mut rng = nanotip_core::rng::stream(8, nanotip_core::rng::StreamKind::MapCell, 3);
    for dt in [0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0, 30.0] {
        let est =
            perturbative_dip(dt, 25.0, &geometry, 0.5, 100.0, 1.0, 20000, &mut rng).unwrap();
        println!("pert dip({dt:>5} fs): D = {:+.4} ± {:.4}", est.d_rel, est.stderr);
    }

    // full-dynamics dip at fixed pair delay (CRN k=1 vs k=0)
    use nanotip_core::emission::{emit_pair, pair_rng};
    let mut cfg = RunConfig::default();
    cfg.pulse_window = 10.0;
    let control = StepControl::default();
    for fixed_dt in [0.0, 2.0, 5.0, 10.0] {
        let mut coinc = [0u64; 2];
        let n_pairs = 1500u64;
        for i in 0..n_pairs {
            let mut rng = pair_rng(77, i);
            let mut emission = emit_pair(&cfg, i, &mut rng);
            emission.electrons[1].emission_time = fixed_dt;
            for (ki, k) in [0.0, 1.0].into_iter().enumerate() {
                let f = ForceField { coulomb_strength: k, ..field.clone() };
                let res = propagate(&emission, &f, &geometry, &control).unwrap();
                let hits: Vec<_> = res
                    .crossings
                    .iter()
                    .map(|c| nanotip_core::detection::classify_hit(c, &geometry))
                    .collect();
                use nanotip_core::detection::Hit;
                let a = hits.iter().filter(|h| **h == Hit::A).count();
                let b = hits.iter().filter(|h| **h == Hit::B).count();
                if a >= 1 && b >= 1 {
                    coinc[ki] += 1;
                }
            }
        }
        println!(
            "full dip(δt = {fixed_dt:>4} fs): q0 = {:.4}, q1 = {:.4}, D = {:+.4}",
            coinc[0] as f64 / n_pairs as f64,
            coinc[1] as f64 / n_pairs as f64,
            coinc[1] as f64 / coinc[0] as f64 - 1.0
        );
    }

    // full-dynamics dip with the uniform 10-fs window
    let t0 = std::time::Instant::now();
    let mut coinc = [0u64; 2];
    let n_pairs = 3000u64;
    for i in 0..n_pairs {
        let mut rng = pair_rng(78, i);
        let emission = emit_pair(&cfg, i, &mut rng);
        for (ki, k) in [0.0, 1.0].into_iter().enumerate() {
            let f = ForceField { coulomb_strength: k, ..field.clone() };
            let res = propagate(&emission, &f, &geometry, &control).unwrap();
            let hits: Vec<_> = res
                .crossings
                .iter()
                .map(|c| nanotip_core::detection::classify_hit(c, &geometry))
                .collect();
            use nanotip_core::detection::Hit;
            let a = hits.iter().filter(|h| **h == Hit::A).count();
            let b = hits.iter().filter(|h| **h == Hit::B).count();
            if a >= 1 && b >= 1 {
                coinc[ki] += 1;
            }
        }
    }
    println!(
        "full dip(Δt_e = 10 fs uniform): q0 = {:.4}, q1 = {:.4}, D = {:+.4}  [{} pairs in {:?}]",
        coinc[0] as f64 / n_pairs as f64,
        coinc[1] as f64 / n_pairs as f64,
        coinc[1] as f64 / coinc[0] as f64 - 1.0,
        n_pairs,
        t0.elapsed()
    );
}
