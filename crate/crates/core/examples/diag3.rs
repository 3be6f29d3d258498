// Geometry calibration round 2 (removed before release).
use nanotip_core::config::{ApparatusGeometry, RunConfig};
use nanotip_core::dynamics::*;
use nanotip_core::emission::{emit_pair, pair_rng, ElectronLabel};
use nanotip_core::pulse_duration::perturbative_dip;
use nanotip_core::rng::{stream, StreamKind};
use rayon::prelude::*;

#[derive(Clone, Copy, Default)]
struct Landing {
    x: f64,
    y: f64,
    ok: bool,
}

fn classify(l: &Landing, w: f64, off: f64) -> Option<u8> {
    if !l.ok || l.y.abs() > 0.5 * w {
        return None;
    }
    if (l.x + off).abs() <= 0.5 * w {
        Some(0)
    } else if (l.x - off).abs() <= 0.5 * w {
        Some(1)
    } else {
        None
    }
}

fn main() {
    let geometry = ApparatusGeometry::default();
    let mut cfg = RunConfig::default();
    cfg.pulse_window = 10.0;
    let control = StepControl::default();
    let base_field = ForceField {
        tip_energy_gain: 99.5,
        tip_radius: 25.0,
        coulomb_strength: 0.0,
        image_charge: false,
    };

    let ks = [0.0, 0.02, 0.05, 0.1, 0.3, 1.0, 3.0];
    let n_pairs = 30_000u64;

    let t0 = std::time::Instant::now();
    let all: Vec<Vec<[Landing; 2]>> = (0..n_pairs)
        .into_par_iter()
        .map(|i| {
            let mut rng = pair_rng(555, i);
            let emission = emit_pair(&cfg, i, &mut rng);
            ks.iter()
                .map(|&k| {
                    let field = ForceField { coulomb_strength: k, ..base_field.clone() };
                    let res = propagate(&emission, &field, &geometry, &control).unwrap();
                    let mut out = [Landing::default(); 2];
                    for c in &res.crossings {
                        let idx = match c.label {
                            ElectronLabel::Leading => 0,
                            _ => 1,
                        };
                        out[idx] = Landing { x: c.position.x, y: c.position.y, ok: c.within_aperture };
                    }
                    out
                })
                .collect()
        })
        .collect();
    println!("propagation done in {:?}", t0.elapsed());

    let candidates: [(f64, f64); 7] = [
        (1.0e7, 0.75e7),
        (6.0e6, 4.0e6),
        (5.0e6, 3.5e6),
        (5.0e6, 3.0e6),
        (4.0e6, 3.0e6),
        (4.0e6, 2.5e6),
        (3.0e6, 2.5e6),
    ];
    println!("\nfull model, uniform 10 fs window, n = {n_pairs}:");
    println!("  width  offset |  eps_A   q(k=0) | D(0.02) D(0.05) D(0.1) D(0.3)  D(1)    D(3)");
    for (w, off) in candidates {
        let mut hits_a = 0u64;
        let mut coinc = [0u64; 7];
        for pair in &all {
            for (ki, lnd) in pair.iter().enumerate() {
                let h0 = classify(&lnd[0], w, off);
                let h1 = classify(&lnd[1], w, off);
                if ki == 0 {
                    hits_a += (h0 == Some(0)) as u64 + (h1 == Some(0)) as u64;
                }
                if matches!((h0, h1), (Some(a), Some(b)) if a != b) {
                    coinc[ki] += 1;
                }
            }
        }
        print!(
            "{:7.1e} {:7.1e} | {:7.4} {:8.5} |",
            w,
            off,
            hits_a as f64 / (2 * n_pairs) as f64,
            coinc[0] as f64 / n_pairs as f64
        );
        for ki in 1..7 {
            print!(" {:+7.4}", coinc[ki] as f64 / coinc[0] as f64 - 1.0);
        }
        println!();
    }

    // perturbative dips per candidate geometry
    println!("\nperturbative model (3e5 samples): D(Δt) at R_tip = 25 nm");
    println!("  width  offset |   Δt=1     Δt=3    Δt=10    Δt=30   Δt=100");
    for (w, off) in candidates {
        let mut geo = geometry.clone();
        geo.detector_width_x = w;
        geo.detector_width_y = w;
        geo.detector_center_offset = off;
        print!("{:7.1e} {:7.1e} |", w, off);
        for dt in [1.0, 3.0, 10.0, 30.0, 100.0] {
            let mut rng = stream(777, StreamKind::MapCell, dt as u64);
            let est = perturbative_dip(dt, 25.0, &geo, 0.5, 100.0, 1.0, 300_000, &mut rng).unwrap();
            print!(" {:+8.4}", est.d_rel);
        }
        println!();
    }

    // same at R_tip = 75 for the map-range check, chosen geometry
    println!("\nperturbative at R_tip = 75 nm:");
    for (w, off) in [(5.0e6, 3.0e6), (4.0e6, 2.5e6)] {
        let mut geo = geometry.clone();
        geo.detector_width_x = w;
        geo.detector_width_y = w;
        geo.detector_center_offset = off;
        print!("{:7.1e} {:7.1e} |", w, off);
        for dt in [1.0, 3.0, 10.0, 30.0, 100.0] {
            let mut rng = stream(778, StreamKind::MapCell, dt as u64);
            let est = perturbative_dip(dt, 75.0, &geo, 0.5, 100.0, 1.0, 300_000, &mut rng).unwrap();
            print!(" {:+8.4}", est.d_rel);
        }
        println!();
    }

    // full model at fixed delay 10 fs (for the perturbative cross-check)
    println!("\nfull model, fixed 10 fs delay, 20000 pairs:");
    let fixed: Vec<[(Landing, Landing); 2]> = (0..20_000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = pair_rng(556, i);
            let mut emission = emit_pair(&cfg, i, &mut rng);
            emission.electrons[1].emission_time = 10.0;
            let mut out = [(Landing::default(), Landing::default()); 2];
            for (ki, k) in [0.0, 1.0].into_iter().enumerate() {
                let field = ForceField { coulomb_strength: k, ..base_field.clone() };
                let res = propagate(&emission, &field, &geometry, &control).unwrap();
                for c in &res.crossings {
                    let idx = match c.label {
                        ElectronLabel::Leading => 0,
                        _ => 1,
                    };
                    let l = Landing { x: c.position.x, y: c.position.y, ok: c.within_aperture };
                    if idx == 0 {
                        out[ki].0 = l;
                    } else {
                        out[ki].1 = l;
                    }
                }
            }
            out
        })
        .collect();
    for (w, off) in candidates {
        let mut coinc = [0u64; 2];
        for pair in &fixed {
            for ki in 0..2 {
                let h0 = classify(&pair[ki].0, w, off);
                let h1 = classify(&pair[ki].1, w, off);
                if matches!((h0, h1), (Some(a), Some(b)) if a != b) {
                    coinc[ki] += 1;
                }
            }
        }
        println!(
            "{:7.1e} {:7.1e} | q0 {:8.5}  D(fixed 10fs, k=1) = {:+.4}",
            w,
            off,
            coinc[0] as f64 / 20_000.0,
            coinc[1] as f64 / coinc[0].max(1) as f64 - 1.0
        );
    }
}
