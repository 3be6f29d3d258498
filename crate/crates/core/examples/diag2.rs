// Geometry calibration study (removed before release).
use nanotip_core::config::{ApparatusGeometry, RunConfig};
use nanotip_core::dynamics::*;
use nanotip_core::emission::{emit_pair, pair_rng, ElectronLabel};

#[derive(Clone, Copy, Default)]
struct Landing {
    x: f64,
    y: f64,
    ok: bool, // crossed plane and passed aperture
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

    let ks = [0.0, 0.03, 0.1, 0.3, 1.0, 3.0];
    let n_pairs = 2500u64;

    // landings[ki][pair] = [leading, trailing]
    let t0 = std::time::Instant::now();
    let mut landings: Vec<Vec<[Landing; 2]>> = vec![vec![[Landing::default(); 2]; n_pairs as usize]; ks.len()];
    for i in 0..n_pairs {
        let mut rng = pair_rng(555, i);
        let emission = emit_pair(&cfg, i, &mut rng);
        for (ki, &k) in ks.iter().enumerate() {
            let field = ForceField { coulomb_strength: k, ..base_field.clone() };
            let res = propagate(&emission, &field, &geometry, &control).unwrap();
            for c in &res.crossings {
                let idx = match c.label {
                    ElectronLabel::Leading => 0,
                    _ => 1,
                };
                landings[ki][i as usize][idx] =
                    Landing { x: c.position.x, y: c.position.y, ok: c.within_aperture };
            }
        }
    }
    println!("propagation done in {:?}", t0.elapsed());

    // kick displacement percentiles at k = 1 (both electrons pooled)
    let mut kicks: Vec<f64> = Vec::new();
    for i in 0..n_pairs as usize {
        for e in 0..2 {
            let a = landings[0][i][e];
            let b = landings[4][i][e];
            if a.ok && b.ok {
                kicks.push(((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt());
            }
        }
    }
    kicks.sort_unstable_by(f64::total_cmp);
    let pct = |p: f64| kicks[((kicks.len() - 1) as f64 * p) as usize];
    println!(
        "kick displacement at k=1 (nm): p10 {:.3e}  p50 {:.3e}  p90 {:.3e}  p99 {:.3e}",
        pct(0.10),
        pct(0.50),
        pct(0.90),
        pct(0.99)
    );

    // geometry scan: (width, offset) in nm
    let candidates: [(f64, f64); 10] = [
        (1.0e7, 0.75e7), // spec default (1 cm at 0.75 cm)
        (5.0e6, 3.0e6),
        (3.0e6, 2.0e6),
        (2.0e6, 1.5e6),
        (1.5e6, 1.2e6),
        (1.2e6, 1.0e6),
        (1.0e6, 0.8e6),
        (8.0e5, 7.0e5),
        (5.0e5, 5.0e5),
        (3.0e5, 3.0e5),
    ];
    println!("\n  width   offset |    eps_A    q(k=0) |  D(0.03)  D(0.1)  D(0.3)  D(1)    D(3)");
    for (w, off) in candidates {
        let classify = |l: &Landing| -> Option<u8> {
            if !l.ok {
                return None;
            }
            if l.y.abs() > 0.5 * w {
                return None;
            }
            if (l.x + off).abs() <= 0.5 * w {
                Some(0)
            } else if (l.x - off).abs() <= 0.5 * w {
                Some(1)
            } else {
                None
            }
        };
        let mut hits_a = 0u64;
        let mut electrons = 0u64;
        let mut coinc = [0u64; 6];
        for (ki, _) in ks.iter().enumerate() {
            for i in 0..n_pairs as usize {
                let h0 = classify(&landings[ki][i][0]);
                let h1 = classify(&landings[ki][i][1]);
                if ki == 0 {
                    electrons += 2;
                    hits_a += (h0 == Some(0)) as u64 + (h1 == Some(0)) as u64;
                }
                if matches!((h0, h1), (Some(a), Some(b)) if a != b) {
                    coinc[ki] += 1;
                }
            }
        }
        let q0 = coinc[0] as f64 / n_pairs as f64;
        print!(
            "{:8.1e} {:8.1e} | {:8.4} {:9.4} |",
            w,
            off,
            hits_a as f64 / electrons as f64,
            q0
        );
        for ki in 1..6 {
            print!(" {:+7.3}", coinc[ki] as f64 / coinc[0] as f64 - 1.0);
        }
        println!();
    }
}
