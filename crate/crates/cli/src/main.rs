//! Command-line driver: ties JSON run configurations to the simulation and
//! analysis modules and writes machine-readable outputs (CSV for arrays,
//! JSON for scalars and metadata). Every output echoes the fully resolved
//! configuration, so runs are self-describing; identical configuration and
//! seed produce byte-identical files.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nanotip_core::config::RunConfig;
use nanotip_core::degeneracy::{
    build_regime_map, coherence_time, g2_pulsed, hbt_dip, transverse_coherence, ClassicalSource,
    DegeneracyParams,
};
use nanotip_core::detection::{
    build_histogram, calibrate_zero, peak_metrics, run_tac, CoincidenceHistogram, DetectionEvent,
    Detector, JitterModel, MetricsOptions,
};
use nanotip_core::pipeline::{
    predicted_window_integrals, reproduce_fig2, run_pairs, run_train, windowed_delay_moments,
};
use nanotip_core::pulse_duration::{build_dip_map, estimate_pulse_duration, DipMapSpec};
use nanotip_core::statistics::{expected_coincidences, CountingModel};
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "nanotip", about = "Femtosecond two-electron coincidence simulator", version)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master RNG seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PhysicsOverrides {
    /// Coulomb strength k (1 = physical).
    #[arg(long)]
    k: Option<f64>,
    /// Pulse window Δt_e in fs.
    #[arg(long = "dt-e-fs")]
    dt_e_fs: Option<f64>,
    /// Tip radius in nm.
    #[arg(long = "rtip-nm")]
    rtip_nm: Option<f64>,
    /// Stop-channel delay in ns.
    #[arg(long = "stop-delay-ns")]
    stop_delay_ns: Option<f64>,
}

impl PhysicsOverrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(k) = self.k {
            cfg.coulomb_strength = k;
        }
        if let Some(dt) = self.dt_e_fs {
            cfg.pulse_window = dt;
        }
        if let Some(r) = self.rtip_nm {
            cfg.geometry.tip_radius = r;
        }
        if let Some(s) = self.stop_delay_ns {
            cfg.histogram.stop_delay_ns = s;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pulse-train simulation: emission, propagation, detection, histogram.
    SimulateTrain {
        /// Simulated duration in seconds (ignored when --n-pulses is given).
        #[arg(long = "duration-s", default_value_t = 70.0)]
        duration_s: f64,
        /// Number of laser pulses (overrides --duration-s).
        #[arg(long = "n-pulses")]
        n_pulses: Option<u64>,
        /// Write the detection-event list (events.csv).
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        events: bool,
        #[command(flatten)]
        physics: PhysicsOverrides,
    },
    /// Dedicated two-electron (pair) simulation at one Coulomb strength.
    SimulatePairs {
        #[arg(long = "n-pairs", default_value_t = 100_000)]
        n_pairs: u64,
        /// Dump the first N pair trajectories (decimated 1:100) to CSV.
        #[arg(long = "dump-trajectories", default_value_t = 0)]
        dump_trajectories: u64,
        #[command(flatten)]
        physics: PhysicsOverrides,
    },
    /// Build a coincidence histogram from an events CSV.
    Histogram {
        #[arg(long)]
        events: PathBuf,
        #[command(flatten)]
        physics: PhysicsOverrides,
    },
    /// Calibrate and extract peak metrics from a histogram CSV.
    Analyze {
        #[arg(long)]
        histogram: PathBuf,
    },
    /// Analytic coincidence table; optionally compare a histogram file.
    StatsModel {
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long = "eps-a")]
        eps_a: f64,
        #[arg(long = "eps-b")]
        eps_b: f64,
        #[arg(long = "duration-s", default_value_t = 900.0)]
        duration_s: f64,
        /// Histogram CSV to compare against the model.
        #[arg(long)]
        histogram: Option<PathBuf>,
    },
    /// Perturbative dip map over (Δt, R_tip).
    DipMap {
        #[arg(long = "dt-min-fs", default_value_t = 1.0)]
        dt_min_fs: f64,
        #[arg(long = "dt-max-fs", default_value_t = 300.0)]
        dt_max_fs: f64,
        #[arg(long = "dt-steps", default_value_t = 10)]
        dt_steps: usize,
        #[arg(long = "rtip-min-nm", default_value_t = 15.0)]
        rtip_min_nm: f64,
        #[arg(long = "rtip-max-nm", default_value_t = 100.0)]
        rtip_max_nm: f64,
        #[arg(long = "rtip-steps", default_value_t = 6)]
        rtip_steps: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        /// Invert the map at this measured dip (optional).
        #[arg(long = "measured-d")]
        measured_d: Option<f64>,
        #[command(flatten)]
        physics: PhysicsOverrides,
    },
    /// Quantum-degeneracy estimates and the classical/quantum regime map.
    DegeneracyMap {
        /// Electron energy spread in eV.
        #[arg(long = "de-ev", default_value_t = 0.5)]
        de_ev: f64,
        #[arg(long = "coherence-multiplier", default_value_t = 1.0)]
        coherence_multiplier: f64,
        #[command(flatten)]
        physics: PhysicsOverrides,
    },
    /// Combined spectrum: interacting zero-delay peak, analytic neighbors.
    ReproduceFig2 {
        #[arg(long = "n-pairs", default_value_t = 200_000)]
        n_pairs: u64,
        #[command(flatten)]
        physics: PhysicsOverrides,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("failed to configure worker pool")?;
    }

    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }

    fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;

    match cli.command {
        Command::SimulateTrain { duration_s, n_pulses, events, physics } => {
            physics.apply(&mut cfg);
            if physics.k.is_none() {
                cfg.coulomb_strength = 0.0; // train mode default: interactions off
            }
            cfg.validate()?;
            let pulses = n_pulses
                .unwrap_or_else(|| (duration_s / (cfg.repetition_time * 1.0e-9)).round() as u64);
            simulate_train(&cfg, pulses, events, &cli.out)
        }
        Command::SimulatePairs { n_pairs, dump_trajectories, physics } => {
            let mut cfg = cfg;
            cfg.coulomb_strength = 1.0;
            physics.apply(&mut cfg);
            cfg.validate()?;
            simulate_pairs(&cfg, n_pairs, dump_trajectories, &cli.out)
        }
        Command::Histogram { events, physics } => {
            physics.apply(&mut cfg);
            cfg.validate()?;
            let list = read_events_csv(&events)?;
            let (hist, stats) = run_tac(&list, &cfg.histogram)?;
            write_histogram_csv(&cli.out.join("histogram.csv"), &hist)?;
            let analysis = analyze_histogram(&hist, cfg.repetition_time_fs());
            write_json(
                &cli.out.join("histogram_summary.json"),
                &json!({ "config": cfg, "tac": stats, "analysis": analysis }),
            )
        }
        Command::Analyze { histogram } => {
            let hist = read_histogram_csv(&histogram)?;
            let analysis = analyze_histogram(&hist, cfg.repetition_time_fs());
            write_json(&cli.out.join("analysis.json"), &json!({ "config": cfg, "analysis": analysis }))
        }
        Command::StatsModel { lambda, eps_a, eps_b, duration_s, histogram } => {
            let lambda = lambda.unwrap_or(cfg.lambda_total);
            let n_pulses = (duration_s / (cfg.repetition_time * 1.0e-9)).round() as u64;
            stats_model(&cfg, lambda, eps_a, eps_b, n_pulses, histogram.as_deref(), &cli.out)
        }
        Command::DipMap {
            dt_min_fs,
            dt_max_fs,
            dt_steps,
            rtip_min_nm,
            rtip_max_nm,
            rtip_steps,
            samples,
            measured_d,
            physics,
        } => {
            let mut cfg = cfg;
            cfg.coulomb_strength = 1.0;
            physics.apply(&mut cfg);
            cfg.validate()?;
            let spec = DipMapSpec {
                dt_grid_fs: log_grid(dt_min_fs, dt_max_fs, dt_steps),
                rtip_grid_nm: lin_grid(rtip_min_nm, rtip_max_nm, rtip_steps),
                samples_per_cell: samples,
                initial_energy: cfg.initial_energy,
                final_energy: cfg.final_energy,
                coulomb_scale: cfg.coulomb_strength,
            };
            dip_map(&cfg, &spec, measured_d, &cli.out)
        }
        Command::DegeneracyMap { de_ev, coherence_multiplier, physics } => {
            physics.apply(&mut cfg);
            cfg.validate()?;
            degeneracy_map(&cfg, de_ev, coherence_multiplier, &cli.out)
        }
        Command::ReproduceFig2 { n_pairs, physics } => {
            let mut cfg = cfg;
            cfg.coulomb_strength = 1.0;
            cfg.pulse_window = 10.0;
            physics.apply(&mut cfg);
            cfg.validate()?;
            fig2(&cfg, n_pairs, &cli.out)
        }
    }
}

fn log_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..steps).map(|i| (a + (b - a) * i as f64 / (steps - 1) as f64).exp()).collect()
}

fn lin_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    if steps <= 1 {
        return vec![lo];
    }
    (0..steps).map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64).collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_events_csv(path: &Path, events: &[DetectionEvent]) -> Result<()> {
    let mut text = String::with_capacity(events.len() * 24 + 32);
    text.push_str("detector,time_fs\n");
    for e in events {
        let d = match e.detector {
            Detector::A => 'A',
            Detector::B => 'B',
        };
        text.push(d);
        text.push(',');
        text.push_str(&format!("{:?}\n", e.time_fs));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn read_events_csv(path: &Path) -> Result<Vec<DetectionEvent>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let (d, t) = line.split_once(',').with_context(|| format!("bad line {}", i + 1))?;
        let detector = match d {
            "A" => Detector::A,
            "B" => Detector::B,
            other => bail!("unknown detector {other:?} on line {}", i + 1),
        };
        events.push(DetectionEvent { detector, time_fs: t.trim().parse()? });
    }
    Ok(events)
}

fn write_histogram_csv(path: &Path, hist: &CoincidenceHistogram) -> Result<()> {
    let mut text = String::with_capacity(hist.counts.len() * 18 + 160);
    text.push_str(&format!(
        "# bin_width_ps={} n_bins={} window_ns={} stop_delay_ns={}\n",
        hist.bin_width_ps, hist.n_bins, hist.window_ns, hist.stop_delay_ns
    ));
    text.push_str("bin,delay_ns,counts\n");
    for (i, &c) in hist.counts.iter().enumerate() {
        text.push_str(&format!("{},{:.4},{}\n", i, hist.delay_ns_at(i as f64 + 0.5), c));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn read_histogram_csv(path: &Path) -> Result<CoincidenceHistogram> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty histogram file")?;
    let mut meta = std::collections::BTreeMap::new();
    for part in header.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = part.split_once('=') {
            meta.insert(k.to_string(), v.parse::<f64>()?);
        }
    }
    let get = |k: &str| meta.get(k).copied().with_context(|| format!("missing {k} in header"));
    let n_bins = get("n_bins")? as usize;
    let mut hist = CoincidenceHistogram {
        bin_width_ps: get("bin_width_ps")?,
        n_bins,
        window_ns: get("window_ns")?,
        stop_delay_ns: get("stop_delay_ns")?,
        counts: vec![0; n_bins],
    };
    for line in lines.skip(1) {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let bin: usize = parts.next().context("missing bin")?.parse()?;
        let _delay = parts.next();
        let counts: u64 = parts.next().context("missing counts")?.parse()?;
        if bin < n_bins {
            hist.counts[bin] = counts;
        }
    }
    Ok(hist)
}

/// Calibration plus peak metrics as a JSON value; calibration failures are
/// reported in-band (short runs may not have resolvable peaks).
fn analyze_histogram(hist: &CoincidenceHistogram, tau0_fs: f64) -> serde_json::Value {
    match calibrate_zero(hist, tau0_fs) {
        Ok(cal) => {
            let metrics = peak_metrics(hist, &cal, tau0_fs, MetricsOptions::default());
            match metrics {
                Ok(m) => json!({ "calibration": cal, "metrics": m }),
                Err(e) => json!({ "calibration": cal, "metrics_error": e.to_string() }),
            }
        }
        Err(e) => json!({ "calibration_error": e.to_string() }),
    }
}

fn simulate_train(cfg: &RunConfig, n_pulses: u64, write_events: bool, out: &Path) -> Result<()> {
    let result = run_train(cfg, n_pulses)?;
    if write_events {
        write_events_csv(&out.join("events.csv"), &result.events)?;
    }
    let (hist, tac) = run_tac(&result.events, &cfg.histogram)?;
    write_histogram_csv(&out.join("histogram.csv"), &hist)?;
    let analysis = analyze_histogram(&hist, cfg.repetition_time_fs());

    // slot-level comparison against the counting model at the measured
    // efficiencies
    let slot_table = if result.emitted > 0 && result.eps_a_hat > 0.0 && result.eps_b_hat > 0.0 {
        let model = CountingModel::new(
            cfg.lambda_cone(),
            result.eps_a_hat,
            result.eps_b_hat,
            n_pulses,
        )?;
        let jitter = JitterModel::from_components(&cfg.jitter).expect("validated");
        let live = tac.live_fraction(result.duration_fs);
        let predictions =
            predicted_window_integrals(&model, &cfg.histogram, cfg.repetition_time_fs(), &jitter);
        Some(
            predictions
                .iter()
                .map(|&(m, ideal)| json!({ "m": m, "predicted": ideal * live }))
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };

    write_json(
        &out.join("summary.json"),
        &json!({
            "config": cfg,
            "n_pulses": n_pulses,
            "train": {
                "emitted": result.emitted,
                "hits_a": result.hits_a,
                "hits_b": result.hits_b,
                "misses": result.misses,
                "lost": result.lost,
                "eps_a_hat": result.eps_a_hat,
                "eps_b_hat": result.eps_b_hat,
                "events": result.events.len(),
            },
            "tac": tac,
            "live_fraction": tac.live_fraction(result.duration_fs),
            "slot_predictions": slot_table,
            "analysis": analysis,
        }),
    )
}

fn simulate_pairs(cfg: &RunConfig, n_pairs: u64, dump: u64, out: &Path) -> Result<()> {
    let result = run_pairs(cfg, n_pairs, cfg.coulomb_strength)?;

    // delay histogram of the zero peak (recorded delays, stop delay added)
    let mut hist = CoincidenceHistogram::empty(&cfg.histogram);
    for &d in &result.delays_fs {
        hist.record(d + hist.stop_delay_fs());
    }
    write_histogram_csv(&out.join("pair_delays.csv"), &hist)?;

    if dump > 0 {
        dump_trajectories(cfg, dump, &out.join("trajectories.csv"))?;
    }

    let half_window = 0.5 * cfg.repetition_time_fs();
    let (mean, sigma, n_windowed) = windowed_delay_moments(&result.delays_fs, half_window);
    write_json(
        &out.join("pairs_summary.json"),
        &json!({
            "config": cfg,
            "pairs": {
                "n_pairs": result.n_pairs,
                "coulomb_strength": result.coulomb_strength,
                "coincidences": result.coincidences,
                "q_ab": result.q_ab,
                "electron_hits_a": result.electron_hits_a,
                "electron_hits_b": result.electron_hits_b,
                "lost": result.lost,
                "delay_mean_ns": mean * 1.0e-6,
                "delay_sigma_ns": sigma * 1.0e-6,
                "delays_in_window": n_windowed,
            },
        }),
    )
}

fn dump_trajectories(cfg: &RunConfig, n: u64, path: &Path) -> Result<()> {
    use nanotip_core::dynamics::{propagate_observed, ForceField, StepControl};
    use nanotip_core::emission::{emit_pair, pair_rng};
    let field = ForceField::from_config(cfg);
    let mut text = String::from("pair,electron,t_fs,x_nm,y_nm,z_nm,vx,vy,vz\n");
    for i in 0..n {
        let mut rng = pair_rng(cfg.rng_seed, i);
        let emission = emit_pair(cfg, i, &mut rng);
        let mut step = 0u64;
        let mut observer = |t: f64, e: usize, p: nanotip_core::Vec3, v: nanotip_core::Vec3| {
            step += 1;
            if step % 100 == 0 {
                text.push_str(&format!(
                    "{i},{e},{t:.3},{:.3},{:.3},{:.3},{:.6},{:.6},{:.6}\n",
                    p.x, p.y, p.z, v.x, v.y, v.z
                ));
            }
        };
        propagate_observed(&emission, &field, &cfg.geometry, &StepControl::default(), Some(&mut observer))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn stats_model(
    cfg: &RunConfig,
    lambda: f64,
    eps_a: f64,
    eps_b: f64,
    n_pulses: u64,
    histogram: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let model = CountingModel::new(lambda, eps_a, eps_b, n_pulses)?;
    let jitter = JitterModel::from_components(&cfg.jitter).expect("validated");
    let predictions =
        predicted_window_integrals(&model, &cfg.histogram, cfg.repetition_time_fs(), &jitter);

    let measured: Option<Vec<(i64, f64)>> = match histogram {
        Some(path) => {
            let hist = read_histogram_csv(path)?;
            let cal = calibrate_zero(&hist, cfg.repetition_time_fs())?;
            let metrics = peak_metrics(&hist, &cal, cfg.repetition_time_fs(), MetricsOptions::default())?;
            Some(metrics.peaks.iter().map(|&(m, _, n)| (m, n)).collect())
        }
        None => None,
    };

    let mut text = String::from("m,n_analytic,n_slot_predicted,measured,ratio,z_score\n");
    for &(m, slot_pred) in &predictions {
        let ideal = expected_coincidences(&model, m.unsigned_abs() as usize);
        let (meas, ratio, z) = match &measured {
            Some(list) => match list.iter().find(|(mm, _)| *mm == m) {
                Some(&(_, n)) => {
                    let z = (n - slot_pred) / slot_pred.max(1.0).sqrt();
                    (format!("{n}"), format!("{:.6}", n / slot_pred), format!("{z:.3}"))
                }
                None => (String::new(), String::new(), String::new()),
            },
            None => (String::new(), String::new(), String::new()),
        };
        text.push_str(&format!("{m},{ideal:.4},{slot_pred:.4},{meas},{ratio},{z}\n"));
    }
    fs::write(out.join("stats_model.csv"), text)?;
    eprintln!("wrote {}", out.join("stats_model.csv").display());

    write_json(
        &out.join("stats_model.json"),
        &json!({
            "config": cfg,
            "model": model,
            "ratio_leading_order": nanotip_core::statistics::peak_ratio_leading(lambda),
            "ratio_exact": nanotip_core::statistics::peak_ratio_exact(lambda, eps_b),
        }),
    )
}

fn dip_map(
    cfg: &RunConfig,
    spec: &DipMapSpec,
    measured_d: Option<f64>,
    out: &Path,
) -> Result<()> {
    let map = build_dip_map(spec, &cfg.geometry, cfg.rng_seed)?;

    let mut text = String::from("dt_fs,rtip_nm,d_rel,stderr\n");
    for (i, &r) in map.rtip_grid_nm.iter().enumerate() {
        for (j, &dt) in map.dt_grid_fs.iter().enumerate() {
            text.push_str(&format!("{dt:.6},{r:.3},{:.6},{:.6}\n", map.d_rel[i][j], map.stderr[i][j]));
        }
    }
    fs::write(out.join("dip_map.csv"), text)?;
    eprintln!("wrote {}", out.join("dip_map.csv").display());

    let inversion = measured_d.map(|d| {
        estimate_pulse_duration(d, cfg.geometry.tip_radius, &map)
            .map(|b| json!({ "measured_d": d, "bound": b }))
            .unwrap_or_else(|e| json!({ "measured_d": d, "error": e.to_string() }))
    });

    write_json(
        &out.join("dip_map.json"),
        &json!({
            "config": cfg,
            "spec": spec,
            "contours": map.contours,
            "pulse_duration": inversion,
        }),
    )
}

fn degeneracy_map(cfg: &RunConfig, de_ev: f64, coherence_multiplier: f64, out: &Path) -> Result<()> {
    let params = DegeneracyParams {
        energy_spread: de_ev,
        pulse_window: cfg.pulse_window,
        tip_radius: cfg.geometry.tip_radius,
        electron_energy: cfg.final_energy,
        coherence_multiplier,
    };
    params.validate().map_err(|e| anyhow::anyhow!(e.to_string()))?;
    let tc = transverse_coherence(&params, &cfg.geometry);
    let tau_c = coherence_multiplier * coherence_time(de_ev);
    let point = json!({
        "config": cfg,
        "params": params,
        "coherence_time_fs": tau_c,
        "transverse": tc,
        "d_hbt": hbt_dip(&params, &cfg.geometry),
        "g2_pulsed": g2_pulsed(tau_c, cfg.pulse_window),
        "reference_experiments": nanotip_core::degeneracy::REFERENCE_EXPERIMENTS,
    });
    write_json(&out.join("degeneracy_point.json"), &point)?;

    let dt_grid = log_grid(1.0, 1.0e4, 25);
    let coh_grid = log_grid(0.1, 1.0e3, 21);
    let map = build_regime_map(&dt_grid, &coh_grid, &ClassicalSource::Proxy);
    let mut text = String::from("dt_fs,coherence_fs,quantum,classical,combined\n");
    for (i, &tc) in map.coherence_grid_fs.iter().enumerate() {
        for (j, &dt) in map.dt_grid_fs.iter().enumerate() {
            text.push_str(&format!(
                "{dt:.4},{tc:.4},{:.6},{:.6},{:.6}\n",
                map.quantum[i][j], map.classical[i][j], map.combined[i][j]
            ));
        }
    }
    fs::write(out.join("regime_map.csv"), text)?;
    eprintln!("wrote {}", out.join("regime_map.csv").display());
    Ok(())
}

fn fig2(cfg: &RunConfig, n_pairs: u64, out: &Path) -> Result<()> {
    let n_pulses_norm = (900.0 / (cfg.repetition_time * 1.0e-9)).round() as u64;
    let result = reproduce_fig2(cfg, n_pairs, cfg.coulomb_strength, n_pulses_norm)?;

    // merged model spectrum: neighbors rendered from the non-interacting
    // pair delays (same intrinsic shape as independent singles), the zero
    // peak from the interacting run, each scaled to the analytic integrals
    let run_k = run_pairs(cfg, n_pairs, cfg.coulomb_strength)?;
    let run_0 = run_pairs(cfg, n_pairs, 0.0)?;
    let hist_cfg = &cfg.histogram;
    let mut spectrum = vec![0.0f64; hist_cfg.n_bins];
    let bin_fs = hist_cfg.bin_width_ps * 1.0e3;
    let stop_fs = hist_cfg.stop_delay_ns * 1.0e6;
    let tau0 = cfg.repetition_time_fs();
    let m_lo = (-stop_fs / tau0).ceil() as i64;
    let m_hi = ((hist_cfg.window_ns * 1.0e6 - stop_fs) / tau0).floor() as i64;
    for m in m_lo..=m_hi {
        let (delays, weight) = if m == 0 {
            (&run_k.delays_fs, result.n0_with_coulomb / run_k.delays_fs.len().max(1) as f64)
        } else {
            (&run_0.delays_fs, result.n1 / run_0.delays_fs.len().max(1) as f64)
        };
        for &d in delays {
            let bin = ((d + stop_fs + m as f64 * tau0) / bin_fs).floor();
            if bin >= 0.0 && (bin as usize) < spectrum.len() {
                spectrum[bin as usize] += weight;
            }
        }
    }
    let mut text = String::from("bin,delay_ns,model_counts\n");
    for (i, &v) in spectrum.iter().enumerate() {
        text.push_str(&format!("{i},{:.4},{v:.4}\n", (i as f64 + 0.5) * hist_cfg.bin_width_ps * 1.0e-3));
    }
    fs::write(out.join("spectrum.csv"), text)?;
    eprintln!("wrote {}", out.join("spectrum.csv").display());

    write_json(&out.join("fig2.json"), &json!({ "config": cfg, "result": result }))
}
