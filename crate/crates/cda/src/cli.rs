//! Command-line entry points and run persistence.
//!
//! Subcommands: `simulate`, `twin`, `sweep`, `check-eos`,
//! `check-interpolant`, `report`. Exit status 0 on success, 1 on
//! validation or I/O problems, 2 on numerical failure; every error goes to
//! stderr with a machine-parsable `CDA-E<code>:` prefix. Sweep workers are
//! capped by the `CDA_THREADS` environment variable.

use crate::config::{fmt_f64, parse_config, RunConfig};
use crate::error::{CdaError, Result};
use crate::experiments::{
    bounding_growth_exponent, run_simulation, run_sweep, run_twin, steepest_prefix_rate, ErrorRow,
    TrackingReport,
};
use crate::fields::write_snapshot;
use crate::interpolants::projection_diagnostics;
use crate::thermo::{check_hypotheses, gibbs_residual, GasModel};
use std::io::Write;
use std::path::{Path, PathBuf};

const USAGE: &str = "usage: cda <subcommand> [flags]
subcommands:
  simulate           integrate the observed system alone
  twin               run a twin (observed + synchronized) experiment
  sweep              run a lambda x delta grid of twin experiments
  check-eos          run the constitutive hypothesis checks
  check-interpolant  measure the observation-operator axioms
  report             re-derive fitted rates from a stored series table
flags:
  --config <path>      configuration document (simulate/twin/sweep/check-*)
  --output-dir <path>  directory for tables, snapshots and the manifest
  --seed <n>           override the configured seed
  --model <name>       gas model preset for check-eos (ideal | degenerate)
  --series <path>      stored series.csv for report
  --t-sync <v>         window end used by report (default 0)
  --t-plus <v>         horizon used by report (default last sample)
";

struct Flags {
    config: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    model: Option<String>,
    series: Option<PathBuf>,
    t_sync: Option<f64>,
    t_plus: Option<f64>,
}

fn parse_flags(args: &[String]) -> Result<Flags> {
    let mut f = Flags {
        config: None,
        output_dir: None,
        seed: None,
        model: None,
        series: None,
        t_sync: None,
        t_plus: None,
    };
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let mut grab = || {
            it.next()
                .cloned()
                .ok_or_else(|| CdaError::Usage(format!("flag {a} needs a value")))
        };
        match a.as_str() {
            "--config" => f.config = Some(PathBuf::from(grab()?)),
            "--output-dir" => f.output_dir = Some(PathBuf::from(grab()?)),
            "--seed" => {
                f.seed = Some(grab()?.parse().map_err(|_| {
                    CdaError::Usage("--seed expects a nonnegative integer".into())
                })?)
            }
            "--model" => f.model = Some(grab()?),
            "--series" => f.series = Some(PathBuf::from(grab()?)),
            "--t-sync" => {
                f.t_sync = Some(grab()?.parse().map_err(|_| {
                    CdaError::Usage("--t-sync expects a number".into())
                })?)
            }
            "--t-plus" => {
                f.t_plus = Some(grab()?.parse().map_err(|_| {
                    CdaError::Usage("--t-plus expects a number".into())
                })?)
            }
            other => {
                return Err(CdaError::Usage(format!("unknown flag {other:?}")));
            }
        }
    }
    Ok(f)
}

fn load_config(flags: &Flags) -> Result<RunConfig> {
    let path = flags
        .config
        .as_ref()
        .ok_or_else(|| CdaError::Usage("--config <path> is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CdaError::Io(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Run the CLI against explicit output sinks; returns the exit status.
pub fn run_cli(args: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    match dispatch(args, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{}: {e}", e.code());
            if matches!(e, CdaError::Usage(_)) {
                let _ = write!(stderr, "{USAGE}");
            }
            e.exit_status()
        }
    }
}

fn dispatch(args: &[String], out: &mut dyn Write) -> Result<()> {
    let sub = args
        .first()
        .ok_or_else(|| CdaError::Usage("missing subcommand".into()))?;
    let flags = parse_flags(&args[1..])?;
    match sub.as_str() {
        "simulate" => cmd_simulate(&flags, out),
        "twin" => cmd_twin(&flags, out),
        "sweep" => cmd_sweep(&flags, out),
        "check-eos" => cmd_check_eos(&flags, out),
        "check-interpolant" => cmd_check_interpolant(&flags, out),
        "report" => cmd_report(&flags, out),
        other => Err(CdaError::Usage(format!("unknown subcommand {other:?}"))),
    }
}

fn cmd_simulate(flags: &Flags, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(flags)?;
    let snap = flags.output_dir.as_ref().map(|d| d.join("fields"));
    let twin = cfg.build_twin(snap)?;
    let report = run_simulation(&twin)?;
    if let Some(dir) = &flags.output_dir {
        std::fs::create_dir_all(dir)?;
        let mut table = String::from("t,u_L2,T_L2,R_L2,div_defect,mean_R\n");
        for i in 0..report.times.len() {
            table.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                report.times[i],
                report.u_l2[i],
                report.t_l2[i],
                report.r_l2[i],
                report.divergence_defect[i],
                report.mean_r[i]
            ));
        }
        std::fs::write(dir.join("simulate.csv"), table)?;
    }
    writeln!(out, "simulate: {} output rows", report.times.len())?;
    if let (Some(t), Some(u)) = (report.times.last(), report.u_l2.last()) {
        writeln!(out, "simulate: final t = {t}, |u|_L2 = {u:.6e}")?;
    }
    Ok(())
}

fn cmd_twin(flags: &Flags, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(flags)?;
    let snap = flags.output_dir.as_ref().map(|d| d.join("fields"));
    let twin = cfg.build_twin(snap)?;
    let report = run_twin(&twin)?;
    if let Some(dir) = &flags.output_dir {
        let manifest = write_report(&report, dir, &cfg)?;
        writeln!(out, "twin: manifest written to {}", manifest.display())?;
    }
    let (t0, first) = report.row_at(0.0).unwrap_or((0.0, ErrorRow::default()));
    let (tt, at_sync) = report
        .row_at(cfg.t_sync)
        .unwrap_or((cfg.t_sync, ErrorRow::default()));
    writeln!(out, "twin: err_u_L2({t0}) = {:.6e}", first.u_l2)?;
    writeln!(out, "twin: err_u_L2({tt}) = {:.6e}", at_sync.u_l2)?;
    writeln!(out, "twin: err_T_L2({tt}) = {:.6e}", at_sync.t_l2)?;
    if let Some(r) = report.decay_rate {
        writeln!(out, "twin: fitted decay rate = {r:.6e}")?;
    }
    if let Some(k) = report.growth_rate {
        writeln!(out, "twin: bounding growth exponent = {k:.6e}")?;
    }
    Ok(())
}

fn cmd_sweep(flags: &Flags, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(flags)?;
    let twin = cfg.build_twin(None)?;
    let threads = std::env::var("CDA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(1)
        .max(1);
    let rows = run_sweep(&twin, &cfg.sweep_lambdas, &cfg.sweep_deltas, threads)?;
    let mut table =
        String::from("lambda,delta,seed,err_u_L2,err_T_L2,err_R_L2,decay_rate,growth_rate\n");
    for r in &rows {
        table.push_str(&format!(
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            fmt_f64(r.lambda),
            fmt_f64(r.delta),
            r.seed,
            r.err_u_l2,
            r.err_t_l2,
            r.err_r_l2,
            r.decay_rate,
            r.growth_rate
        ));
    }
    if let Some(dir) = &flags.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), &table)?;
    }
    write!(out, "{table}")?;
    Ok(())
}

fn cmd_check_eos(flags: &Flags, out: &mut dyn Write) -> Result<()> {
    let model = match (&flags.model, &flags.config) {
        (Some(name), _) => GasModel::from_preset(name).ok_or_else(|| {
            CdaError::Usage(format!("--model must be ideal | degenerate, got {name:?}"))
        })?,
        (None, Some(_)) => load_config(flags)?.build_gas_model(),
        (None, None) => GasModel::ideal(),
    };
    let report = check_hypotheses(&model, 50.0, 400);
    write!(out, "{report}")?;
    let mut worst: f64 = 0.0;
    for i in 1..=5 {
        for j in 1..=5 {
            let rho = 0.5 + 0.3 * i as f64;
            let theta = 0.5 + 0.3 * j as f64;
            let (rt, rr) = gibbs_residual(&model, rho, theta, 1e-5)?;
            worst = worst.max(rt.abs()).max(rr.abs());
        }
    }
    writeln!(out, "gibbs_residual_max    {worst:.3e} (5x5 state grid, h = 1e-5)")?;
    writeln!(
        out,
        "verdict               {}",
        if report.stability_ok() {
            "stability hypotheses hold"
        } else {
            "stability hypotheses VIOLATED"
        }
    )?;
    Ok(())
}

fn cmd_check_interpolant(flags: &Flags, out: &mut dyn Write) -> Result<()> {
    let cfg = match &flags.config {
        Some(_) => load_config(flags)?,
        None => RunConfig::defaults(),
    };
    let setup = cfg.build_setup()?;
    let nudging = cfg.build_nudging(&setup)?;
    let pi = std::f64::consts::PI;
    let periodic = setup.grid.horizontal_bc == crate::fields::HorizontalBc::Periodic;
    let has_depth = setup.grid.nz > 1;
    let samples: Vec<_> = (1..=4)
        .map(|m| {
            let m = m as f64;
            crate::fields::ScalarField::from_fn(&setup.grid, move |x, y, z| {
                let h = if periodic {
                    (2.0 * pi * m * x).sin() * (2.0 * pi * y).cos()
                } else {
                    (pi * m * x).sin() * (pi * y).sin()
                };
                h * if has_depth { (pi * z).sin() } else { 1.0 }
            })
        })
        .collect();
    let diag = projection_diagnostics(&nudging.interp_temperature, &samples)?;
    writeln!(out, "rank                     {}", nudging.interp_temperature.rank)?;
    writeln!(out, "idempotence_defect       {:.3e}", diag.idempotence_defect)?;
    writeln!(out, "self_adjointness_defect  {:.3e}", diag.self_adjointness_defect)?;
    writeln!(out, "approximation_constant   {:.3e}", diag.approximation_constant)?;
    for (i, e) in diag.sample_errors.iter().enumerate() {
        writeln!(out, "sample_error[{i}]          {e:.3e}")?;
    }
    Ok(())
}

fn cmd_report(flags: &Flags, out: &mut dyn Write) -> Result<()> {
    let path = flags
        .series
        .as_ref()
        .ok_or_else(|| CdaError::Usage("report needs --series <path>".into()))?;
    let (times, errors, _) = read_series(path)?;
    let q: Vec<f64> = errors
        .iter()
        .map(|e| e.u_l2 * e.u_l2 + e.t_l2 * e.t_l2)
        .collect();
    let t_sync = flags.t_sync.unwrap_or(0.0);
    let horizon = t_sync.max(times.last().copied().unwrap_or(0.0));
    match steepest_prefix_rate(&times, &q, horizon) {
        Some((r, t_b)) => {
            writeln!(out, "report: fitted decay rate = {r:.6e} on [0, {t_b}]")?;
        }
        None => writeln!(out, "report: decay fit unavailable (needs 5 positive samples)")?,
    }
    let k = bounding_growth_exponent(&times, &q, t_sync);
    writeln!(out, "report: bounding growth exponent from t = {t_sync}: {k:.6e}")?;
    Ok(())
}

/// FNV-1a 64-bit hash, used to fingerprint the canonical configuration.
fn fnv1a64(data: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in data {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Persist a tracking report: the time-series table, final-state
/// snapshots, and a manifest that embeds the full canonical configuration
/// (so the run can be reproduced from the manifest and binary alone).
pub fn write_report(report: &TrackingReport, dir: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut table =
        String::from("t,err_u_L2,err_T_L2,err_R_L2,err_u_L1,err_T_L1,err_R_L1,nudging_active\n");
    for i in 0..report.times.len() {
        let e = &report.errors[i];
        table.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
            report.times[i],
            e.u_l2,
            e.t_l2,
            e.r_l2,
            e.u_l1,
            e.t_l1,
            e.r_l1,
            u8::from(report.nudging_active[i])
        ));
    }
    std::fs::write(dir.join("series.csv"), &table)?;

    if let Some(energy) = &report.energy {
        let mut etable = String::from("t,res_velocity,res_temperature\n");
        for i in 0..energy.times.len() {
            etable.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                energy.times[i], energy.res_velocity[i], energy.res_temperature[i]
            ));
        }
        std::fs::write(dir.join("energy.csv"), &etable)?;
    }

    if let (Some(obs), Some(sync)) = (&report.final_observed, &report.final_sync) {
        let fdir = dir.join("final");
        std::fs::create_dir_all(&fdir)?;
        write_snapshot(&fdir.join("obs_temperature.cdafld"), "obs_temperature", &obs.temperature)?;
        write_snapshot(
            &fdir.join("sync_temperature.cdafld"),
            "sync_temperature",
            &sync.temperature,
        )?;
        write_snapshot(&fdir.join("obs_u_x.cdafld"), "obs_u_x", &obs.velocity.component(0))?;
        write_snapshot(&fdir.join("obs_u_y.cdafld"), "obs_u_y", &obs.velocity.component(1))?;
        write_snapshot(&fdir.join("sync_u_x.cdafld"), "sync_u_x", &sync.velocity.component(0))?;
        write_snapshot(&fdir.join("sync_u_y.cdafld"), "sync_u_y", &sync.velocity.component(1))?;
        write_snapshot(&fdir.join("obs_pressure.cdafld"), "obs_pressure", &obs.pressure_potential)?;
        write_snapshot(
            &fdir.join("sync_pressure.cdafld"),
            "sync_pressure",
            &sync.pressure_potential,
        )?;
    }

    let canonical = cfg.canonical();
    let setup = cfg.build_setup()?;
    let d = &setup.coeffs;
    let mut lines: Vec<String> = Vec::new();
    for line in canonical.lines() {
        lines.push(format!("config.{line}"));
    }
    lines.push(format!("derived.alpha = {}", fmt_f64(d.alpha)));
    lines.push(format!("derived.beta_mean = {}", fmt_f64(setup.beta_mean())));
    lines.push(format!("derived.c_p = {}", fmt_f64(d.c_p)));
    lines.push(format!("derived.c_v = {}", fmt_f64(d.c_v)));
    lines.push(format!(
        "derived.closure_denominator = {}",
        fmt_f64(setup.closure_denominator())
    ));
    lines.push(format!("derived.kappa_bar = {}", fmt_f64(setup.kappa_bar)));
    lines.push(format!("derived.mu_bar = {}", fmt_f64(setup.mu_bar)));
    lines.push(format!("derived.p_rho = {}", fmt_f64(d.p_rho)));
    lines.push(format!("derived.p_theta = {}", fmt_f64(d.p_theta)));
    lines.push(format!("derived.s_rho = {}", fmt_f64(d.s_rho)));
    lines.push(format!("derived.s_theta = {}", fmt_f64(d.s_theta)));
    lines.push(format!(
        "fit.decay_rate = {}",
        report.decay_rate.map(fmt_f64).unwrap_or_else(|| "none".into())
    ));
    lines.push(format!(
        "fit.growth_rate = {}",
        report.growth_rate.map(fmt_f64).unwrap_or_else(|| "none".into())
    ));
    lines.push(format!(
        "meta.config_hash = {:016x}",
        fnv1a64(canonical.as_bytes())
    ));
    lines.push(format!(
        "meta.created_unix = {}",
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    ));
    lines.push(format!("meta.rows = {}", report.times.len()));
    lines.push(format!("meta.t_sync = {}", fmt_f64(report.t_sync)));
    lines.push(format!("meta.version = {}", env!("CARGO_PKG_VERSION")));
    lines.sort();
    let path = dir.join("manifest.txt");
    std::fs::write(&path, lines.join("\n") + "\n")?;
    Ok(path)
}

fn read_series(path: &Path) -> Result<(Vec<f64>, Vec<ErrorRow>, Vec<bool>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CdaError::Io(format!("cannot read series {}: {e}", path.display())))?;
    let mut times = Vec::new();
    let mut errors = Vec::new();
    let mut active = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(CdaError::Io(format!(
                "series line {} has {} columns, expected 8",
                i + 1,
                cols.len()
            )));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| CdaError::Io(format!("bad number {s:?} in series line {}", i + 1)))
        };
        times.push(f(cols[0])?);
        errors.push(ErrorRow {
            u_l2: f(cols[1])?,
            t_l2: f(cols[2])?,
            r_l2: f(cols[3])?,
            u_l1: f(cols[4])?,
            t_l1: f(cols[5])?,
            r_l1: f(cols[6])?,
        });
        active.push(cols[7].trim() == "1");
    }
    Ok((times, errors, active))
}

/// Reconstruct the persisted portion of a tracking report.
pub fn read_report(dir: &Path) -> Result<TrackingReport> {
    let (times, errors, nudging_active) = read_series(&dir.join("series.csv"))?;
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let mut report = TrackingReport {
        times,
        errors,
        nudging_active,
        ..TrackingReport::default()
    };
    for line in manifest.lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            match k {
                "fit.decay_rate" if v != "none" => {
                    report.decay_rate = v.parse().ok();
                }
                "fit.growth_rate" if v != "none" => {
                    report.growth_rate = v.parse().ok();
                }
                "meta.t_sync" => {
                    report.t_sync = v.parse().unwrap_or(0.0);
                }
                _ => {}
            }
        }
    }
    Ok(report)
}
