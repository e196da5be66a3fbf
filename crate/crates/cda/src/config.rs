//! Run configuration: a line-oriented `section.key = value` document with
//! a fixed schema, strict unknown-key rejection, and a canonical
//! serialization (alphabetical by key, shortest round-trip floats) so
//! manifests diff cleanly.

use crate::error::{CdaError, Result};
use crate::experiments::{InitSpec, TwinExperimentConfig};
use crate::fields::{Grid, HorizontalBc, SolveParams, Trace};
use crate::interpolants::{Interpolant, InterpolantKind, VerticalExtent};
use crate::solver::{NudgingConfig, ProblemSetup};
use crate::thermo::{GasModel, ReferenceState, StructuralFn, TransportLaws};
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Twin,
    Simulate,
    Sweep,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub lx: f64,
    pub ly: f64,
    pub horizontal_bc: HorizontalBc,
    pub gas_model: String,
    pub radiation_a: f64,
    pub kappa_deg: f64,
    pub specific_heat_bound: f64,
    pub mu0: f64,
    pub eta0: f64,
    pub kappa0: f64,
    pub beta_cond: f64,
    pub rho_bar: f64,
    pub theta_bar: f64,
    pub centrifugal: f64,
    pub theta_bottom: f64,
    pub theta_top: f64,
    pub t_minus: f64,
    pub t_zero: f64,
    pub t_sync: f64,
    pub t_plus: f64,
    pub dt: f64,
    pub poisson_tol: f64,
    pub poisson_max_iter: usize,
    pub projection_tol: f64,
    pub lambda: f64,
    pub interpolant_kind: InterpolantKind,
    pub delta: f64,
    pub delta_temperature: f64,
    pub vertical: VerticalExtent,
    pub obs_velocity_amplitude: f64,
    pub obs_temperature_amplitude: f64,
    pub obs_perturbation: f64,
    pub sync_velocity_amplitude: f64,
    pub sync_temperature_amplitude: f64,
    pub sync_perturbation: f64,
    pub sync_mirror: bool,
    pub output_every: usize,
    pub snapshots: bool,
    pub energy_diagnostics: bool,
    pub sweep_lambdas: Vec<f64>,
    pub sweep_deltas: Vec<f64>,
}

const KEYS: &[&str] = &[
    "boundary.theta_bottom",
    "boundary.theta_top",
    "experiment",
    "gas.kappa_deg",
    "gas.radiation_a",
    "gas.specific_heat_bound",
    "gas_model",
    "grid.horizontal_bc",
    "grid.lx",
    "grid.ly",
    "grid.nx",
    "grid.ny",
    "grid.nz",
    "init.observed.perturbation",
    "init.observed.temperature_amplitude",
    "init.observed.velocity_amplitude",
    "init.sync.mode",
    "init.sync.perturbation",
    "init.sync.temperature_amplitude",
    "init.sync.velocity_amplitude",
    "interpolant.delta",
    "interpolant.delta_temperature",
    "interpolant.kind",
    "interpolant.vertical",
    "nudging.lambda",
    "output.energy_diagnostics",
    "output.every_steps",
    "output.snapshots",
    "potential.centrifugal",
    "reference.rho_bar",
    "reference.theta_bar",
    "seed",
    "solver.dt",
    "solver.poisson_max_iter",
    "solver.poisson_tol",
    "solver.projection_tol",
    "sweep.deltas",
    "sweep.lambdas",
    "times.t_minus",
    "times.t_plus",
    "times.t_sync",
    "times.t_zero",
    "transport.beta_cond",
    "transport.eta0",
    "transport.kappa0",
    "transport.mu0",
];

struct Raw {
    map: BTreeMap<String, (String, usize)>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|(v, _)| v.as_str())
    }

    fn line(&self, key: &str) -> usize {
        self.map.get(key).map(|(_, l)| *l).unwrap_or(0)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                CdaError::Config(format!(
                    "line {}: {key} expects a number, got {v:?}",
                    self.line(key)
                ))
            }),
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                CdaError::Config(format!(
                    "line {}: {key} expects a nonnegative integer, got {v:?}",
                    self.line(key)
                ))
            }),
        }
    }

    fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                CdaError::Config(format!(
                    "line {}: {key} expects a nonnegative integer, got {v:?}",
                    self.line(key)
                ))
            }),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(CdaError::Config(format!(
                "line {}: {key} expects true or false, got {v:?}",
                self.line(key)
            ))),
        }
    }

    fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<f64>().map_err(|_| {
                        CdaError::Config(format!(
                            "line {}: {key} expects a comma-separated number list, got {v:?}",
                            self.line(key)
                        ))
                    })
                })
                .collect(),
        }
    }
}

/// Parse and validate a configuration document; every default is resolved
/// so the canonical form records the complete run recipe.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let body = match line.find('#') {
            Some(i) => &line[..i],
            None => line,
        };
        let body = body.trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| {
            CdaError::Config(format!("line {lineno}: expected `key = value`, got {body:?}"))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KEYS.contains(&key.as_str()) {
            return Err(CdaError::Config(format!("line {lineno}: unknown key {key:?}")));
        }
        if map.insert(key.clone(), (value, lineno)).is_some() {
            return Err(CdaError::Config(format!(
                "line {lineno}: duplicate key {key:?}"
            )));
        }
    }
    let raw = Raw { map };

    let experiment = match raw.get("experiment").unwrap_or("twin") {
        "twin" => ExperimentKind::Twin,
        "simulate" => ExperimentKind::Simulate,
        "sweep" => ExperimentKind::Sweep,
        v => {
            return Err(CdaError::Config(format!(
                "line {}: experiment must be twin | simulate | sweep, got {v:?}",
                raw.line("experiment")
            )))
        }
    };
    let gas_model = raw.get("gas_model").unwrap_or("ideal").to_string();
    let preset = GasModel::from_preset(&gas_model).ok_or_else(|| {
        CdaError::Config(format!(
            "line {}: gas_model must be ideal | degenerate, got {gas_model:?}",
            raw.line("gas_model")
        ))
    })?;
    let preset_kappa = match preset.structural {
        StructuralFn::Degenerate { kappa } => kappa,
        _ => 0.0,
    };

    let horizontal_bc = match raw.get("grid.horizontal_bc").unwrap_or("walls") {
        "walls" => HorizontalBc::Walls,
        "periodic" => HorizontalBc::Periodic,
        v => {
            return Err(CdaError::Config(format!(
                "line {}: grid.horizontal_bc must be walls | periodic, got {v:?}",
                raw.line("grid.horizontal_bc")
            )))
        }
    };
    let interpolant_kind = match raw.get("interpolant.kind").unwrap_or("cell_average") {
        "cell_average" => InterpolantKind::CellAverage,
        "spectral_cutoff" => InterpolantKind::SpectralCutoff,
        v => {
            return Err(CdaError::Config(format!(
                "line {}: interpolant.kind must be cell_average | spectral_cutoff, got {v:?}",
                raw.line("interpolant.kind")
            )))
        }
    };
    let vertical = match raw.get("interpolant.vertical").unwrap_or("full") {
        "full" => VerticalExtent::Full,
        v if v.starts_with("blocks:") => {
            let n: usize = v["blocks:".len()..].parse().map_err(|_| {
                CdaError::Config(format!(
                    "line {}: interpolant.vertical blocks count must be an integer, got {v:?}",
                    raw.line("interpolant.vertical")
                ))
            })?;
            VerticalExtent::Blocks(n)
        }
        v => {
            return Err(CdaError::Config(format!(
                "line {}: interpolant.vertical must be full | blocks:<n>, got {v:?}",
                raw.line("interpolant.vertical")
            )))
        }
    };
    let sync_mirror = match raw.get("init.sync.mode").unwrap_or("preset") {
        "preset" => false,
        "mirror" => true,
        v => {
            return Err(CdaError::Config(format!(
                "line {}: init.sync.mode must be preset | mirror, got {v:?}",
                raw.line("init.sync.mode")
            )))
        }
    };

    let delta = raw.f64_or("interpolant.delta", 0.0625)?;
    let cfg = RunConfig {
        experiment,
        seed: raw.u64_or("seed", 42)?,
        nx: raw.usize_or("grid.nx", 64)?,
        ny: raw.usize_or("grid.ny", 64)?,
        nz: raw.usize_or("grid.nz", 16)?,
        lx: raw.f64_or("grid.lx", 1.0)?,
        ly: raw.f64_or("grid.ly", 1.0)?,
        horizontal_bc,
        gas_model,
        radiation_a: raw.f64_or("gas.radiation_a", preset.radiation_a)?,
        kappa_deg: raw.f64_or("gas.kappa_deg", preset_kappa)?,
        specific_heat_bound: raw.f64_or("gas.specific_heat_bound", preset.specific_heat_bound)?,
        mu0: raw.f64_or("transport.mu0", 0.005)?,
        eta0: raw.f64_or("transport.eta0", 0.0)?,
        kappa0: raw.f64_or("transport.kappa0", 0.01)?,
        beta_cond: raw.f64_or("transport.beta_cond", 6.5)?,
        rho_bar: raw.f64_or("reference.rho_bar", 1.0)?,
        theta_bar: raw.f64_or("reference.theta_bar", 1.0)?,
        centrifugal: raw.f64_or("potential.centrifugal", 0.5)?,
        theta_bottom: raw.f64_or("boundary.theta_bottom", 0.0)?,
        theta_top: raw.f64_or("boundary.theta_top", 0.0)?,
        t_minus: raw.f64_or("times.t_minus", -0.5)?,
        t_zero: raw.f64_or("times.t_zero", 0.0)?,
        t_sync: raw.f64_or("times.t_sync", 2.0)?,
        t_plus: raw.f64_or("times.t_plus", 4.0)?,
        dt: raw.f64_or("solver.dt", 0.004)?,
        poisson_tol: raw.f64_or("solver.poisson_tol", 1e-10)?,
        poisson_max_iter: raw.usize_or("solver.poisson_max_iter", 20_000)?,
        projection_tol: raw.f64_or("solver.projection_tol", 1e-12)?,
        lambda: raw.f64_or("nudging.lambda", 50.0)?,
        interpolant_kind,
        delta,
        delta_temperature: raw.f64_or("interpolant.delta_temperature", delta)?,
        vertical,
        obs_velocity_amplitude: raw.f64_or("init.observed.velocity_amplitude", 0.2)?,
        obs_temperature_amplitude: raw.f64_or("init.observed.temperature_amplitude", 0.1)?,
        obs_perturbation: raw.f64_or("init.observed.perturbation", 0.0)?,
        sync_velocity_amplitude: raw.f64_or("init.sync.velocity_amplitude", 0.0)?,
        sync_temperature_amplitude: raw.f64_or("init.sync.temperature_amplitude", 0.0)?,
        sync_perturbation: raw.f64_or("init.sync.perturbation", 0.0)?,
        sync_mirror,
        output_every: raw.usize_or("output.every_steps", 5)?,
        snapshots: raw.bool_or("output.snapshots", false)?,
        energy_diagnostics: raw.bool_or("output.energy_diagnostics", true)?,
        sweep_lambdas: raw.list_or("sweep.lambdas", &[1.0, 5.0, 25.0, 125.0])?,
        sweep_deltas: raw.list_or("sweep.deltas", &[0.0625])?,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn defaults() -> RunConfig {
        parse_config("").expect("defaults are valid")
    }

    fn validate(&self) -> Result<()> {
        let c = |ok: bool, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(CdaError::Constraint(msg.to_string()))
            }
        };
        c(self.lambda >= 0.0, "nudging.lambda must satisfy lambda >= 0")?;
        c(self.dt > 0.0, "solver.dt must be positive")?;
        c(self.t_minus < 0.0, "times.t_minus must be negative")?;
        c(
            self.t_zero == 0.0,
            "times.t_zero is the fixed time origin and must be 0",
        )?;
        c(self.t_sync > 0.0, "times.t_sync must be positive")?;
        c(
            self.t_plus > self.t_sync,
            "times.t_plus must exceed times.t_sync",
        )?;
        c(self.lx > 0.0 && self.ly > 0.0, "grid extents must be positive")?;
        c(
            self.rho_bar > 0.0 && self.theta_bar > 0.0,
            "reference state must be strictly positive",
        )?;
        c(self.mu0 > 0.0, "transport.mu0 must be positive")?;
        c(self.eta0 >= 0.0, "transport.eta0 must be nonnegative")?;
        c(self.kappa0 > 0.0, "transport.kappa0 must be positive")?;
        c(self.beta_cond > 6.0, "transport.beta_cond must exceed 6")?;
        c(self.radiation_a >= 0.0, "gas.radiation_a must be nonnegative")?;
        c(self.kappa_deg >= 0.0, "gas.kappa_deg must be nonnegative")?;
        c(self.delta > 0.0, "interpolant.delta must be positive")?;
        c(
            self.delta_temperature > 0.0,
            "interpolant.delta_temperature must be positive",
        )?;
        c(self.output_every >= 1, "output.every_steps must be >= 1")?;
        c(self.poisson_tol > 0.0, "solver.poisson_tol must be positive")?;
        c(
            self.projection_tol > 0.0,
            "solver.projection_tol must be positive",
        )?;
        c(
            self.obs_perturbation >= 0.0 && self.sync_perturbation >= 0.0,
            "perturbation sizes must be nonnegative",
        )?;
        Ok(())
    }

    /// Canonical serialization: every key, alphabetical, resolved values.
    pub fn canonical(&self) -> String {
        let vertical = match self.vertical {
            VerticalExtent::Full => "full".to_string(),
            VerticalExtent::Blocks(n) => format!("blocks:{n}"),
        };
        let mut lines: Vec<(String, String)> = vec![
            ("boundary.theta_bottom".into(), fmt_f64(self.theta_bottom)),
            ("boundary.theta_top".into(), fmt_f64(self.theta_top)),
            (
                "experiment".into(),
                match self.experiment {
                    ExperimentKind::Twin => "twin".into(),
                    ExperimentKind::Simulate => "simulate".into(),
                    ExperimentKind::Sweep => "sweep".into(),
                },
            ),
            ("gas.kappa_deg".into(), fmt_f64(self.kappa_deg)),
            ("gas.radiation_a".into(), fmt_f64(self.radiation_a)),
            (
                "gas.specific_heat_bound".into(),
                fmt_f64(self.specific_heat_bound),
            ),
            ("gas_model".into(), self.gas_model.clone()),
            (
                "grid.horizontal_bc".into(),
                match self.horizontal_bc {
                    HorizontalBc::Walls => "walls".into(),
                    HorizontalBc::Periodic => "periodic".into(),
                },
            ),
            ("grid.lx".into(), fmt_f64(self.lx)),
            ("grid.ly".into(), fmt_f64(self.ly)),
            ("grid.nx".into(), self.nx.to_string()),
            ("grid.ny".into(), self.ny.to_string()),
            ("grid.nz".into(), self.nz.to_string()),
            (
                "init.observed.perturbation".into(),
                fmt_f64(self.obs_perturbation),
            ),
            (
                "init.observed.temperature_amplitude".into(),
                fmt_f64(self.obs_temperature_amplitude),
            ),
            (
                "init.observed.velocity_amplitude".into(),
                fmt_f64(self.obs_velocity_amplitude),
            ),
            (
                "init.sync.mode".into(),
                if self.sync_mirror { "mirror".into() } else { "preset".into() },
            ),
            (
                "init.sync.perturbation".into(),
                fmt_f64(self.sync_perturbation),
            ),
            (
                "init.sync.temperature_amplitude".into(),
                fmt_f64(self.sync_temperature_amplitude),
            ),
            (
                "init.sync.velocity_amplitude".into(),
                fmt_f64(self.sync_velocity_amplitude),
            ),
            ("interpolant.delta".into(), fmt_f64(self.delta)),
            (
                "interpolant.delta_temperature".into(),
                fmt_f64(self.delta_temperature),
            ),
            (
                "interpolant.kind".into(),
                match self.interpolant_kind {
                    InterpolantKind::CellAverage => "cell_average".into(),
                    InterpolantKind::SpectralCutoff => "spectral_cutoff".into(),
                },
            ),
            ("interpolant.vertical".into(), vertical),
            ("nudging.lambda".into(), fmt_f64(self.lambda)),
            (
                "output.energy_diagnostics".into(),
                self.energy_diagnostics.to_string(),
            ),
            ("output.every_steps".into(), self.output_every.to_string()),
            ("output.snapshots".into(), self.snapshots.to_string()),
            ("potential.centrifugal".into(), fmt_f64(self.centrifugal)),
            ("reference.rho_bar".into(), fmt_f64(self.rho_bar)),
            ("reference.theta_bar".into(), fmt_f64(self.theta_bar)),
            ("seed".into(), self.seed.to_string()),
            ("solver.dt".into(), fmt_f64(self.dt)),
            (
                "solver.poisson_max_iter".into(),
                self.poisson_max_iter.to_string(),
            ),
            ("solver.poisson_tol".into(), fmt_f64(self.poisson_tol)),
            ("solver.projection_tol".into(), fmt_f64(self.projection_tol)),
            ("sweep.deltas".into(), fmt_list(&self.sweep_deltas)),
            ("sweep.lambdas".into(), fmt_list(&self.sweep_lambdas)),
            ("times.t_minus".into(), fmt_f64(self.t_minus)),
            ("times.t_plus".into(), fmt_f64(self.t_plus)),
            ("times.t_sync".into(), fmt_f64(self.t_sync)),
            ("times.t_zero".into(), fmt_f64(self.t_zero)),
            ("transport.beta_cond".into(), fmt_f64(self.beta_cond)),
            ("transport.eta0".into(), fmt_f64(self.eta0)),
            ("transport.kappa0".into(), fmt_f64(self.kappa0)),
            ("transport.mu0".into(), fmt_f64(self.mu0)),
        ];
        lines.sort();
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn build_gas_model(&self) -> GasModel {
        let structural = if self.kappa_deg == 0.0 {
            StructuralFn::Ideal
        } else {
            StructuralFn::Degenerate {
                kappa: self.kappa_deg,
            }
        };
        GasModel {
            structural,
            radiation_a: self.radiation_a,
            transport: TransportLaws {
                mu0: self.mu0,
                eta0: self.eta0,
                kappa0: self.kappa0,
                beta: self.beta_cond,
            },
            specific_heat_bound: self.specific_heat_bound,
        }
    }

    pub fn build_setup(&self) -> Result<ProblemSetup> {
        let grid = Grid::new(self.nx, self.ny, self.nz, self.lx, self.ly, self.horizontal_bc)?;
        let trace = if self.theta_bottom == 0.0 && self.theta_top == 0.0 {
            Trace::Zero
        } else {
            Trace::VerticalLinear {
                bottom: self.theta_bottom,
                top: self.theta_top,
            }
        };
        ProblemSetup::new(
            grid,
            self.build_gas_model(),
            ReferenceState::new(self.rho_bar, self.theta_bar)?,
            trace,
            self.centrifugal,
            SolveParams {
                tol_rel: self.poisson_tol,
                tol_abs: 1e-15,
                max_iter: self.poisson_max_iter,
            },
            self.projection_tol,
        )
    }

    pub fn build_nudging(&self, setup: &ProblemSetup) -> Result<NudgingConfig> {
        let iv = Interpolant::new(
            self.interpolant_kind,
            self.delta,
            VerticalExtent::Full,
            &setup.hgrid,
        )?;
        let it = Interpolant::new(
            self.interpolant_kind,
            self.delta_temperature,
            self.vertical,
            &setup.grid,
        )?;
        NudgingConfig::new(self.lambda, self.t_sync, iv, it)
    }

    /// Assemble the full twin-experiment description.
    pub fn build_twin(&self, snapshot_dir: Option<PathBuf>) -> Result<TwinExperimentConfig> {
        let setup = self.build_setup()?;
        let nudging = self.build_nudging(&setup)?;
        Ok(TwinExperimentConfig {
            setup,
            nudging,
            t_minus: self.t_minus,
            t_sync: self.t_sync,
            t_plus: self.t_plus,
            dt: self.dt,
            output_every: self.output_every,
            observed_init: InitSpec {
                velocity_amplitude: self.obs_velocity_amplitude,
                temperature_amplitude: self.obs_temperature_amplitude,
                perturbation: self.obs_perturbation,
                mirror_observed: false,
            },
            sync_init: InitSpec {
                velocity_amplitude: self.sync_velocity_amplitude,
                temperature_amplitude: self.sync_temperature_amplitude,
                perturbation: self.sync_perturbation,
                mirror_observed: self.sync_mirror,
            },
            seed: self.seed,
            collect_energy_diagnostics: self.energy_diagnostics,
            snapshot_dir: if self.snapshots { snapshot_dir } else { None },
        })
    }
}

/// Shortest round-trip float formatting.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_list(vs: &[f64]) -> String {
    vs.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}
