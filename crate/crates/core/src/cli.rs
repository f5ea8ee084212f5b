//! Command-line front end.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiments::{self, ExperimentError, Scenario};
use crate::integrator::{StoragePolicy, Tolerances};
use crate::meanfield::{density_moments, ModelOptions};
use crate::oscillator::oracle::{quadrature_oracle, OracleKind};
use crate::oscillator::{
    displacement_matrix, momentum_matrix, position_matrix, trig_matrices, truncation_safe_block, OperatorMatrix,
};
use crate::params::{commensurate_rabi, derive, DerivedParams, PhysicalConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

/// Commensurate pulse index of the phase-space preset (0.5 omega_rec at omega_osc = 20 omega_rec).
pub const FIG6_PULSE_INDEX: u32 = 10;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0} check(s) failed")]
    CheckFailed(usize),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Params(p) => CliError::Config(p.to_string()),
            ExperimentError::InvalidRabi(_) | ExperimentError::InvalidWindow(_) | ExperimentError::InvalidGrid(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaUnit {
    Rec,
    Osc,
    Hz,
}

/// A drive frequency such as `0.5rec`, `1e-2osc` or `1700Hz`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaSpec {
    pub value: f64,
    pub unit: OmegaUnit,
}

impl OmegaSpec {
    pub fn rec(value: f64) -> Self {
        Self { value, unit: OmegaUnit::Rec }
    }

    /// Angular frequency in rad/s.
    pub fn resolve(&self, params: &DerivedParams) -> f64 {
        match self.unit {
            OmegaUnit::Rec => self.value * params.omega_rec,
            OmegaUnit::Osc => self.value * params.omega_osc,
            OmegaUnit::Hz => self.value * 2.0 * std::f64::consts::PI,
        }
    }
}

impl FromStr for OmegaSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        let (number, unit) = if let Some(v) = lower.strip_suffix("rec") {
            (v, OmegaUnit::Rec)
        } else if let Some(v) = lower.strip_suffix("osc") {
            (v, OmegaUnit::Osc)
        } else if let Some(v) = lower.strip_suffix("hz") {
            (v, OmegaUnit::Hz)
        } else {
            return Err(format!("`{s}` needs a unit suffix: rec, osc or Hz"));
        };
        let value: f64 = number.trim().parse().map_err(|_| format!("`{s}` does not start with a number"))?;
        if !(value > 0.0 && value.is_finite()) {
            return Err(format!("`{s}` must be positive and finite"));
        }
        Ok(Self { value, unit })
    }
}

impl fmt::Display for OmegaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = match self.unit {
            OmegaUnit::Rec => "rec",
            OmegaUnit::Osc => "osc",
            OmegaUnit::Hz => "Hz",
        };
        write!(f, "{}{unit}", self.value)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Exp,
    Sin,
    Cos,
    Z,
    P,
}

#[derive(Debug, Parser)]
#[command(name = "ringclock", version, about = "Mean-field model of a lattice clock read out through a ring cavity")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Experiment description (TOML); defaults to the preset of the subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory; without it results go to stdout.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Relative integrator tolerance.
    #[arg(long = "tol-rel", global = true, value_name = "REL")]
    pub tol_rel: Option<f64>,
    /// Highest vibrational level kept.
    #[arg(long, global = true, value_name = "N")]
    pub nmax: Option<usize>,
    /// Rabi frequency, e.g. 0.5rec, 1e-2osc, 1700Hz.
    #[arg(long, global = true, value_name = "VALUE+UNIT")]
    pub omega: Option<OmegaSpec>,
    /// Detection window (s).
    #[arg(long = "window-T", global = true, value_name = "SECONDS")]
    pub window_t: Option<f64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Subcommand, Clone)]
pub enum Command {
    /// Print the derived model constants.
    Derive,
    /// Integrate one pi/2 pulse and write the trajectory.
    Pulse,
    /// Scheme-1 SNR sweep with the F = 1e6 preset.
    Fig5,
    /// Phase-space trace of a commensurate 0.5 omega_rec pulse.
    Fig6,
    /// Scheme-2 SNR sweep with the F = 1e4 preset.
    Fig7,
    /// Scheme-1 SNR over a custom log grid.
    SweepSnr1(GridArgs),
    /// Scheme-2 SNR over a custom log grid.
    SweepSnr2(GridArgs),
    /// Dump an oscillator matrix as CSV (row, col, re, im).
    Matrix {
        #[arg(long, value_enum)]
        kind: MatrixKind,
        /// Dimensionless k a_osc; defaults to the configured clock or lattice value.
        #[arg(long)]
        ka: Option<f64>,
    },
    /// Run the oracle and invariant suite.
    Check,
    /// Repeat the run recorded in a manifest.
    Rerun {
        #[arg(value_name = "MANIFEST")]
        manifest: PathBuf,
    },
}

#[derive(Debug, Args, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridArgs {
    /// Lowest Rabi frequency, e.g. 1e-2rec.
    #[arg(long)]
    pub from: OmegaSpec,
    /// Highest Rabi frequency.
    #[arg(long)]
    pub to: OmegaSpec,
    #[arg(long = "per-decade", default_value_t = experiments::DEFAULT_POINTS_PER_DECADE)]
    pub per_decade: usize,
}

/// Fully resolved run description; replaying it reproduces the CSV output.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Invocation {
    pub command: String,
    pub config: PhysicalConfig,
    pub n_max: usize,
    pub tolerances: Tolerances,
    pub stride_divisor: f64,
    pub format: OutputFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<OmegaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_rad_s: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_kind: Option<MatrixKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_ka: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    pub outputs: Vec<String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let stdout = io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run<W: Write>(cli: &Cli, out: &mut W) -> Result<(), CliError> {
    if let Command::Rerun { manifest } = &cli.command {
        let m = RunManifest::load(manifest)?;
        let dir = cli
            .common
            .out
            .clone()
            .or_else(|| manifest.parent().map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."));
        return execute(&m.invocation, Some(&dir), out);
    }
    let invocation = resolve(&cli.common, &cli.command)?;
    execute(&invocation, cli.common.out.as_deref(), out)
}

fn load_config(path: Option<&Path>, preset: PhysicalConfig) -> Result<PhysicalConfig, CliError> {
    let Some(path) = path else { return Ok(preset) };
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg = PhysicalConfig::from_toml_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Derive => "derive",
        Command::Pulse => "pulse",
        Command::Fig5 => "fig5",
        Command::Fig6 => "fig6",
        Command::Fig7 => "fig7",
        Command::SweepSnr1(_) => "sweep-snr1",
        Command::SweepSnr2(_) => "sweep-snr2",
        Command::Matrix { .. } => "matrix",
        Command::Check => "check",
        Command::Rerun { .. } => "rerun",
    }
}

/// Materialise presets and defaults for `command`.
pub fn resolve(common: &CommonArgs, command: &Command) -> Result<Invocation, CliError> {
    let preset = match command {
        Command::Fig5 | Command::SweepSnr1(_) => PhysicalConfig::fig5_preset(),
        _ => PhysicalConfig::fig7_preset(),
    };
    let config = load_config(common.config.as_deref(), preset)?;
    let params = derive(&config).map_err(|e| CliError::Config(e.to_string()))?;
    let n_max = common.nmax.unwrap_or(experiments::DEFAULT_N_MAX);
    if n_max < 2 {
        return Err(CliError::Config("--nmax must be at least 2".into()));
    }
    let rel = common.tol_rel.unwrap_or(Tolerances::DEFAULT_REL);
    if !(rel > 0.0 && rel < 1.0) {
        return Err(CliError::Config(format!("--tol-rel must lie in (0, 1) (got {rel})")));
    }
    if let Some(t) = common.window_t {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Config(format!("--window-T must be positive (got {t})")));
        }
    }
    if common.jobs == Some(0) {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let mut inv = Invocation {
        command: command_name(command).into(),
        config,
        n_max,
        tolerances: Tolerances::with_rel(rel, params.n_atoms),
        stride_divisor: crate::integrator::IntegratorSettings::DEFAULT_STRIDE_DIVISOR,
        format: common.format.unwrap_or_default(),
        omega: None,
        window_s: None,
        grid_rad_s: None,
        jobs: None,
        matrix_kind: None,
        matrix_ka: None,
    };
    match command {
        Command::Pulse => inv.omega = Some(common.omega.unwrap_or(OmegaSpec::rec(1.0))),
        Command::Fig6 => inv.omega = common.omega,
        Command::Fig5 => {
            inv.grid_rad_s = Some(experiments::default_snr1_grid(&params));
            inv.jobs = common.jobs;
        }
        Command::Fig7 => {
            inv.grid_rad_s = Some(experiments::default_snr2_grid(&params));
            inv.window_s = Some(common.window_t.unwrap_or(1.0));
            inv.jobs = common.jobs;
        }
        Command::SweepSnr1(g) | Command::SweepSnr2(g) => {
            if g.per_decade == 0 {
                return Err(CliError::Config("--per-decade must be at least 1".into()));
            }
            let (lo, hi) = (g.from.resolve(&params), g.to.resolve(&params));
            if !(hi > lo) {
                return Err(CliError::Config(format!("--to ({}) must exceed --from ({})", g.to, g.from)));
            }
            inv.grid_rad_s = Some(experiments::log_grid(lo, hi, g.per_decade));
            inv.jobs = common.jobs;
            if matches!(command, Command::SweepSnr2(_)) {
                inv.window_s = Some(common.window_t.unwrap_or(1.0));
            }
        }
        Command::Matrix { kind, ka } => {
            inv.matrix_kind = Some(*kind);
            inv.matrix_ka = *ka;
        }
        Command::Derive | Command::Check | Command::Rerun { .. } => {}
    }
    Ok(inv)
}

fn scenario_for(inv: &Invocation) -> Result<Scenario, CliError> {
    let mut s = Scenario::with_options(inv.config.clone(), inv.n_max, ModelOptions::default())?;
    s.settings.tol = inv.tolerances;
    s.settings.stride_divisor = inv.stride_divisor;
    Ok(s)
}

struct Emitter<'a, W: Write> {
    dir: Option<&'a Path>,
    stdout: &'a mut W,
    outputs: Vec<String>,
}

impl<W: Write> Emitter<'_, W> {
    fn emit(&mut self, name: &str, body: &[u8]) -> Result<(), CliError> {
        match self.dir {
            None => self.stdout.write_all(body).map_err(|e| CliError::Io { path: "stdout".into(), source: e }),
            Some(dir) => {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
                let path = dir.join(name);
                fs::write(&path, body).map_err(io_err(&path))?;
                self.outputs.push(path.display().to_string());
                Ok(())
            }
        }
    }
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

/// Run a resolved invocation, writing into `dir` (with manifests) or to `stdout`.
pub fn execute<W: Write>(inv: &Invocation, dir: Option<&Path>, stdout: &mut W) -> Result<(), CliError> {
    let start = Instant::now();
    let mut em = Emitter { dir, stdout, outputs: Vec::new() };
    let ext = match inv.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    };
    match inv.command.as_str() {
        "derive" => {
            let params = derive(&inv.config).map_err(|e| CliError::Config(e.to_string()))?;
            for w in params.lamb_dicke_warnings() {
                log::warn!("{w}");
            }
            let body = match inv.format {
                OutputFormat::Csv => derived_table(&params).into_bytes(),
                OutputFormat::Json => json_bytes(&params),
            };
            em.emit(&format!("derive.{}", if ext == "csv" { "txt" } else { ext }), &body)?;
        }
        "pulse" => {
            let s = scenario_for(inv)?;
            let rabi = inv.omega.unwrap_or(OmegaSpec::rec(1.0)).resolve(&s.params);
            let traj = s.run_pi_half_pulse(rabi)?;
            let body = match inv.format {
                OutputFormat::Csv => {
                    let mut buf = Vec::new();
                    traj.write_csv(&mut buf).expect("in-memory write");
                    buf
                }
                OutputFormat::Json => json_bytes(&traj),
            };
            em.emit(&format!("pulse.{ext}"), &body)?;
        }
        "fig6" => {
            let s = scenario_for(inv)?;
            let rabi = match inv.omega {
                Some(o) => o.resolve(&s.params),
                None => commensurate_rabi(FIG6_PULSE_INDEX, s.params.omega_osc)
                    .map_err(|e| CliError::Config(e.to_string()))?,
            };
            let trace = experiments::phase_space_trace(&s, rabi)?;
            let body = match inv.format {
                OutputFormat::Csv => {
                    let mut buf = Vec::new();
                    trace.write_csv(&mut buf).expect("in-memory write");
                    buf
                }
                OutputFormat::Json => json_bytes(&trace),
            };
            em.emit(&format!("fig6.{ext}"), &body)?;
        }
        "fig5" | "fig7" | "sweep-snr1" | "sweep-snr2" => {
            let s = scenario_for(inv)?;
            let grid = inv.grid_rad_s.clone().ok_or_else(|| CliError::Config("sweep without a grid".into()))?;
            let scheme1 = matches!(inv.command.as_str(), "fig5" | "sweep-snr1");
            let sweep = if scheme1 {
                experiments::sweep_snr1(&s, &grid, inv.jobs)?
            } else {
                let window = inv.window_s.unwrap_or(1.0);
                experiments::sweep_snr2(&s, &grid, window, inv.jobs)?
            };
            for pt in &sweep.points {
                if let experiments::PointOutcome::Failed(msg) = &pt.outcome {
                    log::warn!("point {:.6e} rad/s failed: {msg}", pt.rabi);
                }
            }
            let body = match inv.format {
                OutputFormat::Csv => {
                    let mut buf = Vec::new();
                    if scheme1 {
                        experiments::write_fig5_csv(&sweep, &mut buf).expect("in-memory write");
                    } else {
                        experiments::write_fig7_csv(&sweep, &mut buf).expect("in-memory write");
                    }
                    buf
                }
                OutputFormat::Json => json_bytes(&sweep),
            };
            let stem = inv.command.replace('-', "_");
            em.emit(&format!("{stem}.{ext}"), &body)?;
            if sweep.failures() == sweep.points.len() {
                return Err(CliError::Numerical("every sweep point failed".into()));
            }
        }
        "matrix" => {
            let params = derive(&inv.config).map_err(|e| CliError::Config(e.to_string()))?;
            let kind = inv.matrix_kind.ok_or_else(|| CliError::Config("matrix without --kind".into()))?;
            let m = build_matrix(&params, kind, inv.matrix_ka, inv.n_max);
            let body = match inv.format {
                OutputFormat::Csv => matrix_csv(&m).into_bytes(),
                OutputFormat::Json => {
                    let rows: Vec<_> = matrix_entries(&m).map(|(r, c, v)| (r, c, v.re, v.im)).collect();
                    json_bytes(&rows)
                }
            };
            em.emit(&format!("matrix_{}.{ext}", matrix_kind_name(kind)), &body)?;
        }
        "check" => {
            let outcomes = run_checks();
            let mut text = String::new();
            for o in &outcomes {
                text.push_str(&o.line());
                text.push('\n');
            }
            em.emit("check.txt", text.as_bytes())?;
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            write_manifest(inv, dir, &em.outputs, start)?;
            return if failed == 0 { Ok(()) } else { Err(CliError::CheckFailed(failed)) };
        }
        other => return Err(CliError::Config(format!("unknown command `{other}`"))),
    }
    write_manifest(inv, dir, &em.outputs, start)
}

fn write_manifest(inv: &Invocation, dir: Option<&Path>, outputs: &[String], start: Instant) -> Result<(), CliError> {
    let Some(dir) = dir else { return Ok(()) };
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        invocation: inv.clone(),
        outputs: outputs.to_vec(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    let path = dir.join(format!("{}.manifest.json", inv.command.replace('-', "_")));
    fs::write(&path, json_bytes(&manifest)).map_err(io_err(&path))
}

fn two_pi_hz(w: f64) -> String {
    format!("2pi x {:.6e} Hz", w / (2.0 * std::f64::consts::PI))
}

pub fn derived_table(p: &DerivedParams) -> String {
    let rows: Vec<(&str, String)> = vec![
        ("atoms", format!("{:.6e}", p.n_atoms)),
        ("mass", format!("{:.6e} kg", p.mass)),
        ("g0", format!("{:.6e} rad/s", p.g0)),
        ("kappa", format!("{:.6e} rad/s ({})", p.kappa, two_pi_hz(p.kappa))),
        ("omega_rec", format!("{:.6e} rad/s ({})", p.omega_rec, two_pi_hz(p.omega_rec))),
        ("omega_rec_lattice", format!("{:.6e} rad/s ({})", p.omega_rec_lattice, two_pi_hz(p.omega_rec_lattice))),
        ("omega_osc", format!("{:.6e} rad/s ({})", p.omega_osc, two_pi_hz(p.omega_osc))),
        ("a_osc", format!("{:.6e} m", p.a_osc)),
        ("k_full", format!("{:.6e} 1/m", p.k_full)),
        ("k_lattice", format!("{:.6e} 1/m", p.k_lattice)),
        ("k_clock", format!("{:.6e} 1/m", p.k_clock)),
        ("eta_lattice", format!("{:.6}", p.eta_lattice)),
        ("eta_clock", format!("{:.6}", p.eta_clock)),
        ("beta_plus", format!("{:.6e} {:+.6e}i", p.beta_plus.re, p.beta_plus.im)),
        ("photons", format!("{:.6e}", p.photon_number())),
        ("delta_cavity", format!("{:.6e} rad/s", p.delta_cavity)),
        ("pump_eta", format!("{:.6e} rad/s", p.pump_eta)),
        ("clock_detuning", format!("{:.6e} rad/s", p.clock_detuning)),
        ("c0", format!("{:.6e}", p.c0)),
        ("s0", format!("{:.6e}", p.s0)),
    ];
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    rows.iter().map(|(k, v)| format!("{k:<width$}  {v}\n")).collect()
}

fn matrix_kind_name(k: MatrixKind) -> &'static str {
    match k {
        MatrixKind::Exp => "exp",
        MatrixKind::Sin => "sin",
        MatrixKind::Cos => "cos",
        MatrixKind::Z => "z",
        MatrixKind::P => "p",
    }
}

pub fn build_matrix(p: &DerivedParams, kind: MatrixKind, ka: Option<f64>, n_max: usize) -> OperatorMatrix {
    match kind {
        MatrixKind::Exp => displacement_matrix(ka.unwrap_or(p.k_clock * p.a_osc), n_max),
        MatrixKind::Sin => trig_matrices(ka.unwrap_or(2.0 * p.k_lattice * p.a_osc), n_max).0,
        MatrixKind::Cos => trig_matrices(ka.unwrap_or(2.0 * p.k_lattice * p.a_osc), n_max).1,
        MatrixKind::Z => position_matrix(p.a_osc, n_max),
        MatrixKind::P => momentum_matrix(p.a_osc, n_max),
    }
}

fn matrix_entries(m: &OperatorMatrix) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
    let d = m.dim();
    (0..d).flat_map(move |r| (0..d).map(move |c| (r, c, m.get(r, c))))
}

pub fn matrix_csv(m: &OperatorMatrix) -> String {
    let mut s = String::from("row,col,re,im\n");
    for (r, c, v) in matrix_entries(m) {
        s.push_str(&format!("{r},{c},{:.16e},{:.16e}\n", v.re, v.im));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!("[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Largest |closed form - quadrature| over n, n' <= n_max for every operator kind.
pub fn oracle_deviation(a_osc: f64, ka_values: &[f64], n_max: usize) -> f64 {
    let mut worst = 0.0f64;
    let z = position_matrix(a_osc, n_max);
    let p = momentum_matrix(a_osc, n_max);
    let p_unit = crate::params::HBAR / a_osc;
    for n in 0..=n_max {
        for m in 0..=n_max {
            let zq = quadrature_oracle(n, m, 0.0, OracleKind::Position, a_osc).expect("level within range");
            worst = worst.max((zq - z.get(n, m)).norm() / a_osc);
            let pq = quadrature_oracle(n, m, 0.0, OracleKind::Momentum, a_osc).expect("level within range");
            worst = worst.max((pq - p.get(n, m)).norm() / p_unit);
        }
    }
    for &ka in ka_values {
        let k = ka / a_osc;
        let d = displacement_matrix(ka, n_max);
        let (sin, cos) = trig_matrices(ka, n_max);
        for n in 0..=n_max {
            for m in 0..=n_max {
                for (kind, mat) in [(OracleKind::Exp, &d), (OracleKind::Sin, &sin), (OracleKind::Cos, &cos)] {
                    let q = quadrature_oracle(n, m, k, kind, a_osc).expect("level within range");
                    worst = worst.max((q - mat.get(n, m)).norm());
                }
            }
        }
    }
    worst
}

/// True when every parity-forbidden sin/cos entry is exactly zero.
pub fn parity_zeros_exact(ka_values: &[f64], n_max: usize) -> bool {
    ka_values.iter().all(|&ka| {
        let (sin, cos) = trig_matrices(ka, n_max);
        (0..=n_max).all(|n| {
            (0..=n_max).all(|m| {
                let forbidden = if (n + m) % 2 == 0 { sin.get(n, m) } else { cos.get(n, m) };
                forbidden == Complex64::new(0.0, 0.0)
            })
        })
    })
}

pub fn run_checks() -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let kas = [0.1, 0.37, 1.0];
    let a = 4.0e-8;
    let dev = oracle_deviation(a, &kas, 20);
    out.push(CheckOutcome {
        name: "oracle",
        passed: dev <= 1e-10,
        detail: format!("max deviation {dev:.3e} over n, n' <= 20, ka in {kas:?} (limit 1e-10)"),
    });
    out.push(CheckOutcome {
        name: "parity",
        passed: parity_zeros_exact(&kas, 20),
        detail: "sin/cos selection-rule zeros are exact".into(),
    });
    let mut unit_worst = 0.0f64;
    for &ka in &kas {
        for n_max in [20, 40] {
            let d = displacement_matrix(ka, n_max);
            unit_worst = unit_worst.max(d.matmul(&d.adjoint()).identity_deviation(truncation_safe_block(n_max)));
        }
    }
    out.push(CheckOutcome {
        name: "unitarity",
        passed: unit_worst <= 1e-8,
        detail: format!("max |D D^+ - 1| on the truncation-safe block {unit_worst:.3e} (limit 1e-8)"),
    });
    let herm = position_matrix(a, 20).is_exactly_hermitian() && momentum_matrix(a, 20).is_exactly_hermitian();
    out.push(CheckOutcome { name: "hermiticity", passed: herm, detail: "z and p matrices are Hermitian".into() });

    let scenario = Scenario::fig7().with_storage(StoragePolicy::Endpoints);
    let rabi = scenario.params.omega_rec;
    match scenario.run_pi_half_pulse(rabi) {
        Ok(traj) => {
            let n = scenario.params.n_atoms;
            let drift = (traj.final_state.norm() - n).abs() / n;
            out.push(CheckOutcome {
                name: "norm",
                passed: drift <= 1e-8,
                detail: format!("relative norm drift {drift:.3e} over a pi/2 pulse at omega_rec (limit 1e-8)"),
            });
            let ops = scenario.model().operators();
            let m = density_moments(&traj.final_state, ops).expect("matching dimension");
            let sum = (m.s + m.c - traj.final_state.norm()).abs() / n;
            out.push(CheckOutcome {
                name: "moments",
                passed: sum <= 1e-10,
                detail: format!("|S + C - norm| / N = {sum:.3e} after the pulse (limit 1e-10)"),
            });
        }
        Err(e) => out.push(CheckOutcome { name: "norm", passed: false, detail: format!("integration failed: {e}") }),
    }
    out
}
