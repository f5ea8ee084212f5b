//! Pulse, detection-window and sweep scenarios built on the integrator.

use std::io::{self, Write};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{self, DetectionError, RecoilConvention, SnrReport};
use crate::integrator::{
    integrate, integrate_periodic_window, DriveSchedule, IntegrationFailure, IntegratorError, IntegratorSettings,
    StoragePolicy, Tolerances, Trajectory,
};
use crate::meanfield::{Drive, MeanFieldModel, ModelOptions};
use crate::params::{derive, pi_half_duration, DerivedParams, ParamsError, PhysicalConfig, HBAR};

pub const DEFAULT_N_MAX: usize = 20;
pub const DEFAULT_POINTS_PER_DECADE: usize = 40;
/// Post-pulse free evolution shown in the phase-space trace, in trap periods.
pub const PHASE_SPACE_POST_PERIODS: f64 = 3.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("Rabi frequency must be positive and finite (got {0})")]
    InvalidRabi(f64),
    #[error("detection window must be positive and finite (got {0})")]
    InvalidWindow(f64),
    #[error("invalid sweep grid: {0}")]
    InvalidGrid(String),
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

impl From<IntegrationFailure> for ExperimentError {
    fn from(f: IntegrationFailure) -> Self {
        ExperimentError::Integrator(f.error)
    }
}

/// A configured model together with numerical settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: PhysicalConfig,
    pub params: DerivedParams,
    pub settings: IntegratorSettings,
    model: MeanFieldModel,
}

impl Scenario {
    pub fn new(config: PhysicalConfig) -> Result<Self, ExperimentError> {
        Self::with_options(config, DEFAULT_N_MAX, ModelOptions::default())
    }

    pub fn with_options(config: PhysicalConfig, n_max: usize, opts: ModelOptions) -> Result<Self, ExperimentError> {
        let params = derive(&config)?;
        let settings = IntegratorSettings::for_params(&params).with_storage(StoragePolicy::All);
        let model = MeanFieldModel::new(&params, n_max, opts);
        Ok(Self { config, params, settings, model })
    }

    pub fn fig5() -> Self {
        Self::new(PhysicalConfig::fig5_preset()).expect("preset is valid")
    }

    pub fn fig7() -> Self {
        Self::new(PhysicalConfig::fig7_preset()).expect("preset is valid")
    }

    pub fn model(&self) -> &MeanFieldModel {
        &self.model
    }

    pub fn n_max(&self) -> usize {
        self.model.n_max()
    }

    pub fn with_n_max(&self, n_max: usize) -> Self {
        let model = MeanFieldModel::new(&self.params, n_max, self.model.options());
        Self { model, ..self.clone() }
    }

    pub fn with_model_options(&self, opts: ModelOptions) -> Self {
        let model = MeanFieldModel::new(&self.params, self.n_max(), opts);
        Self { model, ..self.clone() }
    }

    pub fn with_tol_rel(&self, rel: f64) -> Self {
        let mut s = self.clone();
        s.settings.tol = Tolerances::with_rel(rel, self.params.n_atoms);
        s
    }

    pub fn with_stride_divisor(&self, divisor: f64) -> Self {
        let mut s = self.clone();
        s.settings.stride_divisor = divisor;
        s
    }

    pub fn with_storage(&self, storage: StoragePolicy) -> Self {
        let mut s = self.clone();
        s.settings.storage = storage;
        s
    }

    /// pi/2 pulse at `rabi` from all atoms in |g, 0>.
    pub fn run_pi_half_pulse(&self, rabi: f64) -> Result<Trajectory, ExperimentError> {
        check_rabi(rabi)?;
        let duration = pi_half_duration(rabi);
        let drive = Drive { rabi, detuning: self.params.clock_detuning };
        let state0 = self.model.initial_state();
        Ok(integrate(&self.model, &state0, 0.0, duration, &DriveSchedule::constant(drive), &self.settings)?)
    }

    /// Undriven evolution of length `window` starting where `pulse` ended.
    pub fn run_detection_window(&self, pulse: &Trajectory, window: f64) -> Result<Trajectory, ExperimentError> {
        if !(window > 0.0 && window.is_finite()) {
            return Err(ExperimentError::InvalidWindow(window));
        }
        let start = &pulse.final_state;
        if self.model.options().include_atom_backaction {
            let t0 = start.t;
            let off = DriveSchedule::constant(Drive::OFF);
            return Ok(integrate(&self.model, start, t0, t0 + window, &off, &self.settings)?);
        }
        Ok(integrate_periodic_window(&self.model, start, window, &self.settings)?)
    }

    pub fn snr1_point(&self, rabi: f64) -> Result<SnrReport, ExperimentError> {
        let traj = self.with_storage(StoragePolicy::Endpoints).run_pi_half_pulse(rabi)?;
        let report = detection::snr1(&traj, rabi)?;
        Ok(report.with_comparison(
            "snr1_adiabatic",
            detection::snr1_adiabatic(&self.params, rabi, RecoilConvention::ProjectedLattice),
        ))
    }

    pub fn snr2_point(&self, rabi: f64, window: f64) -> Result<SnrReport, ExperimentError> {
        let quiet = self.with_storage(StoragePolicy::Endpoints);
        let pulse = quiet.run_pi_half_pulse(rabi)?;
        let det = quiet.run_detection_window(&pulse, window)?;
        let report = detection::snr2(&det, window, rabi)?;
        Ok(report.with_comparison(
            "snr2_adiabatic",
            detection::snr2_adiabatic(&self.params, rabi, window, self.params.delta_cavity),
        ))
    }
}

fn check_rabi(rabi: f64) -> Result<(), ExperimentError> {
    if rabi > 0.0 && rabi.is_finite() {
        Ok(())
    } else {
        Err(ExperimentError::InvalidRabi(rabi))
    }
}

pub fn run_pi_half_pulse(config: &PhysicalConfig, rabi: f64) -> Result<Trajectory, ExperimentError> {
    Scenario::new(config.clone())?.run_pi_half_pulse(rabi)
}

pub fn run_detection_window(config: &PhysicalConfig, rabi: f64, window: f64) -> Result<Trajectory, ExperimentError> {
    let scenario = Scenario::new(config.clone())?;
    let pulse = scenario.run_pi_half_pulse(rabi)?;
    scenario.run_detection_window(&pulse, window)
}

/// `per_decade` log-spaced points from `lo` to `hi`, both included.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    if !(lo > 0.0 && hi > lo) {
        return vec![lo];
    }
    let decades = (hi / lo).log10();
    let n = ((decades * per_decade as f64).round() as usize).max(1);
    (0..=n).map(|i| lo * 10f64.powf(decades * i as f64 / n as f64)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyticValue {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PointOutcome {
    Ok(SnrReport),
    Failed(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub rabi: f64,
    pub outcome: PointOutcome,
    pub analytic: Vec<AnalyticValue>,
    pub wall_seconds: f64,
}

impl SweepPoint {
    pub fn value(&self) -> Option<f64> {
        match &self.outcome {
            PointOutcome::Ok(r) => Some(r.value),
            PointOutcome::Failed(_) => None,
        }
    }

    pub fn analytic_value(&self, label: &str) -> Option<f64> {
        self.analytic.iter().find(|a| a.label == label).map(|a| a.value)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub parameter: String,
    pub scheme: detection::Scheme,
    pub grid: Vec<f64>,
    pub window: Option<f64>,
    pub points: Vec<SweepPoint>,
    pub config: PhysicalConfig,
    pub params: DerivedParams,
}

impl SweepResult {
    pub fn values(&self) -> Vec<Option<f64>> {
        self.points.iter().map(SweepPoint::value).collect()
    }

    /// Largest numeric value and its grid index.
    pub fn maximum(&self) -> Option<(usize, f64)> {
        self.values().iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v))).max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.value().is_none()).count()
    }
}

fn validate_grid(params: &DerivedParams, grid: &[f64]) -> Result<(), ExperimentError> {
    if grid.is_empty() {
        return Err(ExperimentError::InvalidGrid("grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ExperimentError::InvalidGrid("grid must be strictly increasing".into()));
    }
    let lo = 1e-3 * params.omega_rec;
    let hi = 1e2 * params.omega_osc;
    let slack = 1e-9;
    if grid[0] < lo * (1.0 - slack) || grid[grid.len() - 1] > hi * (1.0 + slack) {
        return Err(ExperimentError::InvalidGrid(format!(
            "grid spans [{:.4e}, {:.4e}] rad/s, outside the supported [{lo:.4e}, {hi:.4e}]",
            grid[0],
            grid[grid.len() - 1]
        )));
    }
    Ok(())
}

fn run_pool<T: Send>(jobs: Option<usize>, work: impl FnOnce() -> T + Send) -> Result<T, ExperimentError> {
    match jobs {
        None => Ok(work()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| ExperimentError::Pool(e.to_string()))?;
            Ok(pool.install(work))
        }
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

/// Scheme-1 SNR over a grid of Rabi frequencies (rad/s).
pub fn sweep_snr1(scenario: &Scenario, grid: &[f64], jobs: Option<usize>) -> Result<SweepResult, ExperimentError> {
    validate_grid(&scenario.params, grid)?;
    let p = &scenario.params;
    let points = run_pool(jobs, || {
        grid.par_iter()
            .map(|&rabi| {
                let (result, wall) = timed(|| scenario.snr1_point(rabi));
                SweepPoint {
                    rabi,
                    outcome: match result {
                        Ok(r) => PointOutcome::Ok(r),
                        Err(e) => PointOutcome::Failed(e.to_string()),
                    },
                    analytic: vec![
                        AnalyticValue {
                            label: "snr1_adiabatic".into(),
                            value: detection::snr1_adiabatic(p, rabi, RecoilConvention::ProjectedLattice),
                        },
                        AnalyticValue {
                            label: "snr1_adiabatic_full_recoil".into(),
                            value: detection::snr1_adiabatic(p, rabi, RecoilConvention::FullWavevector),
                        },
                    ],
                    wall_seconds: wall,
                }
            })
            .collect::<Vec<_>>()
    })?;
    Ok(SweepResult {
        parameter: "rabi_rad_s".into(),
        scheme: detection::Scheme::Imbalance,
        grid: grid.to_vec(),
        window: None,
        points,
        config: scenario.config.clone(),
        params: p.clone(),
    })
}

/// Scheme-2 SNR over a grid of Rabi frequencies (rad/s) for window `window` (s).
pub fn sweep_snr2(
    scenario: &Scenario,
    grid: &[f64],
    window: f64,
    jobs: Option<usize>,
) -> Result<SweepResult, ExperimentError> {
    validate_grid(&scenario.params, grid)?;
    if !(window > 0.0 && window.is_finite()) {
        return Err(ExperimentError::InvalidWindow(window));
    }
    let p = &scenario.params;
    let delta = p.delta_cavity;
    let points = run_pool(jobs, || {
        grid.par_iter()
            .map(|&rabi| {
                let (result, wall) = timed(|| scenario.snr2_point(rabi, window));
                SweepPoint {
                    rabi,
                    outcome: match result {
                        Ok(r) => PointOutcome::Ok(r),
                        Err(e) => PointOutcome::Failed(e.to_string()),
                    },
                    analytic: vec![
                        AnalyticValue {
                            label: "snr2_adiabatic".into(),
                            value: detection::snr2_adiabatic(p, rabi, window, delta),
                        },
                        AnalyticValue { label: "snr2_max".into(), value: detection::snr2_max(p, window, delta) },
                    ],
                    wall_seconds: wall,
                }
            })
            .collect::<Vec<_>>()
    })?;
    Ok(SweepResult {
        parameter: "rabi_rad_s".into(),
        scheme: detection::Scheme::Sideband,
        grid: grid.to_vec(),
        window: Some(window),
        points,
        config: scenario.config.clone(),
        params: p.clone(),
    })
}

pub fn default_snr1_grid(params: &DerivedParams) -> Vec<f64> {
    log_grid(1e-2 * params.omega_rec, 10.0 * params.omega_rec, DEFAULT_POINTS_PER_DECADE)
}

pub fn default_snr2_grid(params: &DerivedParams) -> Vec<f64> {
    log_grid(1e-2 * params.omega_rec, 1e2 * params.omega_rec, DEFAULT_POINTS_PER_DECADE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceRow {
    pub t: f64,
    pub z_g: f64,
    pub p_g: f64,
    pub z_e: f64,
    pub p_e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceDiagnostics {
    /// max |p| during the pulse (kg m/s per atom).
    pub pulse_envelope_g: f64,
    pub pulse_envelope_e: f64,
    /// max |p| after the pulse.
    pub post_envelope_g: f64,
    pub post_envelope_e: f64,
    /// Half peak-to-peak of p after the pulse.
    pub post_amplitude_g: f64,
    pub post_amplitude_e: f64,
    /// arg of the trap-frequency component of p_e minus that of p_g during the pulse, in (-pi, pi].
    pub pulse_relative_phase: f64,
    /// Pulse samples where both |p| exceed 1e-3 of their pulse maxima.
    pub sign_checked: usize,
    /// Of those, samples where p_g and p_e share a sign.
    pub sign_violations: usize,
    /// Largest min(|p_g|/max_g, |p_e|/max_e) over the violating samples.
    pub worst_violation: f64,
    /// |(z, p)| of the ground state after one post-pulse period relative to the start of that period.
    pub ellipse_closure: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseSpaceTrace {
    pub rabi: f64,
    pub pulse_end: f64,
    pub omega_osc: f64,
    pub a_osc: f64,
    pub rows: Vec<PhaseSpaceRow>,
    pub diagnostics: PhaseSpaceDiagnostics,
}

impl PhaseSpaceTrace {
    pub const CSV_HEADER: &'static str = "t_periods,z_g_over_a,p_g_a_over_hbar,z_e_over_a,p_e_a_over_hbar";

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        let periods = self.omega_osc / (2.0 * std::f64::consts::PI);
        let a = self.a_osc;
        let p_unit = HBAR / a;
        for r in &self.rows {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t * periods,
                r.z_g / a,
                r.p_g / p_unit,
                r.z_e / a,
                r.p_e / p_unit
            )?;
        }
        Ok(())
    }
}

/// Envelope and sign statistics of (z, p) for a pulse followed by free evolution.
pub fn phase_space_trace(scenario: &Scenario, rabi: f64) -> Result<PhaseSpaceTrace, ExperimentError> {
    check_rabi(rabi)?;
    let p = &scenario.params;
    let pulse_end = pi_half_duration(rabi);
    let period = p.trap_period();
    let t_end = pulse_end + PHASE_SPACE_POST_PERIODS * period;
    let schedule = DriveSchedule::pulse(rabi, p.clock_detuning, pulse_end);
    let model = scenario.model();
    let settings = scenario.settings.with_storage(StoragePolicy::All);
    let traj = integrate(model, &model.initial_state(), 0.0, t_end, &schedule, &settings)?;
    let rows: Vec<PhaseSpaceRow> = traj
        .samples
        .iter()
        .map(|s| PhaseSpaceRow {
            t: s.t,
            z_g: s.observables.z_g,
            p_g: s.observables.p_g,
            z_e: s.observables.z_e,
            p_e: s.observables.p_e,
        })
        .collect();
    let diagnostics = diagnose(&rows, pulse_end, period, p);
    Ok(PhaseSpaceTrace { rabi, pulse_end, omega_osc: p.omega_osc, a_osc: p.a_osc, rows, diagnostics })
}

fn diagnose(rows: &[PhaseSpaceRow], pulse_end: f64, period: f64, p: &DerivedParams) -> PhaseSpaceDiagnostics {
    let during: Vec<&PhaseSpaceRow> = rows.iter().filter(|r| r.t <= pulse_end).collect();
    let after: Vec<&PhaseSpaceRow> = rows.iter().filter(|r| r.t > pulse_end).collect();
    let max_abs = |v: &[&PhaseSpaceRow], f: fn(&PhaseSpaceRow) -> f64| v.iter().map(|r| f(r).abs()).fold(0.0, f64::max);
    let pulse_g = max_abs(&during, |r| r.p_g);
    let pulse_e = max_abs(&during, |r| r.p_e);
    let mut checked = 0;
    let mut violations = 0;
    let mut worst = 0.0f64;
    for r in &during {
        let (g, e) = (r.p_g.abs() / pulse_g, r.p_e.abs() / pulse_e);
        if g > 1e-3 && e > 1e-3 {
            checked += 1;
            if r.p_g.signum() == r.p_e.signum() {
                violations += 1;
                worst = worst.max(g.min(e));
            }
        }
    }
    let closure = {
        let first = after.first();
        let target = first.map(|r| r.t + period);
        match (first, target.and_then(|t| after.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs())))) {
            (Some(a), Some(b)) => {
                let dz = (b.z_g - a.z_g) / p.a_osc;
                let dp = (b.p_g - a.p_g) * p.a_osc / HBAR;
                let scale = (a.z_g / p.a_osc).hypot(a.p_g * p.a_osc / HBAR).max(1e-300);
                dz.hypot(dp) / scale
            }
            _ => f64::NAN,
        }
    };
    PhaseSpaceDiagnostics {
        pulse_envelope_g: pulse_g,
        pulse_envelope_e: pulse_e,
        post_envelope_g: max_abs(&after, |r| r.p_g),
        post_envelope_e: max_abs(&after, |r| r.p_e),
        sign_checked: checked,
        sign_violations: violations,
        worst_violation: worst,
        ellipse_closure: closure,
        post_amplitude_g: half_peak_to_peak(after.iter().map(|r| r.p_g)),
        post_amplitude_e: half_peak_to_peak(after.iter().map(|r| r.p_e)),
        pulse_relative_phase: {
            let w = p.omega_osc;
            let component = |f: fn(&PhaseSpaceRow) -> f64| {
                during.iter().fold(Complex64::new(0.0, 0.0), |acc, r| acc + Complex64::from_polar(f(r), -w * r.t))
            };
            (component(|r| r.p_e) / component(|r| r.p_g)).arg()
        },
    }
}

pub fn half_peak_to_peak(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo.is_finite() {
        0.5 * (hi - lo)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostPulseMotion {
    /// max |p| after the pulse.
    pub envelope_g: f64,
    pub envelope_e: f64,
    /// Half peak-to-peak of p after the pulse.
    pub amplitude_g: f64,
    pub amplitude_e: f64,
}

/// Momentum envelopes and oscillation amplitudes over `periods` trap periods after a pulse at `rabi`.
pub fn post_pulse_motion(scenario: &Scenario, rabi: f64, periods: f64) -> Result<PostPulseMotion, ExperimentError> {
    check_rabi(rabi)?;
    let p = &scenario.params;
    let pulse_end = pi_half_duration(rabi);
    let schedule = DriveSchedule::pulse(rabi, p.clock_detuning, pulse_end);
    let model = scenario.model();
    let settings = scenario.settings.with_storage(StoragePolicy::All);
    let traj =
        integrate(model, &model.initial_state(), 0.0, pulse_end + periods * p.trap_period(), &schedule, &settings)?;
    let post: Vec<_> = traj.samples.iter().filter(|s| s.t > pulse_end).map(|s| s.observables).collect();
    let envelope = |f: fn(&crate::meanfield::Observables) -> f64| post.iter().map(|o| f(o).abs()).fold(0.0, f64::max);
    Ok(PostPulseMotion {
        envelope_g: envelope(|o| o.p_g),
        envelope_e: envelope(|o| o.p_e),
        amplitude_g: half_peak_to_peak(post.iter().map(|o| o.p_g)),
        amplitude_e: half_peak_to_peak(post.iter().map(|o| o.p_e)),
    })
}

pub fn write_fig5_csv<W: Write>(sweep: &SweepResult, mut w: W) -> io::Result<()> {
    writeln!(w, "omega_over_rec,snr1_numeric,snr1_adiabatic")?;
    let rec = sweep.params.omega_rec;
    for pt in &sweep.points {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e}",
            pt.rabi / rec,
            pt.value().unwrap_or(f64::NAN),
            pt.analytic_value("snr1_adiabatic").unwrap_or(f64::NAN)
        )?;
    }
    Ok(())
}

pub fn write_fig7_csv<W: Write>(sweep: &SweepResult, mut w: W) -> io::Result<()> {
    writeln!(w, "omega_over_rec,snr2_numeric,snr2_adiabatic,snr2_max")?;
    let rec = sweep.params.omega_rec;
    for pt in &sweep.points {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            pt.rabi / rec,
            pt.value().unwrap_or(f64::NAN),
            pt.analytic_value("snr2_adiabatic").unwrap_or(f64::NAN),
            pt.analytic_value("snr2_max").unwrap_or(f64::NAN)
        )?;
    }
    Ok(())
}
