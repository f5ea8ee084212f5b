//! Adaptive Dormand-Prince 5(4) integration of the mean-field equations.
//!
//! Steps are accepted under a mixed absolute/relative RMS error norm with a
//! PI step-size controller. Trajectories are sampled on a fixed time grid by
//! the fourth-order dense output of the method, and the photon-count
//! integrals are accumulated by the trapezoid rule on that grid whether or
//! not the samples themselves are kept.

use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meanfield::{observables, DensityMoments, Drive, MeanFieldModel, MeanFieldState, Observables};
use crate::params::DerivedParams;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("step size underflow at t = {t:e} s (h = {h:e} s)")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite state encountered at t = {t:e} s")]
    NonFinite { t: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t:e} s")]
    MaxSteps { t: f64, max_steps: u64 },
    #[error("empty or reversed time span [{start:e}, {end:e}]")]
    InvalidSpan { start: f64, end: f64 },
    #[error("tolerances must be positive (rel = {rel:e}, abs = {abs:e})")]
    InvalidTolerance { rel: f64, abs: f64 },
    #[error("state vector has length {got}, model expects {expected}")]
    BadState { got: usize, expected: usize },
    #[error("periodic window requires an undriven atomic sector without back-action")]
    NotPeriodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

impl Tolerances {
    pub const DEFAULT_REL: f64 = 1e-8;

    /// rel = 1e-8 and abs = 1e-10 sqrt(N) per amplitude.
    pub fn for_atoms(n_atoms: f64) -> Self {
        Self::with_rel(Self::DEFAULT_REL, n_atoms)
    }

    /// Keeps abs/rel at the default ratio of 1e-2 sqrt(N).
    pub fn with_rel(rel: f64, n_atoms: f64) -> Self {
        Self { rel, abs: rel * 1e-2 * n_atoms.sqrt() }
    }

    fn validate(&self) -> Result<(), IntegratorError> {
        if self.rel > 0.0 && self.abs > 0.0 && self.rel.is_finite() && self.abs.is_finite() {
            Ok(())
        } else {
            Err(IntegratorError::InvalidTolerance { rel: self.rel, abs: self.abs })
        }
    }
}

/// Which samples are retained in the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoragePolicy {
    All,
    Every(usize),
    Endpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub tol: Tolerances,
    /// Samples per fastest period: stride = 2 pi / (divisor max(omega_osc, Omega, kappa)).
    pub stride_divisor: f64,
    pub max_steps: u64,
    pub storage: StoragePolicy,
}

impl IntegratorSettings {
    pub const DEFAULT_STRIDE_DIVISOR: f64 = 20.0;

    pub fn new(tol: Tolerances) -> Self {
        Self { tol, stride_divisor: Self::DEFAULT_STRIDE_DIVISOR, max_steps: 50_000_000, storage: StoragePolicy::All }
    }

    pub fn for_params(params: &DerivedParams) -> Self {
        Self::new(Tolerances::for_atoms(params.n_atoms))
    }

    pub fn with_storage(mut self, storage: StoragePolicy) -> Self {
        self.storage = storage;
        self
    }

    pub fn sampling_stride(&self, params: &DerivedParams, max_rabi: f64) -> f64 {
        let fastest = params.omega_osc.max(max_rabi).max(params.kappa);
        2.0 * PI / (self.stride_divisor * fastest)
    }
}

/// Piecewise-constant clock drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveSchedule {
    /// (end time, drive) pairs in increasing order; the last drive extends indefinitely.
    segments: Vec<(f64, Drive)>,
}

impl DriveSchedule {
    pub fn constant(drive: Drive) -> Self {
        Self { segments: vec![(f64::INFINITY, drive)] }
    }

    /// `pieces` lists (end time, drive) and must be increasing in time.
    pub fn piecewise(mut pieces: Vec<(f64, Drive)>) -> Self {
        pieces.retain(|(t, _)| !t.is_nan());
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pieces.last().is_none_or(|(t, _)| t.is_finite()) {
            let tail = pieces.last().map_or(Drive::OFF, |(_, d)| *d);
            pieces.push((f64::INFINITY, tail));
        }
        Self { segments: pieces }
    }

    /// Square pulse of `rabi` on [0, duration), then dark.
    pub fn pulse(rabi: f64, detuning: f64, duration: f64) -> Self {
        Self::piecewise(vec![(duration, Drive { rabi, detuning }), (f64::INFINITY, Drive::OFF)])
    }

    pub fn drive_at(&self, t: f64) -> Drive {
        self.segments.iter().find(|(end, _)| t < *end).map_or(Drive::OFF, |(_, d)| *d)
    }

    pub fn max_rabi(&self, t0: f64, t1: f64) -> f64 {
        self.pieces_between(t0, t1).iter().map(|(_, _, d)| d.rabi).fold(0.0, f64::max)
    }

    /// Constant-drive subintervals covering [t0, t1].
    pub fn pieces_between(&self, t0: f64, t1: f64) -> Vec<(f64, f64, Drive)> {
        let mut out = Vec::new();
        let mut start = t0;
        for (end, drive) in &self.segments {
            if *end <= start {
                continue;
            }
            let stop = end.min(t1);
            if stop > start {
                out.push((start, stop, *drive));
            }
            start = stop;
            if start >= t1 {
                break;
            }
        }
        out
    }
}

/// Instantaneous output photon fluxes (photons/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhotonRates {
    /// 2 kappa Re((beta_plus + d_plus)^* d_minus)
    pub imbalance: f64,
    /// kappa (|beta_plus + d_plus|^2 + |d_minus|^2)
    pub total: f64,
    /// kappa |d_minus|^2
    pub sideband: f64,
}

pub fn photon_rates(params: &DerivedParams, d_minus: Complex64, d_plus: Complex64) -> PhotonRates {
    let pumped = params.beta_plus + d_plus;
    PhotonRates {
        imbalance: 2.0 * params.kappa * (pumped.conj() * d_minus).re,
        total: params.kappa * (pumped.norm_sqr() + d_minus.norm_sqr()),
        sideband: params.kappa * d_minus.norm_sqr(),
    }
}

/// Time integrals of the photon fluxes (photons).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Quadratures {
    pub imbalance: f64,
    pub total: f64,
    pub sideband: f64,
}

impl Quadratures {
    fn add_trapezoid(&mut self, a: &PhotonRates, b: &PhotonRates, dt: f64) {
        self.imbalance += 0.5 * (a.imbalance + b.imbalance) * dt;
        self.total += 0.5 * (a.total + b.total) * dt;
        self.sideband += 0.5 * (a.sideband + b.sideband) * dt;
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self { imbalance: self.imbalance * k, total: self.total * k, sideband: self.sideband * k }
    }

    pub fn plus(&self, o: &Self) -> Self {
        Self {
            imbalance: self.imbalance + o.imbalance,
            total: self.total + o.total,
            sideband: self.sideband + o.sideband,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: MeanFieldState,
    pub moments: DensityMoments,
    pub observables: Observables,
    pub rates: PhotonRates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Termination {
    ReachedEnd,
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: u64,
    pub rejected: u64,
    pub evaluations: u64,
}

/// Bookkeeping for a window evaluated through its periodic steady state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicExtension {
    pub period: f64,
    /// Periods integrated explicitly before the field became periodic.
    pub integrated_periods: u64,
    /// Periods accounted for by repeating the last integrated one.
    pub repeated_periods: u64,
    pub per_period: Quadratures,
    /// Relative change of the field across the last integrated period.
    pub field_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t_start: f64,
    pub t_end: f64,
    pub samples: Vec<Sample>,
    pub settings: IntegratorSettings,
    pub stride: f64,
    pub termination: Termination,
    pub quadratures: Quadratures,
    pub final_state: MeanFieldState,
    pub stats: StepStats,
    pub extension: Option<PeriodicExtension>,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,n_e,n_g,p_g,p_e,z_g,z_e,re_d_minus,im_d_minus,moment_c,moment_s,moment_s2,moment_c2")?;
        for s in &self.samples {
            let o = &s.observables;
            let m = &s.moments;
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                s.t, o.n_e, o.n_g, o.p_g, o.p_e, o.z_g, o.z_e, s.state.d_minus.re, s.state.d_minus.im, m.c, m.s, m.s2, m.c2
            )?;
        }
        Ok(())
    }
}

/// Integration failure together with everything computed before it.
#[derive(Debug, Clone, Error)]
#[error("{error}")]
pub struct IntegrationFailure {
    pub error: IntegratorError,
    pub partial: Box<Trajectory>,
}

struct Stepper {
    k: [Vec<Complex64>; 7],
    stage: Vec<Complex64>,
    y_new: Vec<Complex64>,
    cont: [Vec<Complex64>; 5],
}

impl Stepper {
    fn new(n: usize) -> Self {
        let v = || vec![ZERO; n];
        Self { k: [v(), v(), v(), v(), v(), v(), v()], stage: v(), y_new: v(), cont: [v(), v(), v(), v(), v()] }
    }

    /// One trial step from (t, y) with k[0] = f(t, y); returns the error norm.
    fn attempt<F>(&mut self, f: &mut F, t: f64, y: &[Complex64], h: f64, tol: &Tolerances) -> f64
    where
        F: FnMut(f64, &[Complex64], &mut [Complex64]),
    {
        let n = y.len();
        macro_rules! stage {
            ($dst:expr, $c:expr, [$(($a:expr, $j:expr)),*]) => {{
                for i in 0..n {
                    let mut acc = ZERO;
                    $( acc += self.k[$j][i] * $a; )*
                    self.stage[i] = y[i] + acc * h;
                }
                let (head, tail) = self.k.split_at_mut($dst);
                let _ = head;
                f(t + $c * h, &self.stage, &mut tail[0]);
            }};
        }
        stage!(1, C2, [(A21, 0)]);
        stage!(2, C3, [(A31, 0), (A32, 1)]);
        stage!(3, C4, [(A41, 0), (A42, 1), (A43, 2)]);
        stage!(4, C5, [(A51, 0), (A52, 1), (A53, 2), (A54, 3)]);
        stage!(5, 1.0, [(A61, 0), (A62, 1), (A63, 2), (A64, 3), (A65, 4)]);
        for i in 0..n {
            let k = &self.k;
            self.y_new[i] = y[i] + (k[0][i] * A71 + k[2][i] * A73 + k[3][i] * A74 + k[4][i] * A75 + k[5][i] * A76) * h;
        }
        f(t + h, &self.y_new, &mut self.k[6]);

        let mut sum = 0.0;
        for i in 0..n {
            let k = &self.k;
            let e = (k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6 + k[6][i] * E7) * h;
            let scale = tol.abs + tol.rel * y[i].norm().max(self.y_new[i].norm());
            let r = e.norm() / scale;
            sum += r * r;
        }
        (sum / n as f64).sqrt()
    }

    fn prepare_dense(&mut self, y: &[Complex64], h: f64) {
        let k = &self.k;
        for i in 0..y.len() {
            let dy = self.y_new[i] - y[i];
            let r3 = k[0][i] * h - dy;
            self.cont[0][i] = y[i];
            self.cont[1][i] = dy;
            self.cont[2][i] = r3;
            self.cont[3][i] = dy - k[6][i] * h - r3;
            self.cont[4][i] =
                (k[0][i] * D1 + k[2][i] * D3 + k[3][i] * D4 + k[4][i] * D5 + k[5][i] * D6 + k[6][i] * D7) * h;
        }
    }

    fn dense(&self, theta: f64, out: &mut [Complex64]) {
        let s = 1.0 - theta;
        for (i, o) in out.iter_mut().enumerate() {
            let c = &self.cont;
            *o = c[0][i] + (c[1][i] + (c[2][i] + (c[3][i] + c[4][i] * s) * theta) * s) * theta;
        }
    }
}

fn all_finite(v: &[Complex64]) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn initial_step(scale_rate: f64, span: f64) -> f64 {
    (0.01 / scale_rate.max(1e-300)).min(span)
}

/// Advances `y` from `t0` to `t1` under `f`, calling `on_step(t_old, h, stepper)`
/// after each accepted step (dense output is then valid on [t_old, t_old + h]).
#[allow(clippy::too_many_arguments)]
fn advance<F, G>(
    f: &mut F,
    t0: f64,
    t1: f64,
    y: &mut Vec<Complex64>,
    h: &mut f64,
    tol: &Tolerances,
    max_steps: u64,
    stats: &mut StepStats,
    stepper: &mut Stepper,
    mut on_step: G,
) -> Result<(), IntegratorError>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
    G: FnMut(f64, f64, &Stepper),
{
    let mut t = t0;
    f(t, y, &mut stepper.k[0]);
    stats.evaluations += 1;
    if !all_finite(&stepper.k[0]) {
        return Err(IntegratorError::NonFinite { t });
    }
    let mut err_old: f64 = 1e-4;
    let mut just_rejected = false;
    let mut bad_evaluations = 0;
    while t < t1 {
        if stats.accepted + stats.rejected >= max_steps {
            return Err(IntegratorError::MaxSteps { t, max_steps });
        }
        let mut step = h.min(t1 - t);
        if t + 1.01 * step >= t1 {
            step = t1 - t;
        }
        if step <= 16.0 * f64::EPSILON * t.abs().max(t1.abs()) && t + step < t1 {
            return Err(IntegratorError::StepUnderflow { t, h: step });
        }
        let err = stepper.attempt(f, t, y, step, tol);
        stats.evaluations += 6;
        if !err.is_finite() {
            bad_evaluations += 1;
            if bad_evaluations > 30 {
                return Err(IntegratorError::NonFinite { t });
            }
            stats.rejected += 1;
            *h = step * 0.1;
            just_rejected = true;
            continue;
        }
        bad_evaluations = 0;
        if err <= 1.0 {
            stepper.prepare_dense(y, step);
            on_step(t, step, stepper);
            std::mem::swap(y, &mut stepper.y_new);
            let (first, rest) = stepper.k.split_at_mut(1);
            std::mem::swap(&mut first[0], &mut rest[5]);
            t = if t + step >= t1 { t1 } else { t + step };
            stats.accepted += 1;
            let err_c = err.max(1e-10);
            let mut scale = SAFETY * err_c.powf(-(0.2 - 0.75 * BETA)) * err_old.powf(BETA);
            scale = scale.clamp(MIN_SCALE, MAX_SCALE);
            if just_rejected {
                scale = scale.min(1.0);
            }
            *h = step * scale;
            err_old = err_c;
            just_rejected = false;
        } else {
            stats.rejected += 1;
            *h = step * (SAFETY * err.powf(-0.2)).max(MIN_SCALE);
            just_rejected = true;
        }
        if *h <= 16.0 * f64::EPSILON * t.abs().max(t1.abs()) && t < t1 {
            return Err(IntegratorError::StepUnderflow { t, h: *h });
        }
    }
    Ok(())
}

struct Recorder<'a> {
    model: &'a MeanFieldModel,
    t0: f64,
    t_end: f64,
    stride: f64,
    intervals: u64,
    next: u64,
    storage: StoragePolicy,
    samples: Vec<Sample>,
    quad: Quadratures,
    last_rates: Option<(f64, PhotonRates)>,
    scratch: Vec<Complex64>,
}

impl<'a> Recorder<'a> {
    fn new(model: &'a MeanFieldModel, t0: f64, t_end: f64, stride: f64, storage: StoragePolicy) -> Self {
        let intervals = (((t_end - t0) / stride) - 1e-9).ceil().max(1.0) as u64;
        Self {
            model,
            t0,
            t_end,
            stride,
            intervals,
            next: 0,
            storage,
            samples: Vec::new(),
            quad: Quadratures::default(),
            last_rates: None,
            scratch: vec![ZERO; model.dim()],
        }
    }

    fn time_of(&self, k: u64) -> f64 {
        if k >= self.intervals {
            self.t_end
        } else {
            self.t0 + k as f64 * self.stride
        }
    }

    fn keep(&self, k: u64) -> bool {
        k == 0
            || k == self.intervals
            || match self.storage {
                StoragePolicy::All => true,
                StoragePolicy::Every(m) => k.is_multiple_of(m.max(1) as u64),
                StoragePolicy::Endpoints => false,
            }
    }

    fn record(&mut self, k: u64, t: f64, y: &[Complex64]) {
        let d_minus = self.model.effective_d_minus(y);
        let dim = self.model.n_max() + 1;
        let d_plus = y[2 * dim + 1];
        let rates = photon_rates(self.model.params(), d_minus, d_plus);
        if let Some((t_prev, prev)) = self.last_rates {
            self.quad.add_trapezoid(&prev, &rates, t - t_prev);
        }
        self.last_rates = Some((t, rates));
        if self.keep(k) {
            let mut state = MeanFieldState::from_flat(y, self.model.n_max(), t).expect("model-sized state");
            state.d_minus = d_minus;
            let moments = self.model.moments_flat(y);
            let obs = observables(&state, self.model.operators()).expect("model-sized state");
            self.samples.push(Sample { t, state, moments, observables: obs, rates });
        }
    }

    fn on_step(&mut self, t_old: f64, h: f64, stepper: &Stepper) {
        let t_new = t_old + h;
        let hits_end = (t_new - self.t_end).abs() <= 1e-12 * self.t_end.abs().max(h);
        while self.next <= self.intervals {
            let ts = self.time_of(self.next);
            if ts > t_new && !(self.next == self.intervals && hits_end) {
                break;
            }
            let theta = ((ts - t_old) / h).clamp(0.0, 1.0);
            let mut buf = std::mem::take(&mut self.scratch);
            if theta == 1.0 {
                buf.copy_from_slice(&stepper.y_new);
            } else {
                stepper.dense(theta, &mut buf);
            }
            self.record(self.next, ts, &buf);
            self.scratch = buf;
            self.next += 1;
        }
    }
}

fn finalize_state(model: &MeanFieldModel, y: &[Complex64], t: f64) -> MeanFieldState {
    let mut state = MeanFieldState::from_flat(y, model.n_max(), t).expect("model-sized state");
    state.d_minus = model.effective_d_minus(y);
    state
}

/// Integrates `state0` over `[t_start, t_end]` under `schedule`.
pub fn integrate(
    model: &MeanFieldModel,
    state0: &MeanFieldState,
    t_start: f64,
    t_end: f64,
    schedule: &DriveSchedule,
    settings: &IntegratorSettings,
) -> Result<Trajectory, IntegrationFailure> {
    let y0 = state0.to_flat();
    integrate_flat(model, y0, t_start, t_end, schedule, settings)
}

fn integrate_flat(
    model: &MeanFieldModel,
    y0: Vec<Complex64>,
    t_start: f64,
    t_end: f64,
    schedule: &DriveSchedule,
    settings: &IntegratorSettings,
) -> Result<Trajectory, IntegrationFailure> {
    let stride = settings.sampling_stride(model.params(), schedule.max_rabi(t_start, t_end));
    let initial = MeanFieldState::from_flat(&y0, model.n_max(), t_start)
        .unwrap_or_else(|_| MeanFieldState::initial(model.params().n_atoms, model.n_max()));
    let empty = |error: IntegratorError| IntegrationFailure {
        partial: Box::new(Trajectory {
            t_start,
            t_end,
            samples: Vec::new(),
            settings: *settings,
            stride,
            termination: Termination::Failed(error.to_string()),
            quadratures: Quadratures::default(),
            final_state: initial.clone(),
            stats: StepStats::default(),
            extension: None,
        }),
        error,
    };
    if y0.len() != model.dim() {
        return Err(empty(IntegratorError::BadState { got: y0.len(), expected: model.dim() }));
    }
    if !(t_end > t_start) || !t_start.is_finite() || !t_end.is_finite() {
        return Err(empty(IntegratorError::InvalidSpan { start: t_start, end: t_end }));
    }
    if let Err(e) = settings.tol.validate() {
        return Err(empty(e));
    }
    if !all_finite(&y0) {
        return Err(empty(IntegratorError::NonFinite { t: t_start }));
    }

    let mut recorder = Recorder::new(model, t_start, t_end, stride, settings.storage);
    recorder.record(0, t_start, &y0);
    recorder.next = 1;

    let mut y = y0;
    let mut stepper = Stepper::new(y.len());
    let mut stats = StepStats::default();
    let p = model.params();
    let mut h = f64::NAN;
    let mut outcome = Ok(());
    for (a, b, drive) in schedule.pieces_between(t_start, t_end) {
        if h.is_nan() {
            let rate = p.kappa.max(drive.rabi).max(p.omega_osc * model.n_max() as f64);
            h = initial_step(rate, b - a);
        }
        let mut f = |t: f64, y: &[Complex64], dy: &mut [Complex64]| model.rhs_into(t, y, drive, dy);
        outcome = advance(
            &mut f,
            a,
            b,
            &mut y,
            &mut h,
            &settings.tol,
            settings.max_steps,
            &mut stats,
            &mut stepper,
            |t, h, s| recorder.on_step(t, h, s),
        );
        if outcome.is_err() {
            break;
        }
    }
    let t_reached = recorder.last_rates.map_or(t_start, |(t, _)| t);
    let final_state = finalize_state(model, &y, if outcome.is_ok() { t_end } else { t_reached });
    let traj = Trajectory {
        t_start,
        t_end,
        samples: recorder.samples,
        settings: *settings,
        stride,
        termination: match &outcome {
            Ok(()) => Termination::ReachedEnd,
            Err(e) => Termination::Failed(e.to_string()),
        },
        quadratures: recorder.quad,
        final_state,
        stats,
        extension: None,
    };
    match outcome {
        Ok(()) => Ok(traj),
        Err(error) => Err(IntegrationFailure { error, partial: Box::new(traj) }),
    }
}

/// Final flat state after propagating from `t0` to `t1`, in either direction.
pub fn propagate(
    model: &MeanFieldModel,
    y0: &[Complex64],
    t0: f64,
    t1: f64,
    schedule: &DriveSchedule,
    tol: &Tolerances,
) -> Result<Vec<Complex64>, IntegratorError> {
    if y0.len() != model.dim() {
        return Err(IntegratorError::BadState { got: y0.len(), expected: model.dim() });
    }
    tol.validate()?;
    let mut y = y0.to_vec();
    if t0 == t1 {
        return Ok(y);
    }
    let forward = t1 > t0;
    let (lo, hi) = if forward { (t0, t1) } else { (t1, t0) };
    let mut pieces = schedule.pieces_between(lo, hi);
    if !forward {
        pieces.reverse();
    }
    let mut stepper = Stepper::new(y.len());
    let mut stats = StepStats::default();
    let p = model.params();
    let mut h = f64::NAN;
    for (a, b, drive) in pieces {
        if h.is_nan() {
            h = initial_step(p.kappa.max(drive.rabi).max(p.omega_osc * model.n_max() as f64), b - a);
        }
        if forward {
            let mut f = |t: f64, y: &[Complex64], dy: &mut [Complex64]| model.rhs_into(t, y, drive, dy);
            advance(&mut f, a, b, &mut y, &mut h, tol, u64::MAX, &mut stats, &mut stepper, |_, _, _| {})?;
        } else {
            // s = -t runs forward while t runs from b down to a
            let mut f = |s: f64, y: &[Complex64], dy: &mut [Complex64]| {
                model.rhs_into(-s, y, drive, dy);
                for v in dy.iter_mut() {
                    *v = -*v;
                }
            };
            advance(&mut f, -b, -a, &mut y, &mut h, tol, u64::MAX, &mut stats, &mut stepper, |_, _, _| {})?;
        }
    }
    Ok(y)
}

/// Undriven window of length `duration` starting from `state0`.
///
/// With the clock laser off and no back-action the atoms rotate rigidly
/// with period 2 pi / omega_osc, so only the field has a transient. Whole
/// periods are integrated (atoms restarted exactly at each boundary) until
/// the field at the boundary repeats to the integration tolerance; the
/// remaining whole periods then contribute identical integrals, and the
/// final partial period is integrated explicitly.
pub fn integrate_periodic_window(
    model: &MeanFieldModel,
    state0: &MeanFieldState,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory, IntegrationFailure> {
    let t0 = state0.t;
    let p = model.params();
    let period = p.trap_period();
    if model.options().include_atom_backaction {
        return Err(IntegrationFailure {
            error: IntegratorError::NotPeriodic,
            partial: Box::new(empty_trajectory(model, state0, duration, settings)),
        });
    }
    let off = DriveSchedule::constant(Drive::OFF);
    let whole = (duration / period).floor() as u64;
    let remainder = duration - whole as f64 * period;
    let dim_atoms = 2 * (model.n_max() + 1);
    let atoms0: Vec<Complex64> = state0.to_flat()[..dim_atoms].to_vec();

    let mut samples = Vec::new();
    let mut stats = StepStats::default();
    let mut total = Quadratures::default();
    let mut y = state0.to_flat();
    let mut integrated = 0u64;
    let mut previous: Option<Quadratures> = None;
    let mut mismatch = f64::INFINITY;
    let mut per_period = Quadratures::default();
    let mut t = t0;
    let fold = |traj: &Trajectory, stats: &mut StepStats| {
        stats.accepted += traj.stats.accepted;
        stats.rejected += traj.stats.rejected;
        stats.evaluations += traj.stats.evaluations;
    };
    let field_scale = settings.tol.abs;
    while integrated < whole {
        let seg = integrate_flat(model, y.clone(), t, t + period, &off, settings)?;
        fold(&seg, &mut stats);
        let before: Vec<Complex64> = y[dim_atoms..].to_vec();
        let mut after = seg.final_state.to_flat();
        after[..dim_atoms].copy_from_slice(&atoms0);
        mismatch = before
            .iter()
            .zip(&after[dim_atoms..])
            .map(|(a, b)| (a - b).norm() / (field_scale + settings.tol.rel * a.norm().max(b.norm())))
            .fold(0.0, f64::max);
        let q = seg.quadratures;
        total = total.plus(&q);
        let steady_integrals = previous.is_some_and(|prev: Quadratures| {
            let close = |a: f64, b: f64, s: f64| (a - b).abs() <= 10.0 * settings.tol.rel * s.max(1e-300);
            close(prev.sideband, q.sideband, q.sideband.abs())
                && close(prev.total, q.total, q.total.abs())
                && close(prev.imbalance, q.imbalance, q.total.abs().sqrt() + q.imbalance.abs())
        });
        append_samples(&mut samples, seg.samples);
        per_period = q;
        previous = Some(q);
        t += period;
        integrated += 1;
        y = after;
        if mismatch <= 1.0 && steady_integrals {
            break;
        }
    }
    let repeated = whole - integrated;
    total = total.plus(&per_period.scaled(repeated as f64));
    let t_resume = t0 + whole as f64 * period;
    let mut final_state = MeanFieldState::from_flat(&y, model.n_max(), t_resume).expect("model-sized");
    if remainder > 1e-9 * period {
        let seg = integrate_flat(model, y.clone(), t_resume, t0 + duration, &off, settings)?;
        fold(&seg, &mut stats);
        total = total.plus(&seg.quadratures);
        append_samples(&mut samples, seg.samples);
        final_state = seg.final_state;
    } else if let Some(last) = samples.last_mut() {
        last.t = t0 + duration;
        final_state.t = t0 + duration;
    }
    Ok(Trajectory {
        t_start: t0,
        t_end: t0 + duration,
        samples,
        settings: *settings,
        stride: settings.sampling_stride(p, 0.0),
        termination: Termination::ReachedEnd,
        quadratures: total,
        final_state,
        stats,
        extension: Some(PeriodicExtension {
            period,
            integrated_periods: integrated,
            repeated_periods: repeated,
            per_period,
            field_mismatch: mismatch,
        }),
    })
}

fn append_samples(into: &mut Vec<Sample>, more: Vec<Sample>) {
    for s in more {
        if into.last().is_none_or(|last| s.t > last.t) {
            into.push(s);
        }
    }
}

fn empty_trajectory(
    model: &MeanFieldModel,
    state0: &MeanFieldState,
    duration: f64,
    settings: &IntegratorSettings,
) -> Trajectory {
    Trajectory {
        t_start: state0.t,
        t_end: state0.t + duration,
        samples: Vec::new(),
        settings: *settings,
        stride: settings.sampling_stride(model.params(), 0.0),
        termination: Termination::Failed(IntegratorError::NotPeriodic.to_string()),
        quadratures: Quadratures::default(),
        final_state: state0.clone(),
        stats: StepStats::default(),
        extension: None,
    }
}
