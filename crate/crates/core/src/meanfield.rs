//! Mean-field state, density moments and the equations of motion.
//!
//! The flat state vector used by the integrator is laid out as
//! `[c_g(0..=n_max), c_e(0..=n_max), d_minus, d_plus]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oscillator::OperatorSet;
use crate::params::DerivedParams;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Per-atom observables are reported as 0 below this fraction of N.
pub const EMPTY_STATE_FRACTION: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MeanFieldError {
    #[error("state has {state} vibrational levels but the operator set has {operators}")]
    DimensionMismatch { state: usize, operators: usize },
    #[error("flat vector of length {got} does not match n_max = {n_max} (expected {expected})")]
    BadLength { got: usize, n_max: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub c_g: Vec<Complex64>,
    pub c_e: Vec<Complex64>,
    pub d_minus: Complex64,
    pub d_plus: Complex64,
    pub t: f64,
}

impl MeanFieldState {
    /// Every atom in |g, n = 0>, cavity sideband modes empty.
    pub fn initial(n_atoms: f64, n_max: usize) -> Self {
        let mut c_g = vec![Complex64::new(0.0, 0.0); n_max + 1];
        c_g[0] = Complex64::new(n_atoms.sqrt(), 0.0);
        Self {
            c_g,
            c_e: vec![Complex64::new(0.0, 0.0); n_max + 1],
            d_minus: Complex64::new(0.0, 0.0),
            d_plus: Complex64::new(0.0, 0.0),
            t: 0.0,
        }
    }

    pub fn n_max(&self) -> usize {
        self.c_g.len() - 1
    }

    pub fn flat_len(n_max: usize) -> usize {
        2 * (n_max + 1) + 2
    }

    pub fn to_flat(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(Self::flat_len(self.n_max()));
        out.extend_from_slice(&self.c_g);
        out.extend_from_slice(&self.c_e);
        out.push(self.d_minus);
        out.push(self.d_plus);
        out
    }

    pub fn from_flat(y: &[Complex64], n_max: usize, t: f64) -> Result<Self, MeanFieldError> {
        let expected = Self::flat_len(n_max);
        if y.len() != expected {
            return Err(MeanFieldError::BadLength { got: y.len(), n_max, expected });
        }
        let dim = n_max + 1;
        Ok(Self {
            c_g: y[..dim].to_vec(),
            c_e: y[dim..2 * dim].to_vec(),
            d_minus: y[2 * dim],
            d_plus: y[2 * dim + 1],
            t,
        })
    }

    /// Sum of |c|^2 over both internal states and all levels, in atoms.
    pub fn norm(&self) -> f64 {
        self.c_g.iter().chain(&self.c_e).map(|c| c.norm_sqr()).sum()
    }

    /// Population outside n = 0 relative to the total.
    pub fn excited_vibrational_fraction(&self) -> f64 {
        let total = self.norm();
        if total == 0.0 {
            return 0.0;
        }
        let ground = self.c_g[0].norm_sqr() + self.c_e[0].norm_sqr();
        (total - ground) / total
    }

    /// Same state with every amplitude multiplied by `phase`.
    pub fn rotated(&self, phase: Complex64) -> Self {
        Self {
            c_g: self.c_g.iter().map(|c| c * phase).collect(),
            c_e: self.c_e.iter().map(|c| c * phase).collect(),
            d_minus: self.d_minus * phase,
            d_plus: self.d_plus * phase,
            t: self.t,
        }
    }
}

/// Overlaps of the atomic density with the four lattice harmonics, in atoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityMoments {
    /// cos^2(k_L z)
    pub c: f64,
    /// sin^2(k_L z)
    pub s: f64,
    /// sin(2 k_L z)
    pub s2: f64,
    /// cos(2 k_L z)
    pub c2: f64,
}

/// Which terms of the equations of motion are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub neglect_d_plus: bool,
    pub include_atom_backaction: bool,
    pub include_c2_drift: bool,
    pub field_mode: FieldMode,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            neglect_d_plus: true,
            include_atom_backaction: false,
            include_c2_drift: false,
            field_mode: FieldMode::Dynamic,
        }
    }
}

/// Treatment of the sideband field amplitude d_minus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldMode {
    /// Integrated with its own equation of motion.
    #[default]
    Dynamic,
    /// Set to the instantaneous steady state of its equation; needs kappa >> Omega, omega_osc.
    QuasiAdiabatic,
    /// Held at zero: atoms evolve in the static lattice only.
    Disabled,
}

/// Clock laser parameters for one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drive {
    /// Rabi frequency Omega (rad/s), >= 0.
    pub rabi: f64,
    /// Laser detuning delta (rad/s).
    pub detuning: f64,
}

impl Drive {
    pub const OFF: Drive = Drive { rabi: 0.0, detuning: 0.0 };

    pub fn resonant(rabi: f64) -> Self {
        Self { rabi, detuning: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub n_g: f64,
    pub n_e: f64,
    /// Position per atom (m).
    pub z_g: f64,
    pub z_e: f64,
    /// Momentum per atom (kg m/s).
    pub p_g: f64,
    pub p_e: f64,
}

fn check_dims(state: &MeanFieldState, ops: &OperatorSet) -> Result<(), MeanFieldError> {
    let operators = ops.n_max() + 1;
    if state.c_g.len() != operators || state.c_e.len() != operators {
        return Err(MeanFieldError::DimensionMismatch { state: state.c_g.len(), operators });
    }
    Ok(())
}

/// v^T M v* for a real symmetric M stored row-major.
fn real_form(m: &[f64], v: &[Complex64]) -> f64 {
    let dim = v.len();
    let mut acc = 0.0;
    for (r, vr) in v.iter().enumerate() {
        let row = &m[r * dim..(r + 1) * dim];
        let mut mv = Complex64::new(0.0, 0.0);
        for (w, vc) in row.iter().zip(v) {
            mv += vc * *w;
        }
        acc += (vr.conj() * mv).re;
    }
    acc
}

fn moments_from(c_g: &[Complex64], c_e: &[Complex64], sin2: &[f64], cos2: &[f64]) -> DensityMoments {
    let total: f64 = c_g.iter().chain(c_e).map(|c| c.norm_sqr()).sum();
    let s2 = real_form(sin2, c_g) + real_form(sin2, c_e);
    let c2 = real_form(cos2, c_g) + real_form(cos2, c_e);
    DensityMoments { c: 0.5 * (total + c2), s: 0.5 * (total - c2), s2, c2 }
}

pub fn density_moments(state: &MeanFieldState, ops: &OperatorSet) -> Result<DensityMoments, MeanFieldError> {
    check_dims(state, ops)?;
    Ok(moments_from(&state.c_g, &state.c_e, &ops.sin2.real_entries(), &ops.cos2.real_entries()))
}

pub fn observables(state: &MeanFieldState, ops: &OperatorSet) -> Result<Observables, MeanFieldError> {
    check_dims(state, ops)?;
    let n_g: f64 = state.c_g.iter().map(|c| c.norm_sqr()).sum();
    let n_e: f64 = state.c_e.iter().map(|c| c.norm_sqr()).sum();
    let floor = EMPTY_STATE_FRACTION * (n_g + n_e);
    let per_atom = |pop: f64, v: &[Complex64], m: &crate::oscillator::OperatorMatrix| {
        if pop < floor || pop == 0.0 {
            0.0
        } else {
            m.expectation(v).re / pop
        }
    };
    Ok(Observables {
        n_g,
        n_e,
        z_g: per_atom(n_g, &state.c_g, &ops.position),
        z_e: per_atom(n_e, &state.c_e, &ops.position),
        p_g: per_atom(n_g, &state.c_g, &ops.momentum),
        p_e: per_atom(n_e, &state.c_e, &ops.momentum),
    })
}

/// The equations of motion for one parameter set and truncation.
#[derive(Debug, Clone)]
pub struct MeanFieldModel {
    params: DerivedParams,
    opts: ModelOptions,
    ops: OperatorSet,
    sin2: Vec<f64>,
    cos2: Vec<f64>,
    c2_initial: f64,
}

impl MeanFieldModel {
    pub fn new(params: &DerivedParams, n_max: usize, opts: ModelOptions) -> Self {
        let ops = OperatorSet::new(params, n_max);
        let sin2 = ops.sin2.real_entries();
        let cos2 = ops.cos2.real_entries();
        let c2_initial = ops.cos2.get(0, 0).re * params.n_atoms;
        Self { params: params.clone(), opts, ops, sin2, cos2, c2_initial }
    }

    pub fn params(&self) -> &DerivedParams {
        &self.params
    }

    pub fn options(&self) -> ModelOptions {
        self.opts
    }

    pub fn operators(&self) -> &OperatorSet {
        &self.ops
    }

    pub fn n_max(&self) -> usize {
        self.ops.n_max()
    }

    pub fn dim(&self) -> usize {
        MeanFieldState::flat_len(self.n_max())
    }

    pub fn initial_state(&self) -> MeanFieldState {
        MeanFieldState::initial(self.params.n_atoms, self.n_max())
    }

    pub fn moments_flat(&self, y: &[Complex64]) -> DensityMoments {
        let dim = self.n_max() + 1;
        moments_from(&y[..dim], &y[dim..2 * dim], &self.sin2, &self.cos2)
    }

    /// Steady state of the d_minus equation at fixed moments and d_plus.
    pub fn slaved_d_minus(&self, m: &DensityMoments, d_plus: Complex64) -> Complex64 {
        let p = &self.params;
        let detuning = p.delta_cavity - 2.0 * p.g0 * m.s;
        -(p.beta_plus + d_plus) * (p.g0 * m.s2) / Complex64::new(0.5 * p.kappa, -detuning)
    }

    /// Overwrites the field slots of `y` when they are not dynamical.
    pub fn project(&self, y: &mut [Complex64]) {
        let dim = self.n_max() + 1;
        if self.opts.neglect_d_plus {
            y[2 * dim + 1] = Complex64::new(0.0, 0.0);
        }
        match self.opts.field_mode {
            FieldMode::Dynamic => {}
            FieldMode::Disabled => y[2 * dim] = Complex64::new(0.0, 0.0),
            FieldMode::QuasiAdiabatic => {
                let m = self.moments_flat(y);
                y[2 * dim] = self.slaved_d_minus(&m, y[2 * dim + 1]);
            }
        }
    }

    /// dy/dt at time `t` for the flat state `y`.
    pub fn rhs_into(&self, t: f64, y: &[Complex64], drive: Drive, dy: &mut [Complex64]) {
        let p = &self.params;
        let dim = self.n_max() + 1;
        let (c_g, rest) = y.split_at(dim);
        let (c_e, fields) = rest.split_at(dim);
        let d_plus = if self.opts.neglect_d_plus { Complex64::new(0.0, 0.0) } else { fields[1] };
        let m = self.moments_flat(y);
        let d_minus = match self.opts.field_mode {
            FieldMode::Dynamic => fields[0],
            FieldMode::Disabled => Complex64::new(0.0, 0.0),
            FieldMode::QuasiAdiabatic => self.slaved_d_minus(&m, d_plus),
        };

        let (dg, rest) = dy.split_at_mut(dim);
        let (de, dfields) = rest.split_at_mut(dim);

        let half_rabi = 0.5 * drive.rabi;
        let to_excited = -I * half_rabi * Complex64::new(0.0, -drive.detuning * t).exp();
        let to_ground = -I * half_rabi * Complex64::new(0.0, drive.detuning * t).exp();
        let backaction = if self.opts.include_atom_backaction {
            let x = (p.beta_plus + d_plus).conj() * d_minus;
            2.0 * p.g0 * x.im
        } else {
            0.0
        };
        let drive_m = self.ops.drive.entries();
        let drive_c = self.ops.drive_conj.entries();
        for n in 0..dim {
            let rot = -I * (n as f64 * p.omega_osc);
            let mut eg = rot * c_g[n];
            let mut ee = rot * c_e[n];
            if drive.rabi != 0.0 {
                let row_d = &drive_m[n * dim..(n + 1) * dim];
                let row_c = &drive_c[n * dim..(n + 1) * dim];
                let mut into_e = Complex64::new(0.0, 0.0);
                let mut into_g = Complex64::new(0.0, 0.0);
                for k in 0..dim {
                    into_e += row_d[k] * c_g[k];
                    into_g += row_c[k] * c_e[k];
                }
                ee += to_excited * into_e;
                eg += to_ground * into_g;
            }
            if backaction != 0.0 {
                let row = &self.sin2[n * dim..(n + 1) * dim];
                let mut sg = Complex64::new(0.0, 0.0);
                let mut se = Complex64::new(0.0, 0.0);
                for k in 0..dim {
                    sg += c_g[k] * row[k];
                    se += c_e[k] * row[k];
                }
                eg += I * backaction * sg;
                ee += I * backaction * se;
            }
            dg[n] = eg;
            de[n] = ee;
        }

        let decay = 0.5 * p.kappa;
        dfields[0] = match self.opts.field_mode {
            FieldMode::Dynamic => {
                let detuning = p.delta_cavity - 2.0 * p.g0 * m.s;
                Complex64::new(-decay, detuning) * d_minus - (p.beta_plus + d_plus) * (p.g0 * m.s2)
            }
            _ => Complex64::new(0.0, 0.0),
        };
        dfields[1] = if self.opts.neglect_d_plus {
            Complex64::new(0.0, 0.0)
        } else {
            let detuning = p.delta_cavity - 2.0 * p.g0 * m.c;
            let mut v = Complex64::new(-decay, detuning) * d_plus + d_minus * (p.g0 * m.s2);
            if self.opts.include_c2_drift {
                v -= I * p.beta_plus * (p.g0 * (m.c2 - self.c2_initial));
            }
            v
        };
    }

    pub fn rhs(&self, state: &MeanFieldState, drive: Drive) -> Result<MeanFieldState, MeanFieldError> {
        check_dims(state, &self.ops)?;
        let y = state.to_flat();
        let mut dy = vec![Complex64::new(0.0, 0.0); y.len()];
        self.rhs_into(state.t, &y, drive, &mut dy);
        MeanFieldState::from_flat(&dy, self.n_max(), state.t)
    }

    /// Sideband amplitude the model actually uses at `y`.
    pub fn effective_d_minus(&self, y: &[Complex64]) -> Complex64 {
        let dim = self.n_max() + 1;
        match self.opts.field_mode {
            FieldMode::Dynamic => y[2 * dim],
            FieldMode::Disabled => Complex64::new(0.0, 0.0),
            FieldMode::QuasiAdiabatic => {
                let d_plus = if self.opts.neglect_d_plus { Complex64::new(0.0, 0.0) } else { y[2 * dim + 1] };
                self.slaved_d_minus(&self.moments_flat(y), d_plus)
            }
        }
    }
}
