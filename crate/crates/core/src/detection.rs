//! Signal-to-noise ratios of the two detection schemes and their closed-form limits.

use std::f64::consts::PI;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrator::{photon_rates, Quadratures, Trajectory};
use crate::meanfield::MeanFieldState;
use crate::params::{pi_half_duration, DerivedParams};

#[derive(Debug, Error, PartialEq)]
pub enum DetectionError {
    #[error("trajectory covers [{start:e}, {end:e}] s but the pi/2 pulse lasts {expected:e} s from t = 0")]
    PulseMismatch { start: f64, end: f64, expected: f64 },
    #[error("detection window of {requested:e} s requested but trajectory lasts only {available:e} s")]
    WindowTooShort { requested: f64, available: f64 },
    #[error("trajectory did not reach its end time")]
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Imbalance,
    Sideband,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Imbalance => "imbalance",
            Scheme::Sideband => "sideband",
        }
    }
}

/// Recoil frequency entering the scheme-1 closed forms.
///
/// The closed forms contain ω_rec through (k_L a_osc)^2 = 2 ω_rec / ω_osc,
/// which holds for hbar k_L^2 / 2M with the projected lattice wavevector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecoilConvention {
    #[default]
    ProjectedLattice,
    FullWavevector,
}

impl RecoilConvention {
    pub fn omega_rec(self, params: &DerivedParams) -> f64 {
        match self {
            RecoilConvention::ProjectedLattice => params.omega_rec_lattice,
            RecoilConvention::FullWavevector => params.omega_rec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticComparison {
    pub label: String,
    pub value: f64,
    /// numeric / analytic - 1
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrSettings {
    pub rabi: f64,
    pub window: f64,
    pub tol_rel: f64,
    pub stride: f64,
    pub n_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrReport {
    pub scheme: Scheme,
    pub value: f64,
    /// Signal integral (photons): imbalance for scheme 1, sideband photons for scheme 2.
    pub numerator: f64,
    /// Shot-noise integral (photons) for scheme 1; 1 for scheme 2.
    pub denominator: f64,
    pub comparison: Option<AnalyticComparison>,
    pub settings: SnrSettings,
}

impl SnrReport {
    pub fn with_comparison(mut self, label: &str, analytic: f64) -> Self {
        self.comparison = Some(AnalyticComparison {
            label: label.to_string(),
            value: analytic,
            deviation: self.value / analytic - 1.0,
        });
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serialisable")
    }

    pub const CSV_HEADER: &'static str = "scheme,omega_rad_s,window_s,value,analytic,deviation";

    pub fn write_csv_row<W: Write>(&self, mut w: W) -> io::Result<()> {
        let (analytic, deviation) = self.comparison.as_ref().map_or((f64::NAN, f64::NAN), |c| (c.value, c.deviation));
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.scheme.name(),
            self.settings.rabi,
            self.settings.window,
            self.value,
            analytic,
            deviation
        )
    }
}

/// delta I = 2 kappa Re((beta_plus + d_plus)^* d_minus), photons/s.
pub fn intensity_imbalance(state: &MeanFieldState, params: &DerivedParams) -> f64 {
    photon_rates(params, state.d_minus, state.d_plus).imbalance
}

fn settings_of(traj: &Trajectory, rabi: f64, window: f64) -> SnrSettings {
    SnrSettings { rabi, window, tol_rel: traj.settings.tol.rel, stride: traj.stride, n_max: traj.final_state.n_max() }
}

pub fn snr1_from_quadratures(q: &Quadratures) -> f64 {
    if q.total <= 0.0 {
        return 0.0;
    }
    q.imbalance.abs() / q.total.sqrt()
}

/// SNR of the intensity imbalance accumulated over one pi/2 pulse at `rabi`.
///
/// With `rabi = 0` there is no pulse to match and any trajectory is accepted.
pub fn snr1(traj: &Trajectory, rabi: f64) -> Result<SnrReport, DetectionError> {
    if traj.termination != crate::integrator::Termination::ReachedEnd {
        return Err(DetectionError::Incomplete);
    }
    if rabi > 0.0 {
        let expected = pi_half_duration(rabi);
        let ok = traj.t_start.abs() <= 1e-12 * expected && (traj.t_end - expected).abs() <= 1e-9 * expected;
        if !ok {
            return Err(DetectionError::PulseMismatch { start: traj.t_start, end: traj.t_end, expected });
        }
    }
    let q = &traj.quadratures;
    Ok(SnrReport {
        scheme: Scheme::Imbalance,
        value: snr1_from_quadratures(q),
        numerator: q.imbalance,
        denominator: q.total.max(0.0).sqrt(),
        comparison: None,
        settings: settings_of(traj, rabi, traj.duration()),
    })
}

/// Detected sideband photons over the first `window` seconds of `traj`.
pub fn snr2(traj: &Trajectory, window: f64, rabi: f64) -> Result<SnrReport, DetectionError> {
    if traj.termination != crate::integrator::Termination::ReachedEnd {
        return Err(DetectionError::Incomplete);
    }
    let available = traj.duration();
    if available < window * (1.0 - 1e-12) {
        return Err(DetectionError::WindowTooShort { requested: window, available });
    }
    let value = if (available - window).abs() <= 1e-12 * window {
        traj.quadratures.sideband
    } else {
        sideband_photons_until(traj, traj.t_start + window)
    };
    Ok(SnrReport {
        scheme: Scheme::Sideband,
        value: value.max(0.0),
        numerator: value,
        denominator: 1.0,
        comparison: None,
        settings: settings_of(traj, rabi, window),
    })
}

/// Trapezoid of kappa |d_minus|^2 over the stored samples up to `t_stop`.
pub fn sideband_photons_until(traj: &Trajectory, t_stop: f64) -> f64 {
    let mut acc = 0.0;
    for w in traj.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.t >= t_stop {
            break;
        }
        let tb = b.t.min(t_stop);
        let frac = (tb - a.t) / (b.t - a.t);
        let rb = a.rates.sideband + frac * (b.rates.sideband - a.rates.sideband);
        acc += 0.5 * (a.rates.sideband + rb) * (tb - a.t);
    }
    acc
}

/// Weak-drive closed form of scheme 1.
pub fn snr1_adiabatic(params: &DerivedParams, rabi: f64, recoil: RecoilConvention) -> f64 {
    let w_rec = recoil.omega_rec(params);
    let noise = (PI * params.kappa * params.omega_osc.powi(2) / (16.0 * params.g0.abs() * rabi * w_rec)).sqrt();
    params.n_atoms * (params.k_clock / params.k_lattice) / noise
}

/// Maximal scheme-1 SNR estimate.
pub fn snr1_max(params: &DerivedParams, recoil: RecoilConvention) -> f64 {
    let w_rec = recoil.omega_rec(params);
    params.n_atoms.sqrt()
        * (4.0 / PI.sqrt())
        * (params.k_clock / params.k_lattice)
        * (w_rec / params.omega_osc).sqrt()
        * (params.n_atoms * params.g0.abs() / params.kappa).sqrt()
}

/// Variant of [`snr1_max`] with the recoil ratio entering linearly.
pub fn snr1_max_footnote(params: &DerivedParams, recoil: RecoilConvention) -> f64 {
    snr1_max(params, recoil) * (recoil.omega_rec(params) / params.omega_osc).sqrt()
}

fn lorentzian_denominator(params: &DerivedParams, delta: f64) -> f64 {
    delta * delta + 0.25 * params.kappa * params.kappa
}

/// Detuning of the sideband mode from its atom-dressed resonance at t = 0.
pub fn dressed_sideband_detuning(params: &DerivedParams) -> f64 {
    params.delta_cavity - 2.0 * params.g0 * params.s0
}

/// Weak-drive closed form of scheme 2 at cavity detuning `delta`.
pub fn snr2_adiabatic(params: &DerivedParams, rabi: f64, window: f64, delta: f64) -> f64 {
    let ratio = params.k_clock / params.k_lattice;
    ratio.powi(2) * params.n_atoms.powi(2) * rabi.powi(2) * params.kappa * window
        / (32.0 * lorentzian_denominator(params, delta) * params.beta_plus.norm_sqr())
}

/// Strong-drive saturation value of scheme 2 at cavity detuning `delta`.
pub fn snr2_max(params: &DerivedParams, window: f64, delta: f64) -> f64 {
    let k2 = params.k_clock * params.k_lattice * params.a_osc.powi(2);
    k2.powi(2) * params.n_atoms.powi(2) * params.beta_plus.norm_sqr() * params.g0.powi(2) * params.kappa * window
        / (2.0 * lorentzian_denominator(params, delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{derive, PhysicalConfig};
    use num_complex::Complex64;

    fn fig5() -> DerivedParams {
        derive(&PhysicalConfig::fig5_preset()).unwrap()
    }

    fn fig7() -> DerivedParams {
        derive(&PhysicalConfig::fig7_preset()).unwrap()
    }

    #[test]
    fn imbalance_vanishes_without_or_in_quadrature_with_the_pump() {
        let p = fig7();
        let mut s = MeanFieldState::initial(p.n_atoms, 3);
        assert_eq!(intensity_imbalance(&s, &p), 0.0);
        s.d_minus = p.beta_plus * Complex64::new(0.0, 3.5);
        assert!(intensity_imbalance(&s, &p).abs() < 1e-9 * p.kappa * p.beta_plus.norm_sqr());
    }

    #[test]
    fn scheme1_closed_form_scalings() {
        let p = fig5();
        let r = RecoilConvention::ProjectedLattice;
        let w = p.omega_rec;
        assert!((snr1_adiabatic(&p, 4.0 * w, r) / snr1_adiabatic(&p, w, r) - 2.0).abs() < 1e-14);
        let mut p2 = p.clone();
        p2.n_atoms *= 2.0;
        assert!((snr1_adiabatic(&p2, w, r) / snr1_adiabatic(&p, w, r) - 2.0).abs() < 1e-14);
        let mut p4 = p.clone();
        p4.kappa /= 4.0;
        assert!((snr1_max(&p4, r) / snr1_max(&p, r) - 2.0).abs() < 1e-14);
        let ratio = snr1_max_footnote(&p, r) / snr1_max(&p, r);
        assert!((ratio - (p.omega_rec_lattice / p.omega_osc).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn scheme1_regression_values() {
        let p = fig5();
        let full = RecoilConvention::FullWavevector;
        let lat = RecoilConvention::ProjectedLattice;
        assert!((snr1_adiabatic(&p, p.omega_rec, full) / 109.076 - 1.0).abs() < 1e-4);
        assert!((snr1_adiabatic(&p, p.omega_rec, lat) / 63.487 - 1.0).abs() < 1e-4);
        assert!((snr1_max(&p, full) / 487.80 - 1.0).abs() < 1e-4);
        assert!((snr1_max(&p, lat) / 283.92 - 1.0).abs() < 1e-4);
    }

    #[test]
    fn scheme2_regression_values_and_scalings() {
        let p = fig7();
        let delta = p.delta_cavity;
        let base = snr2_adiabatic(&p, p.omega_rec, 1.0, delta);
        assert!((base / 172_694.66 - 1.0).abs() < 1e-6);
        assert!((snr2_adiabatic(&p, p.omega_rec, 2.0, delta) / base - 2.0).abs() < 1e-14);
        assert!((snr2_adiabatic(&p, 2.0 * p.omega_rec, 1.0, delta) / base - 4.0).abs() < 1e-14);
        let max = snr2_max(&p, 1.0, delta);
        assert!((max / 6.9078e7 - 1.0).abs() < 1e-4);
        let mut wide = p.clone();
        wide.a_osc *= 2.0;
        assert!((snr2_max(&wide, 1.0, delta) / max - 16.0).abs() < 1e-12);
        let mut k1 = p.clone();
        let mut k2 = p.clone();
        for (k, kappa) in [(&mut k1, 1e12), (&mut k2, 2e12)] {
            k.kappa = kappa;
            k.beta_plus = crate::params::beta_plus_steady_state(p.pump_eta, delta, kappa, p.g0, p.c0);
        }
        let r = snr2_max(&k2, 1.0, delta) / snr2_max(&k1, 1.0, delta);
        assert!((r - 0.125).abs() < 1e-6);
    }
}
