//! Physical experiment description and the derived model constants.
//!
//! Every quantity with a rate carries rad/s. The lattice is parametrised by
//! the requested trap frequency (as a multiple of the recoil frequency); the
//! photon amplitude of the pumped mode and the pump strength are back-solved
//! from it.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced Planck constant (J s), CODATA 2018.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Unified atomic mass unit (kg), CODATA 2018.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Mass of 87Sr in atomic mass units.
pub const SR87_MASS_U: f64 = 86.908_877_497;
/// alpha/eps0 of Sr at the 813 nm magic wavelength (m^3).
pub const SR87_POLARIZABILITY_OVER_EPS0: f64 = -5.37e-28;
/// 1S0 - 3P0 clock wavelength of Sr (m).
pub const SR87_CLOCK_WAVELENGTH: f64 = 698.4e-9;
/// Magic lattice wavelength of Sr (m).
pub const SR87_MAGIC_WAVELENGTH: f64 = 813e-9;

/// Lamb-Dicke parameters above this value are reported as a warning.
pub const LAMB_DICKE_WARNING: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ParamsError {
    #[error("`{field}` must be strictly positive (got {value})")]
    NonPositive { field: &'static str, value: f64 },
    #[error("`{field}` must be finite (got {value})")]
    NonFinite { field: &'static str, value: f64 },
    #[error("atom_count must be at least 1")]
    NoAtoms,
    #[error("zero polarizability: the cavity field cannot form a lattice")]
    ZeroCoupling,
    #[error(
        "lattice projection k_L = {k_lattice:.6e} 1/m exceeds the lattice wavevector {k_full:.6e} 1/m; \
         clock_wavelength_m and lattice_geometry_ratio admit no crossing angle"
    )]
    ImpossibleGeometry { k_lattice: f64, k_full: f64 },
    #[error("cavity_detuning_rad_s is required when cavity_detuning_mode = \"explicit\"")]
    MissingExplicitDetuning,
    #[error("commensurate pulse index m must be >= 1")]
    ZeroPulseIndex,
}

/// How the cavity detuning Delta is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CavityDetuningMode {
    /// Delta = 2 g0 C(0): the pumped (cosine) mode sits on its atom-dressed resonance.
    #[default]
    DressedResonance,
    /// Delta = 2 g0 S(0): the unpumped (sine) sideband mode sits on its dressed resonance.
    SidebandResonance,
    /// Delta taken from `cavity_detuning_rad_s`.
    Explicit,
}

fn default_geometry_ratio() -> f64 {
    2.0
}

fn default_trap_ratio() -> f64 {
    20.0
}

/// User-facing description of one experiment.
///
/// Serialised as a flat key-value TOML table whose keys carry their units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConfig {
    pub atom_count: u64,
    pub atomic_mass_kg: f64,
    pub polarizability_over_eps0_m3: f64,
    pub lattice_wavelength_m: f64,
    pub clock_wavelength_m: f64,
    pub cavity_length_m: f64,
    pub finesse: f64,
    pub waist_m: f64,
    /// k_c / k_L.
    #[serde(default = "default_geometry_ratio")]
    pub lattice_geometry_ratio: f64,
    /// omega_osc / omega_rec.
    #[serde(default = "default_trap_ratio")]
    pub trap_frequency_ratio: f64,
    #[serde(default)]
    pub clock_detuning_rad_s: f64,
    #[serde(default)]
    pub cavity_detuning_mode: CavityDetuningMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cavity_detuning_rad_s: Option<f64>,
}

impl PhysicalConfig {
    /// 10^6 87Sr atoms in a 1 cm ring cavity with 30 um waist at the magic
    /// wavelength, omega_osc = 20 omega_rec, resonant clock drive.
    pub fn sr87(finesse: f64) -> Self {
        Self {
            atom_count: 1_000_000,
            atomic_mass_kg: SR87_MASS_U * ATOMIC_MASS_UNIT,
            polarizability_over_eps0_m3: SR87_POLARIZABILITY_OVER_EPS0,
            lattice_wavelength_m: SR87_MAGIC_WAVELENGTH,
            clock_wavelength_m: SR87_CLOCK_WAVELENGTH,
            cavity_length_m: 0.01,
            finesse,
            waist_m: 30e-6,
            lattice_geometry_ratio: 2.0,
            trap_frequency_ratio: 20.0,
            clock_detuning_rad_s: 0.0,
            cavity_detuning_mode: CavityDetuningMode::DressedResonance,
            cavity_detuning_rad_s: None,
        }
    }

    /// Intensity-imbalance preset: high-finesse cavity (F = 10^6) with the
    /// sideband mode on resonance.
    pub fn fig5_preset() -> Self {
        Self { cavity_detuning_mode: CavityDetuningMode::SidebandResonance, ..Self::sr87(1e6) }
    }

    /// Sideband-spectroscopy preset: bad cavity (F = 10^4), pumped mode on
    /// its dressed resonance.
    pub fn fig7_preset() -> Self {
        Self::sr87(1e4)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.atom_count == 0 {
            return Err(ParamsError::NoAtoms);
        }
        let positive = [
            ("atomic_mass_kg", self.atomic_mass_kg),
            ("lattice_wavelength_m", self.lattice_wavelength_m),
            ("clock_wavelength_m", self.clock_wavelength_m),
            ("cavity_length_m", self.cavity_length_m),
            ("finesse", self.finesse),
            ("waist_m", self.waist_m),
            ("lattice_geometry_ratio", self.lattice_geometry_ratio),
            ("trap_frequency_ratio", self.trap_frequency_ratio),
        ];
        for (field, value) in positive {
            if !value.is_finite() {
                return Err(ParamsError::NonFinite { field, value });
            }
            if value <= 0.0 {
                return Err(ParamsError::NonPositive { field, value });
            }
        }
        let finite = [
            ("polarizability_over_eps0_m3", self.polarizability_over_eps0_m3),
            ("clock_detuning_rad_s", self.clock_detuning_rad_s),
        ];
        for (field, value) in finite {
            if !value.is_finite() {
                return Err(ParamsError::NonFinite { field, value });
            }
        }
        if self.polarizability_over_eps0_m3 == 0.0 {
            return Err(ParamsError::ZeroCoupling);
        }
        match (self.cavity_detuning_mode, self.cavity_detuning_rad_s) {
            (CavityDetuningMode::Explicit, None) => Err(ParamsError::MissingExplicitDetuning),
            (_, Some(value)) if !value.is_finite() => {
                Err(ParamsError::NonFinite { field: "cavity_detuning_rad_s", value })
            }
            _ => Ok(()),
        }
    }
}

/// All model constants computed from a [`PhysicalConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedParams {
    pub n_atoms: f64,
    pub mass: f64,
    /// Single-atom lattice coupling (rad/s); negative for red-detuned (attractive) lattices.
    pub g0: f64,
    /// Cavity field decay rate (rad/s).
    pub kappa: f64,
    /// hbar k^2 / 2M with the full lattice wavevector k = omega_L/c.
    pub omega_rec: f64,
    /// hbar k_L^2 / 2M with the projected lattice wavevector.
    pub omega_rec_lattice: f64,
    pub omega_osc: f64,
    pub a_osc: f64,
    /// omega_L / c.
    pub k_full: f64,
    /// Projection of the lattice wavevector on the clock axis.
    pub k_lattice: f64,
    pub k_clock: f64,
    /// k_L a_osc.
    pub eta_lattice: f64,
    /// k_c a_osc.
    pub eta_clock: f64,
    pub beta_plus: Complex64,
    /// Cavity detuning Delta (rad/s).
    pub delta_cavity: f64,
    /// Pump amplitude eta (rad/s), real.
    pub pump_eta: f64,
    /// Clock laser detuning delta (rad/s).
    pub clock_detuning: f64,
    /// cos^2(k_L z) overlap of the initial state, in atoms.
    pub c0: f64,
    /// sin^2(k_L z) overlap of the initial state, in atoms.
    pub s0: f64,
}

impl DerivedParams {
    pub fn lamb_dicke_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, value) in [("k_L a_osc", self.eta_lattice), ("k_c a_osc", self.eta_clock)] {
            if value > LAMB_DICKE_WARNING {
                out.push(format!("{name} = {value:.3} exceeds {LAMB_DICKE_WARNING}: outside the Lamb-Dicke regime"));
            }
        }
        out
    }

    /// omega_osc recomputed from g0, beta_plus, k_L and M.
    pub fn trap_frequency_from_lattice(&self) -> f64 {
        (4.0 * HBAR * self.g0.abs() * self.beta_plus.norm_sqr() * self.k_lattice.powi(2) / self.mass).sqrt()
    }

    /// Period of the harmonic well.
    pub fn trap_period(&self) -> f64 {
        2.0 * PI / self.omega_osc
    }

    pub fn photon_number(&self) -> f64 {
        self.beta_plus.norm_sqr()
    }
}

/// Steady-state amplitude of the pumped cosine mode.
pub fn beta_plus_steady_state(eta: f64, delta: f64, kappa: f64, g0: f64, c0: f64) -> Complex64 {
    let denominator = Complex64::new(delta - 2.0 * g0 * c0, 0.5 * kappa);
    Complex64::new(2f64.sqrt() * eta, 0.0) / denominator
}

/// Rabi frequency whose pi/2 pulse lasts exactly `m` trap periods.
pub fn commensurate_rabi(m: u32, omega_osc: f64) -> Result<f64, ParamsError> {
    if m == 0 {
        return Err(ParamsError::ZeroPulseIndex);
    }
    Ok(omega_osc / (4.0 * f64::from(m)))
}

/// Duration of a pi/2 pulse at bare Rabi frequency `rabi`.
pub fn pi_half_duration(rabi: f64) -> f64 {
    PI / (2.0 * rabi)
}

pub fn derive(config: &PhysicalConfig) -> Result<DerivedParams, ParamsError> {
    config.validate()?;

    let n_atoms = config.atom_count as f64;
    let mass = config.atomic_mass_kg;
    let k_full = 2.0 * PI / config.lattice_wavelength_m;
    let omega_lattice = SPEED_OF_LIGHT * k_full;
    let k_clock = 2.0 * PI / config.clock_wavelength_m;
    let k_lattice = k_clock / config.lattice_geometry_ratio;
    if k_lattice > k_full * (1.0 + 1e-12) {
        return Err(ParamsError::ImpossibleGeometry { k_lattice, k_full });
    }

    let g0 =
        config.polarizability_over_eps0_m3 * omega_lattice / (PI * config.waist_m.powi(2) * config.cavity_length_m);
    if g0 == 0.0 || !g0.is_finite() {
        return Err(ParamsError::ZeroCoupling);
    }
    let kappa = 2.0 * PI * SPEED_OF_LIGHT / (config.cavity_length_m * config.finesse);

    let omega_rec = HBAR * k_full.powi(2) / (2.0 * mass);
    let omega_rec_lattice = HBAR * k_lattice.powi(2) / (2.0 * mass);
    let omega_osc = config.trap_frequency_ratio * omega_rec;
    let a_osc = (HBAR / (mass * omega_osc)).sqrt();
    let eta_lattice = k_lattice * a_osc;
    let eta_clock = k_clock * a_osc;

    // <0|cos 2k_L z|0> = exp(-(k_L a)^2)
    let cos2_ground = (-eta_lattice.powi(2)).exp();
    let c0 = 0.5 * n_atoms * (1.0 + cos2_ground);
    let s0 = 0.5 * n_atoms * (1.0 - cos2_ground);

    let delta_cavity = match config.cavity_detuning_mode {
        CavityDetuningMode::DressedResonance => 2.0 * g0 * c0,
        CavityDetuningMode::SidebandResonance => 2.0 * g0 * s0,
        CavityDetuningMode::Explicit => config.cavity_detuning_rad_s.ok_or(ParamsError::MissingExplicitDetuning)?,
    };

    let photons = mass * omega_osc.powi(2) / (4.0 * HBAR * g0.abs() * k_lattice.powi(2));
    let denominator = Complex64::new(delta_cavity - 2.0 * g0 * c0, 0.5 * kappa);
    let pump_eta = photons.sqrt() * denominator.norm() / 2f64.sqrt();
    let beta_plus = beta_plus_steady_state(pump_eta, delta_cavity, kappa, g0, c0);

    let params = DerivedParams {
        n_atoms,
        mass,
        g0,
        kappa,
        omega_rec,
        omega_rec_lattice,
        omega_osc,
        a_osc,
        k_full,
        k_lattice,
        k_clock,
        eta_lattice,
        eta_clock,
        beta_plus,
        delta_cavity,
        pump_eta,
        clock_detuning: config.clock_detuning_rad_s,
        c0,
        s0,
    };
    for warning in params.lamb_dicke_warnings() {
        log::warn!("{warning}");
    }
    Ok(params)
}
