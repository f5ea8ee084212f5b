use num_complex::Complex64;
use proptest::prelude::*;

use ringclock::experiments::{self, Scenario};
use ringclock::integrator::{integrate, integrate_periodic_window, DriveSchedule, StoragePolicy};
use ringclock::meanfield::{Drive, FieldMode, ModelOptions};
use ringclock::params::{commensurate_rabi, pi_half_duration};

fn fig7() -> Scenario {
    Scenario::fig7()
}

#[test]
fn norm_conserved_over_preset_pulses() {
    let cases = [
        (Scenario::fig5(), 1e-2),
        (fig7(), 0.05),
        (fig7(), 1.0),
        (fig7().with_model_options(ModelOptions { include_atom_backaction: true, ..ModelOptions::default() }), 0.05),
    ];
    for (s, f) in cases {
        let n = s.params.n_atoms;
        let traj = s.run_pi_half_pulse(f * s.params.omega_osc).unwrap();
        for smp in &traj.samples {
            assert!((smp.state.norm() - n).abs() <= 1e-8 * n, "drift at t = {}", smp.t);
        }
    }
}

#[test]
fn trajectories_start_at_the_origin() {
    let s = fig7();
    let rabi = commensurate_rabi(10, s.params.omega_osc).unwrap();
    let trace = experiments::phase_space_trace(&s, rabi).unwrap();
    let r = trace.rows[0];
    assert_eq!(r.t, 0.0);
    assert_eq!((r.z_g, r.p_g, r.z_e, r.p_e), (0.0, 0.0, 0.0, 0.0));
    assert!(trace.diagnostics.ellipse_closure < 1e-2);
}

#[test]
fn atoms_at_rest_leave_the_field_empty() {
    let s = fig7();
    let traj = integrate(
        s.model(),
        &s.model().initial_state(),
        0.0,
        20.0 * s.params.trap_period(),
        &DriveSchedule::constant(Drive::OFF),
        &s.settings,
    )
    .unwrap();
    assert!(traj.samples.iter().all(|x| x.state.d_minus == Complex64::new(0.0, 0.0)));
    assert_eq!(traj.quadratures.sideband, 0.0);
}

#[test]
fn periodic_window_matches_direct_integration() {
    let s = fig7();
    let pulse = s.run_pi_half_pulse(s.params.omega_rec).unwrap();
    let window = 37.3 * s.params.trap_period();
    let fast = integrate_periodic_window(s.model(), &pulse.final_state, window, &s.settings).unwrap();
    let t0 = pulse.final_state.t;
    let direct =
        integrate(s.model(), &pulse.final_state, t0, t0 + window, &DriveSchedule::constant(Drive::OFF), &s.settings)
            .unwrap();
    assert!(fast.extension.is_some());
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    assert!(rel(fast.quadratures.sideband, direct.quadratures.sideband) < 1e-6);
    assert!(rel(fast.quadratures.total, direct.quadratures.total) < 1e-6);
    let dn = (fast.final_state.d_minus - direct.final_state.d_minus).norm() / direct.final_state.d_minus.norm();
    assert!(dn < 1e-5);
}

#[test]
fn backaction_damps_oscillation_by_less_than_five_percent_in_ten_ms() {
    let s = fig7()
        .with_model_options(ModelOptions { include_atom_backaction: true, ..ModelOptions::default() })
        .with_storage(StoragePolicy::Every(50));
    let pulse = s.run_pi_half_pulse(commensurate_rabi(10, s.params.omega_osc).unwrap()).unwrap();
    let win = s.run_detection_window(&pulse, 0.01).unwrap();
    let n = win.samples.len();
    let k = n / 20;
    let amp = |xs: &[ringclock::integrator::Sample]| xs.iter().map(|x| x.observables.p_g.abs()).fold(0.0, f64::max);
    let (first, last) = (amp(&win.samples[..k]), amp(&win.samples[n - k..]));
    assert!(last < first);
    assert!(1.0 - last / first < 0.05, "decay {}", 1.0 - last / first);
}

#[test]
fn pulse_timing_selects_the_oscillating_state() {
    let s = fig7();
    let w = s.params.omega_osc;
    let rabi = |m: f64| w / (4.0 * m);
    let whole = experiments::post_pulse_motion(&s, rabi(10.0), 3.0).unwrap();
    assert!(whole.amplitude_e < 0.1 * whole.amplitude_g);
    let half = experiments::post_pulse_motion(&s, rabi(10.5), 3.0).unwrap();
    assert!(half.amplitude_g < 0.1 * half.amplitude_e);
    for m in [9.75, 10.25] {
        let q = experiments::post_pulse_motion(&s, rabi(m), 3.0).unwrap();
        let ratio = q.amplitude_e / q.amplitude_g;
        assert!(ratio > 0.5 && ratio < 2.0, "quarter-period ratio {ratio}");
    }
}

#[test]
fn ground_momentum_envelope_is_linear_in_drive() {
    let s = fig7();
    let rec = s.params.omega_rec;
    let per_rabi: Vec<f64> = [0.1, 0.3, 1.0]
        .iter()
        .map(|&f| experiments::phase_space_trace(&s, f * rec).unwrap().diagnostics.pulse_envelope_g / (f * rec))
        .collect();
    for v in &per_rabi[1..] {
        assert!((v / per_rabi[0] - 1.0).abs() < 0.1);
    }
}

#[test]
fn carrier_flopping_is_slowed_by_the_debye_waller_factor() {
    let s = fig7().with_model_options(ModelOptions { field_mode: FieldMode::Disabled, ..ModelOptions::default() });
    let p = &s.params;
    let rabi = 0.5 * p.omega_rec;
    let carrier = (-(p.k_clock * p.a_osc).powi(2) / 4.0).exp();
    let t_pi = std::f64::consts::PI / (rabi * carrier);
    let traj = integrate(
        s.model(),
        &s.model().initial_state(),
        0.0,
        t_pi,
        &DriveSchedule::constant(Drive::resonant(rabi)),
        &s.settings.with_storage(StoragePolicy::Endpoints),
    )
    .unwrap();
    let n_e = traj.samples.last().unwrap().observables.n_e;
    assert!(n_e / p.n_atoms > 0.999, "excited fraction {}", n_e / p.n_atoms);
    let half = s.with_storage(StoragePolicy::Endpoints).run_pi_half_pulse(rabi).unwrap();
    let expected = (std::f64::consts::FRAC_PI_4 * carrier).sin().powi(2);
    let got = half.samples.last().unwrap().observables.n_e / p.n_atoms;
    assert!((got - expected).abs() < 1e-3);
}

#[test]
fn strong_drive_splits_the_population() {
    let s = fig7().with_storage(StoragePolicy::Endpoints);
    let rabi = 20.0 * s.params.omega_osc;
    let traj = s.run_pi_half_pulse(rabi).unwrap();
    let n_e = traj.samples.last().unwrap().observables.n_e;
    assert!((n_e / s.params.n_atoms - 0.5).abs() < 0.01);
    assert!((traj.t_end - pi_half_duration(rabi)).abs() < 1e-18);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn norm_conserved_for_any_drive(f in 0.05f64..20.0) {
        let s = fig7().with_n_max(10).with_storage(StoragePolicy::Endpoints);
        let n = s.params.n_atoms;
        let traj = s.run_pi_half_pulse(f * s.params.omega_rec).unwrap();
        prop_assert!((traj.final_state.norm() - n).abs() <= 1e-8 * n);
    }
}
