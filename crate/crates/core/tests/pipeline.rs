use num_complex::Complex64;
use proptest::prelude::*;

use ringclock::detection;
use ringclock::experiments::{self, Scenario};
use ringclock::integrator::StoragePolicy;

#[test]
fn snr2_grows_with_window() {
    let s = Scenario::fig7();
    let rabi = s.params.omega_rec;
    let values: Vec<f64> = [1e-3, 1e-2, 1e-1, 1.0].iter().map(|&t| s.snr2_point(rabi, t).unwrap().value).collect();
    assert!(values.windows(2).all(|w| w[1] > w[0]), "{values:?}");
    assert!((values[3] / values[2] - 10.0).abs() < 0.1);
}

#[test]
fn scheme2_saturates_at_large_drive() {
    let s = Scenario::fig7();
    let p = &s.params;
    let grid: Vec<f64> = [10.0, 20.0, 50.0].iter().map(|f| f * p.omega_osc).collect();
    let sweep = experiments::sweep_snr2(&s, &grid, 1.0, None).unwrap();
    let max = detection::snr2_max(p, 1.0, p.delta_cavity);
    for pt in &sweep.points {
        let r = pt.value().unwrap() / max;
        assert!(r > 0.5 && r < 2.0);
        assert_eq!(pt.analytic_value("snr2_max"), Some(max));
    }
}

#[test]
fn scheme1_sweep_rises_then_falls() {
    let s = Scenario::fig5();
    let grid = experiments::log_grid(1e-2 * s.params.omega_rec, 10.0 * s.params.omega_rec, 2);
    let sweep = experiments::sweep_snr1(&s, &grid, Some(2)).unwrap();
    let (imax, _) = sweep.maximum().unwrap();
    assert!(imax > 0 && imax + 1 < grid.len());
}

#[test]
fn sweep_results_do_not_depend_on_worker_count() {
    let s = Scenario::fig7().with_n_max(10);
    let grid = experiments::log_grid(s.params.omega_rec, 4.0 * s.params.omega_rec, 4);
    let one = experiments::sweep_snr2(&s, &grid, 1e-2, Some(1)).unwrap();
    let many = experiments::sweep_snr2(&s, &grid, 1e-2, Some(3)).unwrap();
    assert_eq!(one.values(), many.values());
}

#[test]
fn grid_outside_supported_range_is_rejected() {
    let s = Scenario::fig7();
    let too_low = [1e-4 * s.params.omega_rec];
    assert!(matches!(experiments::sweep_snr1(&s, &too_low, None), Err(experiments::ExperimentError::InvalidGrid(_))));
}

#[test]
fn fig6_csv_uses_dimensionless_axes() {
    let s = Scenario::fig7();
    let rabi = ringclock::params::commensurate_rabi(10, s.params.omega_osc).unwrap();
    let trace = experiments::phase_space_trace(&s, rabi).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!((last[0] - 13.0).abs() < 1e-9, "pulse of 10 periods plus 3");
    assert!(last[2].abs() < 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn sideband_snr_ignores_atomic_phase(phase in 0.0f64..std::f64::consts::TAU) {
        let s = Scenario::fig7().with_n_max(10).with_storage(StoragePolicy::Endpoints);
        let rabi = s.params.omega_rec;
        let mut pulse = s.run_pi_half_pulse(rabi).unwrap();
        let window = 1e-3;
        let base = detection::snr2(&s.run_detection_window(&pulse, window).unwrap(), window, rabi).unwrap().value;
        let u = Complex64::from_polar(1.0, phase);
        for c in pulse.final_state.c_g.iter_mut().chain(pulse.final_state.c_e.iter_mut()) {
            *c *= u;
        }
        let turned = detection::snr2(&s.run_detection_window(&pulse, window).unwrap(), window, rabi).unwrap().value;
        prop_assert!((turned / base - 1.0).abs() < 1e-6);
    }
}
