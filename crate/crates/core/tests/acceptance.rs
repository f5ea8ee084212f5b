//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::time::Instant;

use ringclock::detection::{self, RecoilConvention};
use ringclock::experiments::{self, Scenario};
use ringclock::integrator::StoragePolicy;
use ringclock::oscillator::oracle::{quadrature_oracle, OracleKind};
use ringclock::oscillator::{displacement_matrix, momentum_matrix, position_matrix, trig_matrices};
use ringclock::params::{commensurate_rabi, HBAR};

const SNR2_HEADLINE: f64 = 1e5;
const SNR2_FACTOR: f64 = 2.0;
const SNR1_REL_TOL: f64 = 0.10;
const SNR2_WEAK_BAND: (f64, f64) = (0.67, 1.5);
const LAMB_DICKE_FACTOR: f64 = 5.0;
const VIBRATIONAL_CEILING: f64 = 1e-3;
const PHASE_SELECTION_RATIO: f64 = 0.10;
const SIGN_FLOOR: f64 = 1e-3;
const ORACLE_TOL: f64 = 1e-10;
const NORM_TOL: f64 = 1e-8;
const CONVERGENCE_TOL: f64 = 0.01;

struct Verdict {
    passed: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Verdict);

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn snr2_headline() -> Verdict {
    let s = Scenario::fig7();
    let rabi = s.params.omega_rec;
    let r = s.snr2_point(rabi, 1.0).expect("scheme-2 point");
    let analytic = detection::snr2_adiabatic(&s.params, rabi, 1.0, s.params.delta_cavity);
    let ratio = r.value / analytic;
    verdict(
        r.value > SNR2_HEADLINE && (1.0 / SNR2_FACTOR..=SNR2_FACTOR).contains(&ratio),
        format!("SNR2 = {:.4e} (> {SNR2_HEADLINE:.0e}), adiabatic {analytic:.4e}, ratio {ratio:.4}", r.value),
    )
}

fn snr1_adiabatic_limit() -> Verdict {
    let s = Scenario::fig5();
    let mut ok = true;
    let mut parts = Vec::new();
    for f in [1e-3, 3e-3, 1e-2] {
        let rabi = f * s.params.omega_osc;
        let r = s.snr1_point(rabi).expect("scheme-1 point");
        let analytic = detection::snr1_adiabatic(&s.params, rabi, RecoilConvention::ProjectedLattice);
        let dev = r.value / analytic - 1.0;
        ok &= dev.abs() <= SNR1_REL_TOL;
        parts.push(format!("{f:.0e}: ratio {:.4}", 1.0 + dev));
    }
    verdict(ok, format!("|numeric/adiabatic - 1| <= {SNR1_REL_TOL}; {}", parts.join(", ")))
}

fn snr1_shortfall() -> Verdict {
    let s = Scenario::fig5();
    let grid = experiments::default_snr1_grid(&s.params);
    let sweep = experiments::sweep_snr1(&s, &grid, None).expect("sweep");
    let sqrt_n = s.params.n_atoms.sqrt();
    let Some((imax, vmax)) = sweep.maximum() else {
        return verdict(false, "no successful sweep point".into());
    };
    let vals = sweep.values();
    let first = vals.first().copied().flatten().unwrap_or(f64::NAN);
    let last = vals.last().copied().flatten().unwrap_or(f64::NAN);
    let interior = imax > 0 && imax + 1 < grid.len() && first < vmax && last < vmax;
    verdict(
        sweep.failures() == 0 && vmax < sqrt_n && interior,
        format!(
            "max SNR1 = {vmax:.4} at {:.4} omega_rec (< {sqrt_n:.0}); ends {first:.4} / {last:.4}; {} points, {} failed",
            grid[imax] / s.params.omega_rec,
            grid.len(),
            sweep.failures()
        ),
    )
}

fn snr2_asymptotes() -> Verdict {
    let s = Scenario::fig7();
    let p = &s.params;
    let mut ok = true;
    let mut parts = Vec::new();
    for f in [1e-3, 3e-3, 1e-2] {
        let rabi = f * p.omega_osc;
        let v = s.snr2_point(rabi, 1.0).expect("weak point").value;
        let ratio = v / detection::snr2_adiabatic(p, rabi, 1.0, p.delta_cavity);
        ok &= (SNR2_WEAK_BAND.0..=SNR2_WEAK_BAND.1).contains(&ratio);
        parts.push(format!("{f:.0e} osc: {ratio:.4} x adiabatic"));
    }
    let max = detection::snr2_max(p, 1.0, p.delta_cavity);
    for f in [10.0, 30.0, 100.0] {
        let v = s.snr2_point(f * p.omega_osc, 1.0).expect("strong point").value;
        let ratio = v / max;
        ok &= (1.0 / SNR2_FACTOR..=SNR2_FACTOR).contains(&ratio);
        parts.push(format!("{f} osc: {ratio:.4} x saturated"));
    }
    verdict(ok, parts.join(", "))
}

fn lamb_dicke() -> Verdict {
    let s = Scenario::fig7().with_storage(StoragePolicy::Endpoints);
    let p = &s.params;
    let rabi = p.omega_rec;
    let traj = s.run_pi_half_pulse(rabi).expect("pulse");
    let frac = traj.final_state.excited_vibrational_fraction();
    let estimate = (p.k_clock * p.a_osc * rabi / p.omega_osc).powi(2);
    let ratio = frac / estimate;
    verdict(
        (1.0 / LAMB_DICKE_FACTOR..=LAMB_DICKE_FACTOR).contains(&ratio) && frac < VIBRATIONAL_CEILING,
        format!("fraction {frac:.4e}, estimate {estimate:.4e}, ratio {ratio:.4}"),
    )
}

fn pulse_phase_selection() -> Verdict {
    let s = Scenario::fig7();
    let rabi = commensurate_rabi(10, s.params.omega_osc).expect("index");
    let trace = experiments::phase_space_trace(&s, rabi).expect("trace");
    let d = trace.diagnostics;
    let ratio = d.post_envelope_e / d.post_envelope_g;
    let signs_ok = d.sign_violations == 0;
    verdict(
        ratio <= PHASE_SELECTION_RATIO && signs_ok,
        format!(
            "post-pulse excited/ground envelope {ratio:.4} (<= {PHASE_SELECTION_RATIO}); \
             same-sign samples {} of {} above the {SIGN_FLOOR:.0e} floor (worst {:.4}); \
             relative phase {:.4} rad",
            d.sign_violations, d.sign_checked, d.worst_violation, d.pulse_relative_phase
        ),
    )
}

fn oracle_equivalence() -> Verdict {
    let a = 4.0e-8;
    let n_max = 20;
    let mut worst = 0.0f64;
    let mut parity = true;
    let z = position_matrix(a, n_max);
    let pm = momentum_matrix(a, n_max);
    for n in 0..=n_max {
        for m in 0..=n_max {
            let zq = quadrature_oracle(n, m, 0.0, OracleKind::Position, a).unwrap();
            worst = worst.max((zq - z.get(n, m)).norm() / a);
            let pq = quadrature_oracle(n, m, 0.0, OracleKind::Momentum, a).unwrap();
            worst = worst.max((pq - pm.get(n, m)).norm() * a / HBAR);
        }
    }
    for ka in [0.1, 0.37, 1.0] {
        let dm = displacement_matrix(ka, n_max);
        let (sin, cos) = trig_matrices(ka, n_max);
        for n in 0..=n_max {
            for m in 0..=n_max {
                for (kind, mat) in [(OracleKind::Exp, &dm), (OracleKind::Sin, &sin), (OracleKind::Cos, &cos)] {
                    let q = quadrature_oracle(n, m, ka / a, kind, a).unwrap();
                    worst = worst.max((q - mat.get(n, m)).norm());
                }
                let forbidden = if (n + m) % 2 == 0 { sin.get(n, m) } else { cos.get(n, m) };
                parity &= forbidden.re == 0.0 && forbidden.im == 0.0;
            }
        }
    }
    verdict(
        worst <= ORACLE_TOL && parity,
        format!("max deviation {worst:.3e} (<= {ORACLE_TOL:.0e}); parity zeros exact: {parity}"),
    )
}

fn conservation_and_convergence() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();

    let (f5, f7) = (Scenario::fig5(), Scenario::fig7());
    let presets = [(1e-2 * f5.params.omega_osc, f5), (f7.params.omega_rec, f7)];
    let mut worst = 0.0f64;
    for (rabi, s) in &presets {
        let traj = s.run_pi_half_pulse(*rabi).expect("pulse");
        let n = s.params.n_atoms;
        for smp in &traj.samples {
            worst = worst.max((smp.state.norm() - n).abs() / n);
        }
    }
    ok &= worst <= NORM_TOL;
    parts.push(format!("norm drift {worst:.3e} N"));

    let s1 = Scenario::fig5();
    let rabi1 = 1e-2 * s1.params.omega_osc;
    let s2 = Scenario::fig7();
    let rabi2 = s2.params.omega_rec;
    let base1 = s1.snr1_point(rabi1).unwrap().value;
    let base2 = s2.snr2_point(rabi2, 1.0).unwrap().value;
    let variants: [(&str, Scenario, Scenario); 3] = [
        ("tol 1e-10", s1.with_tol_rel(1e-10), s2.with_tol_rel(1e-10)),
        ("n_max 40", s1.with_n_max(40), s2.with_n_max(40)),
        ("stride/2", s1.with_stride_divisor(40.0), s2.with_stride_divisor(40.0)),
    ];
    for (label, v1, v2) in variants {
        let c1 = (v1.snr1_point(rabi1).unwrap().value / base1 - 1.0).abs();
        let c2 = (v2.snr2_point(rabi2, 1.0).unwrap().value / base2 - 1.0).abs();
        ok &= c1 < CONVERGENCE_TOL && c2 < CONVERGENCE_TOL;
        parts.push(format!("{label}: {c1:.2e} / {c2:.2e}"));
    }
    verdict(ok, format!("{} (SNR1 / SNR2 relative change < {CONVERGENCE_TOL})", parts.join(", ")))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("sideband SNR headline", snr2_headline),
        ("scheme-1 adiabatic limit", snr1_adiabatic_limit),
        ("scheme-1 projection-noise shortfall", snr1_shortfall),
        ("scheme-2 asymptotes", snr2_asymptotes),
        ("Lamb-Dicke validity", lamb_dicke),
        ("pulse-phase selection", pulse_phase_selection),
        ("oracle equivalence", oracle_equivalence),
        ("conservation and convergence", conservation_and_convergence),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = run();
        if !v.passed {
            failed += 1;
        }
        println!(
            "[{}] {} {name}: {} ({:.1} s)",
            if v.passed { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
