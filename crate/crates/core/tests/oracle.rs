use proptest::prelude::*;

use ringclock::oscillator::oracle::{quadrature_oracle, OracleKind};
use ringclock::oscillator::{displacement_matrix, trig_matrices, OperatorSet};
use ringclock::params::{derive, PhysicalConfig};

const A: f64 = 4.0e-8;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_forms_match_quadrature(n in 0usize..=20, m in 0usize..=20, ka in 0.0f64..1.0) {
        let d = displacement_matrix(ka, 20);
        let (sin, cos) = trig_matrices(ka, 20);
        for (kind, mat) in [(OracleKind::Exp, &d), (OracleKind::Sin, &sin), (OracleKind::Cos, &cos)] {
            let q = quadrature_oracle(n, m, ka / A, kind, A).unwrap();
            prop_assert!((q - mat.get(n, m)).norm() <= 1e-10);
        }
    }
}

#[test]
fn model_operators_use_clock_and_lattice_wavevectors() {
    let p = derive(&PhysicalConfig::fig7_preset()).unwrap();
    let ops = OperatorSet::new(&p, 6);
    let expected = quadrature_oracle(2, 1, p.k_clock, OracleKind::Exp, p.a_osc).unwrap();
    assert!((ops.drive.get(2, 1) - expected).norm() < 1e-10);
    let s = quadrature_oracle(3, 0, 2.0 * p.k_lattice, OracleKind::Sin, p.a_osc).unwrap();
    assert!((ops.sin2.get(3, 0) - s).norm() < 1e-10);
}
