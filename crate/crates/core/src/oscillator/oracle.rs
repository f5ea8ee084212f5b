//! Independent check of the oscillator matrix elements.
//!
//! Hermite functions are generated by their stable three-term recurrence on a
//! quadrature grid and the overlap integral is evaluated numerically, so
//! nothing here shares code with the Laguerre closed form.

use num_complex::Complex64;
use thiserror::Error;

use crate::params::HBAR;
use crate::quadrature::{self, QuadratureError};

/// Highest level the recurrence is trusted for.
pub const MAX_ORACLE_LEVEL: usize = 60;
/// Absolute tolerance on the dimensionless overlap integral.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Exp,
    Sin,
    Cos,
    Position,
    Momentum,
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("oracle supports levels up to {MAX_ORACLE_LEVEL} (got {0})")]
    LevelTooHigh(usize),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// phi_0(x) .. phi_n_max(x) for dimensionless x = z / a_osc.
pub fn hermite_functions(x: f64, n_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let phi0 = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(phi0);
    if n_max == 0 {
        return out;
    }
    out.push(std::f64::consts::SQRT_2 * x * phi0);
    for n in 1..n_max {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// <n| f |n'> by adaptive quadrature.
///
/// `k` (1/m) is the wavevector of exp/sin/cos and is ignored for z and p.
/// For p the derivative is applied through the ladder relation
/// d/dx phi_n = sqrt(n/2) phi_{n-1} - sqrt((n+1)/2) phi_{n+1}.
pub fn quadrature_oracle(
    n: usize,
    n_prime: usize,
    k: f64,
    kind: OracleKind,
    a_osc: f64,
) -> Result<Complex64, OracleError> {
    let top = n.max(n_prime);
    if top > MAX_ORACLE_LEVEL {
        return Err(OracleError::LevelTooHigh(top));
    }
    let ka = k * a_osc;
    let levels = top + 1;
    let integrand = |x: f64| -> Complex64 {
        let phi = hermite_functions(x, levels);
        let bra = phi[n];
        match kind {
            OracleKind::Exp => Complex64::new(0.0, ka * x).exp() * (bra * phi[n_prime]),
            OracleKind::Sin => Complex64::new((ka * x).sin() * bra * phi[n_prime], 0.0),
            OracleKind::Cos => Complex64::new((ka * x).cos() * bra * phi[n_prime], 0.0),
            OracleKind::Position => Complex64::new(x * bra * phi[n_prime], 0.0),
            OracleKind::Momentum => {
                let np = n_prime as f64;
                let lower = if n_prime > 0 { (0.5 * np).sqrt() * phi[n_prime - 1] } else { 0.0 };
                let upper = (0.5 * (np + 1.0)).sqrt() * phi[n_prime + 1];
                Complex64::new(bra * (lower - upper), 0.0)
            }
        }
    };
    let half_width = (2.0 * levels as f64 + 1.0).sqrt() + 10.0;
    let panels = 4 * levels + 8;
    let result = quadrature::integrate(integrand, -half_width, half_width, ORACLE_TOLERANCE, panels, 20_000)?;
    Ok(match kind {
        OracleKind::Position => result.value * a_osc,
        // p = -i hbar d/dz = -i (hbar / a) d/dx
        OracleKind::Momentum => result.value * Complex64::new(0.0, -HBAR / a_osc),
        _ => result.value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oscillator::{displacement_matrix, momentum_matrix, position_matrix, trig_matrices};

    const A: f64 = 4.0e-8;

    #[test]
    fn hermite_functions_are_orthonormal() {
        let r = quadrature::integrate(
            |x| {
                let phi = hermite_functions(x, 7);
                Complex64::new(phi[7] * phi[7], phi[3] * phi[5])
            },
            -20.0,
            20.0,
            1e-13,
            32,
            2000,
        )
        .unwrap();
        assert!((r.value - Complex64::new(1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn parity_and_ladder_examples() {
        assert!(quadrature_oracle(0, 0, 0.0, OracleKind::Position, A).unwrap().norm() < 1e-12 * A);
        let z01 = quadrature_oracle(0, 1, 0.0, OracleKind::Position, A).unwrap();
        assert!((z01.re - A / 2f64.sqrt()).abs() < 1e-12 * A);
    }

    #[test]
    fn ground_state_plane_wave() {
        for ka in [0.1, 0.37, 1.0] {
            let k = ka / A;
            let v00 = quadrature_oracle(0, 0, k, OracleKind::Exp, A).unwrap();
            assert!((v00 - Complex64::new((-ka * ka / 4.0f64).exp(), 0.0)).norm() < 1e-12);
            let v10 = quadrature_oracle(1, 0, k, OracleKind::Exp, A).unwrap();
            let expected = Complex64::new(0.0, ka / 2f64.sqrt() * (-ka * ka / 4.0f64).exp());
            assert!((v10 - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn agrees_with_closed_forms() {
        let ka = 0.4;
        let d = displacement_matrix(ka, 6);
        let v = quadrature_oracle(3, 1, ka / A, OracleKind::Exp, A).unwrap();
        assert!((v - d.get(3, 1)).norm() < 1e-10);

        let kla = 0.184;
        let (sin, cos) = trig_matrices(2.0 * kla, 6);
        let s10 = quadrature_oracle(1, 0, 2.0 * kla / A, OracleKind::Sin, A).unwrap();
        assert!((s10 - sin.get(1, 0)).norm() < 1e-10);
        let c00 = quadrature_oracle(0, 0, 2.0 * kla / A, OracleKind::Cos, A).unwrap();
        assert!((c00 - cos.get(0, 0)).norm() < 1e-10);

        let z = position_matrix(A, 6);
        let p = momentum_matrix(A, 6);
        for (n, m) in [(2, 3), (4, 3), (1, 1)] {
            let zq = quadrature_oracle(n, m, 0.0, OracleKind::Position, A).unwrap();
            assert!((zq - z.get(n, m)).norm() < 1e-10 * A);
            let pq = quadrature_oracle(n, m, 0.0, OracleKind::Momentum, A).unwrap();
            assert!((pq - p.get(n, m)).norm() < 1e-10 * HBAR / A);
        }
    }

    #[test]
    fn rejects_levels_beyond_recurrence_range() {
        assert_eq!(quadrature_oracle(61, 0, 1.0, OracleKind::Exp, A), Err(OracleError::LevelTooHigh(61)));
    }
}
