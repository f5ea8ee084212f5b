//! Harmonic-oscillator basis matrix elements.
//!
//! All matrices live on levels `0..=n_max` of a single lattice well with
//! oscillator length `a_osc`. Plane waves use the associated-Laguerre closed
//! form; the trigonometric lattice harmonics are assembled from a pair of
//! plane waves with the parity selection rules imposed exactly.

pub mod oracle;

use std::fmt;

use num_complex::Complex64;
use serde::Serialize;

use crate::params::{DerivedParams, HBAR};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Which operator a matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum OperatorLabel {
    /// exp(i k z) with the given k a_osc.
    PlaneWave { ka: f64 },
    /// sin(q z) with the given q a_osc.
    Sin { qa: f64 },
    /// cos(q z) with the given q a_osc.
    Cos { qa: f64 },
    /// z in metres.
    Position { a_osc: f64 },
    /// p in kg m/s.
    Momentum { a_osc: f64 },
}

impl fmt::Display for OperatorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::PlaneWave { ka } => write!(f, "exp(ikz), k a_osc = {ka}"),
            Self::Sin { qa } => write!(f, "sin(qz), q a_osc = {qa}"),
            Self::Cos { qa } => write!(f, "cos(qz), q a_osc = {qa}"),
            Self::Position { a_osc } => write!(f, "z, a_osc = {a_osc} m"),
            Self::Momentum { a_osc } => write!(f, "p, a_osc = {a_osc} m"),
        }
    }
}

/// Dense complex matrix on the truncated oscillator basis.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    n_max: usize,
    entries: Vec<Complex64>,
    label: OperatorLabel,
}

impl OperatorMatrix {
    fn from_fn(n_max: usize, label: OperatorLabel, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let dim = n_max + 1;
        let mut entries = Vec::with_capacity(dim * dim);
        for row in 0..dim {
            for col in 0..dim {
                entries.push(f(row, col));
            }
        }
        Self { n_max, entries, label }
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn label(&self) -> OperatorLabel {
        self.label
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[row * self.dim() + col]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// Real parts in row-major order.
    pub fn real_entries(&self) -> Vec<f64> {
        self.entries.iter().map(|z| z.re).collect()
    }

    pub fn adjoint(&self) -> Self {
        let dim = self.dim();
        Self {
            n_max: self.n_max,
            entries: (0..dim * dim).map(|idx| self.entries[(idx % dim) * dim + idx / dim].conj()).collect(),
            label: self.label,
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "matrix dimension mismatch");
        let dim = self.dim();
        Self::from_fn(self.n_max, self.label, |row, col| (0..dim).map(|k| self.get(row, k) * other.get(k, col)).sum())
    }

    /// M v.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.dim(), "vector length does not match the basis");
        self.entries.chunks_exact(self.dim()).map(|row| row.iter().zip(v).map(|(m, x)| m * x).sum()).collect()
    }

    /// v^dagger M v.
    pub fn expectation(&self, v: &[Complex64]) -> Complex64 {
        self.apply(v).iter().zip(v).map(|(mv, x)| x.conj() * mv).sum()
    }

    pub fn is_exactly_hermitian(&self) -> bool {
        let dim = self.dim();
        (0..dim).all(|r| (0..dim).all(|c| self.get(r, c) == self.get(c, r).conj()))
    }

    /// Largest |M_rc - I_rc| over the leading `block x block` sub-matrix.
    pub fn identity_deviation(&self, block: usize) -> f64 {
        let block = block.min(self.dim());
        let mut worst = 0.0f64;
        for r in 0..block {
            for c in 0..block {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((self.get(r, c) - target).norm());
            }
        }
        worst
    }
}

/// Leading block of a truncated exp(ikz) product that is free of edge
/// leakage for |k a_osc| <= 1.
pub fn truncation_safe_block(n_max: usize) -> usize {
    (n_max / 2).saturating_sub(1).max(1)
}

/// ln(n!) for n = 0..=n_max, accumulated as a sum of logs (log-Gamma at integers).
fn ln_factorials(n_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    for k in 1..=n_max {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

/// Generalised Laguerre polynomial L_n^(alpha)(x) by three-term recurrence.
pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + alpha - x) * cur - (kf + alpha) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// i^m.
fn i_pow(m: usize) -> Complex64 {
    match m % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

/// Magnitude-and-sign part of <n|exp(ikz)|n'> without the i^|n-n'| phase.
fn plane_wave_real_part(ka: f64, n: usize, m: usize, ln_fact: &[f64]) -> f64 {
    let eta = ka / std::f64::consts::SQRT_2;
    let (lo, hi) = if n <= m { (n, m) } else { (m, n) };
    let diff = hi - lo;
    let x = eta * eta;
    let lag = laguerre(lo, diff as f64, x);
    if diff == 0 {
        return (-0.5 * x).exp() * lag;
    }
    if eta == 0.0 {
        return 0.0;
    }
    let magnitude = (-0.5 * x + 0.5 * (ln_fact[lo] - ln_fact[hi]) + diff as f64 * eta.abs().ln()).exp();
    let sign = if eta < 0.0 && diff % 2 == 1 { -1.0 } else { 1.0 };
    sign * magnitude * lag
}

/// <n|exp(i k z)|n'> for dimensionless `ka` = k a_osc.
pub fn displacement_matrix(ka: f64, n_max: usize) -> OperatorMatrix {
    let ln_fact = ln_factorials(n_max);
    OperatorMatrix::from_fn(n_max, OperatorLabel::PlaneWave { ka }, |n, m| {
        if ka == 0.0 {
            return if n == m { Complex64::new(1.0, 0.0) } else { ZERO };
        }
        let diff = n.abs_diff(m);
        i_pow(diff) * plane_wave_real_part(ka, n, m, &ln_fact)
    })
}

/// sin(q z) and cos(q z) for dimensionless `qa` = q a_osc.
///
/// Both are real symmetric. sin couples only odd |n - n'|, cos only even;
/// the forbidden entries are exact zeros.
pub fn trig_matrices(qa: f64, n_max: usize) -> (OperatorMatrix, OperatorMatrix) {
    // (D(q) - D(-q)) / 2i and (D(q) + D(-q)) / 2 reduce to the imaginary and
    // real part of D(q), which is i^|n-n'| times a real number.
    let ln_fact = ln_factorials(n_max);
    let dim = n_max + 1;
    let mut sin = vec![ZERO; dim * dim];
    let mut cos = vec![ZERO; dim * dim];
    for n in 0..dim {
        for m in n..dim {
            let diff = m - n;
            let value = if qa == 0.0 {
                if diff == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                plane_wave_real_part(qa, n, m, &ln_fact)
            };
            // i^diff: real part for even diff, imaginary part for odd diff.
            let phase_sign = if diff % 4 < 2 { 1.0 } else { -1.0 };
            let entry = Complex64::new(phase_sign * value, 0.0);
            if diff % 2 == 0 {
                cos[n * dim + m] = entry;
                cos[m * dim + n] = entry;
            } else {
                sin[n * dim + m] = entry;
                sin[m * dim + n] = entry;
            }
        }
    }
    (
        OperatorMatrix { n_max, entries: sin, label: OperatorLabel::Sin { qa } },
        OperatorMatrix { n_max, entries: cos, label: OperatorLabel::Cos { qa } },
    )
}

/// z = a_osc (a + a^dagger) / sqrt 2, in metres.
pub fn position_matrix(a_osc: f64, n_max: usize) -> OperatorMatrix {
    OperatorMatrix::from_fn(n_max, OperatorLabel::Position { a_osc }, |n, m| {
        if n.abs_diff(m) == 1 {
            let upper = n.max(m) as f64;
            Complex64::new(a_osc * (0.5 * upper).sqrt(), 0.0)
        } else {
            ZERO
        }
    })
}

/// p = i hbar (a^dagger - a) / (sqrt 2 a_osc), in kg m/s.
pub fn momentum_matrix(a_osc: f64, n_max: usize) -> OperatorMatrix {
    OperatorMatrix::from_fn(n_max, OperatorLabel::Momentum { a_osc }, |n, m| {
        if n.abs_diff(m) == 1 {
            let upper = n.max(m) as f64;
            let value = HBAR * (0.5 * upper).sqrt() / a_osc;
            // a^dagger raises: <n+1|p|n> = +i, <n|p|n+1> = -i.
            if n > m {
                Complex64::new(0.0, value)
            } else {
                Complex64::new(0.0, -value)
            }
        } else {
            ZERO
        }
    })
}

/// Every matrix the mean-field model needs for one truncation.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    /// <n|exp(i k_c z)|n'>
    pub drive: OperatorMatrix,
    /// <n|exp(-i k_c z)|n'>
    pub drive_conj: OperatorMatrix,
    /// sin(2 k_L z)
    pub sin2: OperatorMatrix,
    /// cos(2 k_L z)
    pub cos2: OperatorMatrix,
    pub position: OperatorMatrix,
    pub momentum: OperatorMatrix,
}

impl OperatorSet {
    pub fn new(params: &DerivedParams, n_max: usize) -> Self {
        let (sin2, cos2) = trig_matrices(2.0 * params.eta_lattice, n_max);
        Self {
            drive: displacement_matrix(params.eta_clock, n_max),
            drive_conj: displacement_matrix(-params.eta_clock, n_max),
            sin2,
            cos2,
            position: position_matrix(params.a_osc, n_max),
            momentum: momentum_matrix(params.a_osc, n_max),
        }
    }

    pub fn n_max(&self) -> usize {
        self.drive.n_max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_wavevector_is_identity() {
        let d = displacement_matrix(0.0, 6);
        assert_eq!(d.identity_deviation(7), 0.0);
    }

    #[test]
    fn low_order_plane_wave_elements() {
        for ka in [0.1f64, 0.368, 1.0] {
            let d = displacement_matrix(ka, 8);
            let dw = (-ka * ka / 4.0).exp();
            assert!((d.get(0, 0) - Complex64::new(dw, 0.0)).norm() < 1e-15);
            let expected = Complex64::new(0.0, ka / 2f64.sqrt() * dw);
            assert!((d.get(1, 0) - expected).norm() < 1e-15);
            // even parity: complex symmetric
            assert_eq!(d.get(1, 0), d.get(0, 1));
        }
    }

    #[test]
    fn trig_low_order_elements() {
        let kla = 0.184;
        let (sin, cos) = trig_matrices(2.0 * kla, 10);
        assert_eq!(sin.get(0, 0), ZERO);
        assert!((cos.get(0, 0).re - (-kla * kla).exp()).abs() < 1e-15);
        let expected = 2f64.sqrt() * kla * (-kla * kla).exp();
        assert!((sin.get(1, 0).re - expected).abs() < 1e-15);
    }

    #[test]
    fn parity_zeros_are_exact_and_hermitian() {
        let (sin, cos) = trig_matrices(0.74, 20);
        for n in 0..=20 {
            for m in 0..=20 {
                let zero = Complex64::new(0.0, 0.0);
                if (n + m) % 2 == 0 {
                    assert!(sin.get(n, m) == zero, "sin({n},{m})");
                } else {
                    assert!(cos.get(n, m) == zero, "cos({n},{m})");
                }
            }
        }
        assert!(sin.is_exactly_hermitian());
        assert!(cos.is_exactly_hermitian());
        assert!(position_matrix(4e-8, 20).is_exactly_hermitian());
        let p = momentum_matrix(4e-8, 20);
        assert!(p.is_exactly_hermitian());
        assert!(p.entries().iter().all(|z| z.re == 0.0));
    }

    #[test]
    fn trig_matches_plane_wave_combination() {
        let qa = 0.368;
        let plus = displacement_matrix(qa, 12);
        let minus = displacement_matrix(-qa, 12);
        let (sin, cos) = trig_matrices(qa, 12);
        for n in 0..=12 {
            for m in 0..=12 {
                let s = (plus.get(n, m) - minus.get(n, m)) / Complex64::new(0.0, 2.0);
                let c = (plus.get(n, m) + minus.get(n, m)) * 0.5;
                assert!((s - sin.get(n, m)).norm() < 1e-15);
                assert!((c - cos.get(n, m)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn unitarity_on_safe_block() {
        // weak coupling: the full (n_max - 5) block is clean
        for n_max in [20usize, 40] {
            let d = displacement_matrix(0.1, n_max);
            assert!(d.matmul(&d.adjoint()).identity_deviation(n_max - 5) <= 1e-8);
        }
        for ka in [0.1, 0.37, 1.0] {
            for n_max in [20usize, 40] {
                let block = truncation_safe_block(n_max);
                let d = displacement_matrix(ka, n_max);
                let dd = d.matmul(&d.adjoint());
                assert!(dd.identity_deviation(block) <= 1e-8, "ka={ka} n_max={n_max}");
                let back = d.matmul(&displacement_matrix(-ka, n_max));
                assert!(back.identity_deviation(block) <= 1e-8);
            }
        }
    }

    #[test]
    fn ladder_identities() {
        let a = 3e-8;
        let z = position_matrix(a, 5);
        assert!((z.get(0, 1).re - a / 2f64.sqrt()).abs() < 1e-15 * a);
        let p = momentum_matrix(a, 5);
        assert!((p.get(1, 0).im - HBAR / (2f64.sqrt() * a)).abs() < 1e-15 * HBAR / a);
        // [z, p] = i hbar away from the truncation edge
        let zp = z.matmul(&p);
        let pz = p.matmul(&z);
        for n in 0..5 {
            let comm = zp.get(n, n) - pz.get(n, n);
            assert!((comm - Complex64::new(0.0, HBAR)).norm() < 1e-12 * HBAR);
        }
    }

    #[test]
    fn large_truncation_stays_finite() {
        let d = displacement_matrix(1.0, 80);
        assert!(d.entries().iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }
}
