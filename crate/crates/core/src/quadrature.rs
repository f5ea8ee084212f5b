//! Globally adaptive Gauss-Kronrod (7/15) quadrature for complex integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;
use thiserror::Error;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_64, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("tolerance {requested:e} not reached: error estimate {achieved:e} after {intervals} intervals")]
    ToleranceNotReached { requested: f64, achieved: f64, intervals: usize },
    #[error("integrand returned a non-finite value at x = {x}")]
    NonFinite { x: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: Complex64,
    pub error_estimate: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: Complex64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod_panel<F: FnMut(f64) -> Complex64>(f: &mut F, a: f64, b: f64) -> Result<Panel, QuadratureError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut eval = |x: f64| {
        let v = f(x);
        if v.re.is_finite() && v.im.is_finite() {
            Ok(v)
        } else {
            Err(QuadratureError::NonFinite { x })
        }
    };
    let fc = eval(center)?;
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = eval(center - dx)? + eval(center + dx)?;
        kronrod += pair * w;
        if j % 2 == 1 {
            gauss += pair * WG[j / 2];
        }
    }
    Ok(Panel { a, b, value: kronrod * half, error: ((kronrod - gauss) * half).norm() })
}

/// Integrates `f` over `[a, b]` to absolute tolerance `abs_tol`.
///
/// The interval is first cut into `initial_panels` equal pieces; the panel
/// with the largest error estimate is bisected until the summed estimate
/// drops below the tolerance or `max_panels` is exhausted.
pub fn integrate<F: FnMut(f64) -> Complex64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    initial_panels: usize,
    max_panels: usize,
) -> Result<QuadratureResult, QuadratureError> {
    let initial_panels = initial_panels.max(1);
    let width = (b - a) / initial_panels as f64;
    let mut heap = BinaryHeap::with_capacity(max_panels + 1);
    for i in 0..initial_panels {
        let lo = a + width * i as f64;
        let hi = if i + 1 == initial_panels { b } else { lo + width };
        heap.push(kronrod_panel(&mut f, lo, hi)?);
    }
    loop {
        let total_error: f64 = heap.iter().map(|p| p.error).sum();
        if total_error <= abs_tol {
            let value = heap.iter().map(|p| p.value).sum();
            return Ok(QuadratureResult { value, error_estimate: total_error, intervals: heap.len() });
        }
        if heap.len() >= max_panels {
            return Err(QuadratureError::ToleranceNotReached {
                requested: abs_tol,
                achieved: total_error,
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        heap.push(kronrod_panel(&mut f, worst.a, mid)?);
        heap.push(kronrod_panel(&mut f, mid, worst.b)?);
    }
}
