//! Globally adaptive Gauss–Kronrod (7/15) quadrature for vector-valued
//! integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone)]
pub struct QuadratureResult {
    pub value: Vec<f64>,
    /// Sum over subintervals of `max_i |K_i − G_i|`.
    pub error: f64,
    pub evaluations: usize,
    pub intervals: usize,
}

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Panel {}

impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Panel {
    // Largest error first; ties broken by position so the order is total.
    fn cmp(&self, other: &Self) -> Ordering {
        self.error
            .total_cmp(&other.error)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

fn gk15<F: Fn(f64) -> Vec<f64>>(f: &F, a: f64, b: f64) -> (Vec<f64>, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let dim = fc.len();
    let mut kron: Vec<f64> = fc.iter().map(|v| v * WGK[7]).collect();
    let mut gauss: Vec<f64> = fc.iter().map(|v| v * WG[3]).collect();
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for i in 0..dim {
            let s = f1[i] + f2[i];
            kron[i] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[i] += WG[j / 2] * s;
            }
        }
    }
    let mut err = 0.0f64;
    for i in 0..dim {
        kron[i] *= half;
        gauss[i] *= half;
        err = err.max((kron[i] - gauss[i]).abs());
    }
    (kron, err)
}

/// Integrates `f` over `[a, b]` until the summed error estimate is at most
/// `max(abs_tol, rel_tol·‖I‖_∞)`, bisecting the worst panel each round.
pub fn integrate<F: Fn(f64) -> Vec<f64>>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<QuadratureResult> {
    let (value, error) = gk15(&f, a, b);
    let dim = value.len();
    let mut heap = BinaryHeap::new();
    heap.push(Panel { a, b, value, error });
    let mut evaluations = 15;
    loop {
        let total = sum_panels(heap.iter(), dim);
        let err: f64 = heap.iter().map(|p| p.error).sum();
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !err.is_finite() || !scale.is_finite() {
            return Err(Error::Numerical("integrand is not finite on the interval".into()));
        }
        if err <= abs_tol.max(rel_tol * scale) {
            return Ok(QuadratureResult {
                value: total,
                error: err,
                evaluations,
                intervals: heap.len(),
            });
        }
        if heap.len() >= max_intervals {
            return Err(Error::Convergence(format!(
                "adaptive quadrature reached {max_intervals} panels with error {err:e}"
            )));
        }
        let worst = heap.pop().expect("non-empty heap");
        let mid = 0.5 * (worst.a + worst.b);
        for (lo, hi) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = gk15(&f, lo, hi);
            heap.push(Panel { a: lo, b: hi, value, error });
        }
        evaluations += 30;
    }
}

// Panel sums in left-to-right order, so the result does not depend on heap layout.
fn sum_panels<'a>(panels: impl Iterator<Item = &'a Panel>, dim: usize) -> Vec<f64> {
    let mut sorted: Vec<&Panel> = panels.collect();
    sorted.sort_by(|p, q| p.a.total_cmp(&q.a));
    let mut total = vec![0.0; dim];
    for p in sorted {
        for (t, v) in total.iter_mut().zip(&p.value) {
            *t += v;
        }
    }
    total
}
