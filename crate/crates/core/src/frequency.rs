//! The Hermitian form `F(x, u) = x*Θx + u*Γu` and the frequency condition
//! on `Π(λ) = (g(λ)b)* Θ (g(λ)b) + Γ`.
//!
//! `u*Π(λ)u = F(g(λ)bu, u)`, so positivity of the form along the frequency
//! response is positivity of `λ_min(Π(λ))` over `λ ∈ ℝ`. For real data
//! `Π(−λ) = Π(λ)ᵀ`, hence only `λ ≥ 0` is scanned.
//!
//! The scan is a branch-and-bound over intervals of `[0, λ_max]`. On an
//! interval with centre `c` and width `w`, Taylor's theorem with the bound
//! `‖Π''‖ ≤ 6‖Θ‖‖b‖²ĝ⁴` (ĝ bounds `‖g‖` on the interval) gives the certified
//! lower bound
//!
//! `min_± λ_min(Π(c) ± (w/2)Π'(c)) − ‖Π''‖ w²/8`,
//!
//! since `λ_min` is concave in the matrix and the linear part attains its
//! minimum at an endpoint. Intervals whose bound falls more than `tol/10`
//! below the best value found so far are bisected. Beyond `λ_max`,
//! `‖Π(λ) − Γ‖ ≤ ‖Θ‖‖b‖²/(λ − ‖A‖)² ≤ tol/10`.

use nalgebra::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    hermitian_min_eigenvalue, min_symmetric_eigenvalue, spectral_norm, to_complex, CMat, Mat,
};
use crate::model::SystemModel;

pub const DEFAULT_TOL: f64 = 1e-9;
/// Bound on `Π` evaluations before the scan gives up.
pub const DEFAULT_MAX_EVALUATIONS: usize = 200_000;

const UNIFORM_POINTS: usize = 64;
const GEOMETRIC_RATIO: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrequencyVerdict {
    /// `Π(λ) ⪰ δI` for all λ with `δ = delta_hat > tol`.
    StrictlyPositive,
    /// `|delta_hat| ≤ tol`: only the non-strict condition is plausible.
    NonnegativeOnly,
    /// `delta_hat < −tol`.
    Fails,
}

impl FrequencyVerdict {
    pub fn from_delta(delta_hat: f64, tol: f64) -> Self {
        if delta_hat > tol {
            FrequencyVerdict::StrictlyPositive
        } else if delta_hat < -tol {
            FrequencyVerdict::Fails
        } else {
            FrequencyVerdict::NonnegativeOnly
        }
    }

    /// What the verdict implies for the optimal control.
    pub fn existence(self) -> &'static str {
        match self {
            FrequencyVerdict::StrictlyPositive => "optimal control exists and is unique",
            FrequencyVerdict::NonnegativeOnly => {
                "undetermined: non-strict frequency condition only, existence not guaranteed"
            }
            FrequencyVerdict::Fails => "no optimal control: the frequency condition fails",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    /// Certified lower bound on `inf_λ λ_min(Π(λ))`.
    pub delta_hat: f64,
    /// Smallest evaluated `λ_min(Π)`; `delta_hat` lies within `tol/10` below it.
    pub min_eigenvalue: f64,
    /// Evaluated frequency achieving `min_eigenvalue`; `lambda_max` when
    /// the minimum is attained at infinity.
    pub lambda_argmin: f64,
    /// True when the minimum is the `λ = ∞` value `λ_min(Γ)`.
    pub argmin_at_infinity: bool,
    pub lambda_max: f64,
    pub grid_points: usize,
    pub tail_bound: f64,
    pub tol: f64,
    pub verdict: FrequencyVerdict,
    pub existence: String,
}

/// `x*Θx + u*Γu`.
pub fn hermitian_form_f(
    theta: &Mat,
    gamma: &Mat,
    x: &[Complex<f64>],
    u: &[Complex<f64>],
) -> Result<f64> {
    if theta.nrows() != x.len() || theta.ncols() != x.len() {
        return Err(Error::Dimension(format!(
            "Θ is {}×{} but x has length {}",
            theta.nrows(),
            theta.ncols(),
            x.len()
        )));
    }
    if gamma.nrows() != u.len() || gamma.ncols() != u.len() {
        return Err(Error::Dimension(format!(
            "Γ is {}×{} but u has length {}",
            gamma.nrows(),
            gamma.ncols(),
            u.len()
        )));
    }
    let quad = |w: &Mat, v: &[Complex<f64>]| -> (Complex<f64>, f64) {
        let mut s = Complex::new(0.0, 0.0);
        let mut scale = 0.0;
        for i in 0..v.len() {
            for j in 0..v.len() {
                let t = v[i].conj() * w[(i, j)] * v[j];
                s += t;
                scale += t.norm();
            }
        }
        (s, scale)
    };
    let (fx, sx) = quad(theta, x);
    let (fu, su) = quad(gamma, u);
    let total = fx + fu;
    let scale = sx + su;
    if total.im.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Invariant(format!(
            "Hermitian form has imaginary part {:e}; weights not symmetric",
            total.im
        )));
    }
    Ok(total.re)
}

/// `Π(λ) = (g(λ)b)* Θ (g(λ)b) + Γ`.
pub fn pi_matrix(sys: &SystemModel, theta: &Mat, gamma: &Mat, lambda: f64) -> Result<CMat> {
    check_dims(sys, theta, gamma)?;
    let pf = PopovFunction::new(sys, theta, gamma);
    Ok(pf.eval(lambda)?.pi)
}

fn check_dims(sys: &SystemModel, theta: &Mat, gamma: &Mat) -> Result<()> {
    let (n, m) = (sys.n(), sys.m());
    if theta.nrows() != n || theta.ncols() != n {
        return Err(Error::Dimension(format!(
            "Θ is {}×{}, expected {n}×{n}",
            theta.nrows(),
            theta.ncols()
        )));
    }
    if gamma.nrows() != m || gamma.ncols() != m {
        return Err(Error::Dimension(format!(
            "Γ is {}×{}, expected {m}×{m}",
            gamma.nrows(),
            gamma.ncols()
        )));
    }
    Ok(())
}

struct PopovFunction {
    a: CMat,
    b: CMat,
    theta: CMat,
    gamma: CMat,
}

struct Local {
    pi: CMat,
    dpi: CMat,
    /// Frobenius norm of `g(λ)`, an upper bound on its spectral norm.
    g_norm: f64,
}

impl PopovFunction {
    fn new(sys: &SystemModel, theta: &Mat, gamma: &Mat) -> Self {
        Self {
            a: to_complex(sys.a()),
            b: to_complex(sys.b()),
            theta: to_complex(theta),
            gamma: to_complex(gamma),
        }
    }

    fn eval(&self, lambda: f64) -> Result<Local> {
        let n = self.a.nrows();
        let mut s = -self.a.clone();
        for i in 0..n {
            s[(i, i)].im += lambda;
        }
        let g = s
            .try_inverse()
            .ok_or_else(|| Error::Numerical(format!("iλI − A is singular at λ = {lambda}")))?;
        let z = &g * &self.b;
        // d/dλ g(λ) = −i g(λ)²
        let dz = (&g * &z) * Complex::new(0.0, -1.0);
        let tz = &self.theta * &z;
        let pi = z.adjoint() * &tz + &self.gamma;
        let dpi = dz.adjoint() * &tz + z.adjoint() * (&self.theta * &dz);
        let scale = 1.0 + pi.norm();
        let asym = (&pi - pi.adjoint()).norm();
        if asym > 1e-12 * scale {
            return Err(Error::Invariant(format!(
                "Π(λ) is not Hermitian at λ = {lambda} (‖Π − Π*‖ = {asym:e})"
            )));
        }
        Ok(Local {
            pi: hermitian_part(&pi),
            dpi: hermitian_part(&dpi),
            g_norm: g.norm(),
        })
    }
}

fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()) * Complex::new(0.5, 0.0)
}

struct Interval {
    lo: f64,
    hi: f64,
}

struct Assessed {
    value: f64,
    lower: f64,
}

/// Decides the frequency condition with a certified scan. `tol` is both the
/// verdict threshold and ten times the certification slack.
pub fn check_frequency_condition(
    sys: &SystemModel,
    theta: &Mat,
    gamma: &Mat,
    tol: f64,
) -> Result<FrequencyReport> {
    check_frequency_condition_with_budget(sys, theta, gamma, tol, DEFAULT_MAX_EVALUATIONS)
}

pub fn check_frequency_condition_with_budget(
    sys: &SystemModel,
    theta: &Mat,
    gamma: &Mat,
    tol: f64,
    max_evaluations: usize,
) -> Result<FrequencyReport> {
    check_dims(sys, theta, gamma)?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Input(format!("frequency tolerance must be positive, got {tol}")));
    }
    let pf = PopovFunction::new(sys, theta, gamma);
    let a_norm = spectral_norm(sys.a());
    let k = spectral_norm(theta) * spectral_norm(sys.b()).powi(2);
    let slack = tol / 10.0;
    let near = 10.0 * (1.0 + a_norm);
    let lambda_max = near.max(a_norm + (k / slack).sqrt());
    let tail_bound = k / (lambda_max - a_norm).powi(2);
    let gamma_min = min_symmetric_eigenvalue(gamma)?;
    let m2_const = 6.0 * k;

    let mut grid: Vec<f64> = (0..=UNIFORM_POINTS)
        .map(|i| near.min(lambda_max) * i as f64 / UNIFORM_POINTS as f64)
        .collect();
    let mut x = near;
    while x < lambda_max {
        x = (x * GEOMETRIC_RATIO).min(lambda_max);
        grid.push(x);
    }
    let mut pending: Vec<Interval> = grid
        .windows(2)
        .map(|w| Interval { lo: w[0], hi: w[1] })
        .collect();

    let mut best = gamma_min;
    let mut argmin = f64::INFINITY;
    let endpoint_values: Vec<f64> = grid
        .par_iter()
        .map(|&l| hermitian_min_eigenvalue(&pf.eval(l)?.pi))
        .collect::<Result<_>>()?;
    let mut evaluations = grid.len();
    for (&l, &v) in grid.iter().zip(&endpoint_values) {
        if v < best {
            best = v;
            argmin = l;
        }
    }

    let assess = |iv: &Interval| -> Result<Assessed> {
        let c = 0.5 * (iv.lo + iv.hi);
        let w = iv.hi - iv.lo;
        let loc = pf.eval(c)?;
        let value = hermitian_min_eigenvalue(&loc.pi)?;
        let sigma = 1.0 / loc.g_norm - 0.5 * w;
        let lower = if sigma <= 0.0 {
            f64::NEG_INFINITY
        } else {
            let g_hat = 1.0 / sigma;
            let m2 = m2_const * g_hat.powi(4);
            let half = Complex::new(0.5 * w, 0.0);
            let step = &loc.dpi * half;
            let lo = hermitian_min_eigenvalue(&(&loc.pi - &step))?;
            let hi = hermitian_min_eigenvalue(&(&loc.pi + &step))?;
            lo.min(hi) - m2 * w * w / 8.0
        };
        Ok(Assessed { value, lower })
    };

    let mut delta_hat = gamma_min - tail_bound;
    while !pending.is_empty() {
        if evaluations + pending.len() > max_evaluations {
            return Err(Error::Convergence(format!(
                "frequency scan exhausted {max_evaluations} evaluations with {} open intervals \
                 (best λ_min {best:e})",
                pending.len()
            )));
        }
        let assessed: Vec<Assessed> = pending.par_iter().map(&assess).collect::<Result<_>>()?;
        evaluations += pending.len();
        for (iv, a) in pending.iter().zip(&assessed) {
            if a.value < best {
                best = a.value;
                argmin = 0.5 * (iv.lo + iv.hi);
            }
        }
        let mut next = Vec::new();
        for (iv, a) in pending.iter().zip(&assessed) {
            if a.lower < best - slack {
                let mid = 0.5 * (iv.lo + iv.hi);
                if mid <= iv.lo || mid >= iv.hi {
                    return Err(Error::Convergence(format!(
                        "frequency interval around λ = {mid} cannot be refined further"
                    )));
                }
                next.push(Interval { lo: iv.lo, hi: mid });
                next.push(Interval { lo: mid, hi: iv.hi });
            } else {
                delta_hat = delta_hat.min(a.lower);
            }
        }
        pending = next;
    }
    delta_hat = delta_hat.min(best);

    let verdict = FrequencyVerdict::from_delta(delta_hat, tol);
    Ok(FrequencyReport {
        delta_hat,
        min_eigenvalue: best,
        lambda_argmin: if argmin.is_finite() { argmin } else { lambda_max },
        argmin_at_infinity: argmin.is_infinite(),
        lambda_max,
        grid_points: evaluations,
        tail_bound,
        tol,
        verdict,
        existence: verdict.existence().to_string(),
    })
}
