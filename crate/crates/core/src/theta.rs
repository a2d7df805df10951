//! The weight equation `Θ = G + T(Θ)`.
//!
//! `T(W) = (1/2π) ∫ Σ_j C_jᵀ g(−λ)ᵀ W g(λ) C_j dλ` with `g(λ) = (iλI − A)⁻¹`.
//! Since `g(λ)` is the Fourier transform of `e^{At}` on `t ≥ 0`, Parseval
//! turns the integral into `Σ_j C_jᵀ X C_j` where `X = ∫₀^∞ e^{Aᵀt} W e^{At} dt`
//! solves `AᵀX + XA = −W`. That Lyapunov route is the solver; direct
//! quadrature of the frequency integral is kept as an independent check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    inf_norm, is_finite, max_abs, spectral_norm, sym_basis, sym_dim, symmetrize, to_complex,
    unvec_sym, vec_sym, CMat, LyapunovSolver, Mat,
};
use crate::model::{CostModel, SystemModel};
use crate::quadrature;
use crate::serde_mat;

pub const DEFAULT_MAX_ITER: usize = 10_000;

/// `g(λ) = (iλI − A)⁻¹`.
#[derive(Debug, Clone, Copy)]
pub struct TransferFunction<'a> {
    a: &'a Mat,
}

impl<'a> TransferFunction<'a> {
    pub fn new(a: &'a Mat) -> Self {
        Self { a }
    }

    fn resolvent_arg(&self, lambda: f64) -> CMat {
        let n = self.a.nrows();
        let mut m = -to_complex(self.a);
        for i in 0..n {
            m[(i, i)].im += lambda;
        }
        m
    }

    pub fn eval(&self, lambda: f64) -> Result<CMat> {
        self.resolvent_arg(lambda).try_inverse().ok_or_else(|| {
            Error::Numerical(format!("iλI − A is singular at λ = {lambda}"))
        })
    }

    /// `g(λ)·rhs` without forming the inverse.
    pub fn apply(&self, lambda: f64, rhs: &Mat) -> Result<CMat> {
        self.resolvent_arg(lambda)
            .lu()
            .solve(&to_complex(rhs))
            .ok_or_else(|| Error::Numerical(format!("iλI − A is singular at λ = {lambda}")))
    }
}

/// The operator `T` with the Schur form of `A` cached.
#[derive(Debug, Clone)]
pub struct NoiseOperator {
    lyap: LyapunovSolver,
    noise: Vec<Mat>,
}

impl NoiseOperator {
    pub fn new(sys: &SystemModel) -> Result<Self> {
        Ok(Self {
            lyap: LyapunovSolver::new(sys.a())?,
            noise: sys.noise().to_vec(),
        })
    }

    /// `X` with `AᵀX + XA = −W`.
    pub fn gramian(&self, w: &Mat) -> Result<Mat> {
        self.lyap.solve(w)
    }

    /// `Σ_j C_jᵀ X C_j` for a given Gramian `X`.
    pub fn apply_to_gramian(&self, x: &Mat) -> Mat {
        let n = x.nrows();
        let mut out = Mat::zeros(n, n);
        for c in &self.noise {
            out += c.transpose() * x * c;
        }
        symmetrize(&out)
    }

    pub fn apply(&self, w: &Mat) -> Result<Mat> {
        Ok(self.apply_to_gramian(&self.gramian(w)?))
    }
}

/// `T(W)` via the Lyapunov reduction.
pub fn apply_t(sys: &SystemModel, w: &Mat) -> Result<Mat> {
    NoiseOperator::new(sys)?.apply(w)
}

/// `T(W)` by adaptive quadrature of the frequency integral.
///
/// The integrand is even in `λ` after taking real parts, so `[0, ∞)` is
/// integrated and doubled. The substitution `λ = c·tan θ` makes the
/// half-line compact; frequencies beyond `Λ` are dropped and accounted for
/// by the bound `‖integrand‖ ≤ Σ‖C_j‖²‖W‖ / (2π(|λ| − ‖A‖)²)`.
pub fn quadrature_t(sys: &SystemModel, w: &Mat, rel_tol: f64) -> Result<Mat> {
    if !(1e-12..1e-2).contains(&rel_tol) {
        return Err(Error::Input(format!(
            "quadrature rel_tol must lie in (1e-12, 1e-2), got {rel_tol:e}"
        )));
    }
    let n = sys.n();
    let a_norm = spectral_norm(sys.a());
    let c = 1.0 + a_norm;
    let cutoff = 1e12 * c;
    let noise_sq: f64 = sys.noise().iter().map(|m| spectral_norm(m).powi(2)).sum();
    let tail = noise_sq * spectral_norm(w) / (std::f64::consts::PI * (cutoff - a_norm));
    let g = TransferFunction::new(sys.a());
    let wc = to_complex(w);
    let integrand = |theta: f64| -> Vec<f64> {
        let (s, co) = theta.sin_cos();
        let lambda = c * s / co;
        let jac = c / (co * co);
        let mut acc = Mat::zeros(n, n);
        for cj in sys.noise() {
            let z = g.apply(lambda, cj).expect("A is Hurwitz so iλI − A is invertible");
            let k = z.adjoint() * &wc * &z;
            acc += k.map(|v| v.re);
        }
        (acc * (jac / std::f64::consts::PI)).as_slice().to_vec()
    };
    let theta_max = (cutoff / c).atan();
    let res = quadrature::integrate(integrand, 0.0, theta_max, 1e-300, 0.5 * rel_tol, 20_000)?;
    let out = symmetrize(&Mat::from_column_slice(n, n, &res.value));
    let scale = max_abs(&out);
    let err = res.error + tail;
    if err > rel_tol * scale && err > 0.0 {
        return Err(Error::Convergence(format!(
            "frequency quadrature error {err:e} exceeds rel_tol {rel_tol:e} · {scale:e}"
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaMethod {
    Direct,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSolution {
    #[serde(with = "serde_mat::rows")]
    pub theta: Mat,
    /// Gramian of `Θ`: `AᵀX + XA = −Θ`.
    #[serde(with = "serde_mat::rows")]
    pub x: Mat,
    /// `‖Θ − G − T(Θ)‖_∞`.
    pub residual_eq4: f64,
    /// `‖AᵀX + XA + Σ C_jᵀ X C_j + G‖_∞`.
    pub residual_gramian: f64,
    pub method: ThetaMethod,
    pub iterations: usize,
}

/// Solves `Θ = G + T(Θ)`.
///
/// Callers are expected to have certified mean-square stability first; it
/// makes `I − T` invertible and the fixed-point map a contraction.
pub fn solve_theta(
    sys: &SystemModel,
    cost: &CostModel,
    method: ThetaMethod,
    tol: f64,
) -> Result<ThetaSolution> {
    solve_theta_with_cap(sys, cost, method, tol, DEFAULT_MAX_ITER)
}

pub fn solve_theta_with_cap(
    sys: &SystemModel,
    cost: &CostModel,
    method: ThetaMethod,
    tol: f64,
    max_iter: usize,
) -> Result<ThetaSolution> {
    cost.check_dims(sys)?;
    let op = NoiseOperator::new(sys)?;
    let g = cost.g();
    let (theta, iterations) = match method {
        ThetaMethod::Direct => (direct(&op, g)?, 1),
        ThetaMethod::FixedPoint => fixed_point(&op, g, tol, max_iter)?,
    };
    let x = op.gramian(&theta)?;
    let t_theta = op.apply_to_gramian(&x);
    let residual_eq4 = inf_norm(&(&theta - g - &t_theta));
    let residual_gramian = inf_norm(&(sys.a().transpose() * &x + &x * sys.a() + &t_theta + g));
    if residual_eq4 > tol * (1.0 + inf_norm(&theta)) {
        return Err(Error::Numerical(format!(
            "Θ residual {residual_eq4:e} exceeds tolerance {tol:e}"
        )));
    }
    Ok(ThetaSolution {
        theta,
        x,
        residual_eq4,
        residual_gramian,
        method,
        iterations,
    })
}

// (I − T) Θ = G on the n(n+1)/2-dimensional space of symmetric matrices.
fn direct(op: &NoiseOperator, g: &Mat) -> Result<Mat> {
    let n = g.nrows();
    let dim = sym_dim(n);
    let mut sys = Mat::identity(dim, dim);
    for k in 0..dim {
        let col = vec_sym(&op.apply(&sym_basis(n, k))?);
        let mut dst = sys.column_mut(k);
        dst -= col;
    }
    let lu = sys.lu();
    let u = lu.u();
    let diag = u.diagonal();
    let dmax = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dmin = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(dmin > 1e-13 * dmax.max(1.0)) {
        return Err(Error::Singular(format!(
            "I − T is numerically singular (smallest pivot {dmin:e})"
        )));
    }
    let sol = lu
        .solve(&vec_sym(g))
        .ok_or_else(|| Error::Singular("I − T is singular".into()))?;
    Ok(unvec_sym(&sol, n))
}

fn fixed_point(op: &NoiseOperator, g: &Mat, tol: f64, max_iter: usize) -> Result<(Mat, usize)> {
    let mut theta = g.clone();
    let mut smallest_step = f64::INFINITY;
    for it in 1..=max_iter {
        let next = g + op.apply(&theta)?;
        if !is_finite(&next) {
            return Err(Error::Convergence(format!(
                "fixed-point iterate became non-finite at iteration {it}"
            )));
        }
        let step = inf_norm(&(&next - &theta));
        theta = next;
        if step <= tol {
            return Ok((theta, it));
        }
        if step > 10.0 * smallest_step {
            return Err(Error::Convergence(format!(
                "fixed-point iteration diverging at iteration {it} (step {step:e})"
            )));
        }
        smallest_step = smallest_step.min(step);
    }
    Err(Error::Convergence(format!(
        "fixed-point iteration did not reach {tol:e} within {max_iter} iterations"
    )))
}
