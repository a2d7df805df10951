//! The equivalent deterministic problem `y' = Ay + bu`, `y(0) = 𝔼a`,
//! `∫ yᵀΘy + uᵀΓu dt → min`, and the feedback law that solves it.
//!
//! The stabilizing solution of `AᵀP + PA − PSP + Θ = 0`, `S = bΓ⁻¹bᵀ`, is
//! read off the stable invariant subspace of the Hamiltonian
//! `[[A, −S], [−Θ, −Aᵀ]]` (complex Schur form, reordered) and polished with
//! Newton steps. Θ may be indefinite.

use nalgebra::{Complex, Schur};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::{FrequencyReport, FrequencyVerdict};
use crate::linalg::{
    inf_norm, spectral_abscissa, symmetric_eigenvalues, symmetrize, to_complex, CMat,
    LyapunovSolver, Mat, Vector,
};
use crate::model::{ControlSignal, InitialState, SystemModel};
use crate::serde_mat;

/// Decay demanded of `‖y(T)‖/‖y(0)‖` when the horizon is chosen automatically.
pub const AUTO_HORIZON_DECAY: f64 = 1e-8;

const NEWTON_STEPS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackLaw {
    #[serde(rename = "P", with = "serde_mat::rows")]
    pub p: Mat,
    /// `u(t) = hᵀ y(t)`.
    #[serde(with = "serde_mat::rows")]
    pub h: Mat,
    #[serde(rename = "A_cl", with = "serde_mat::rows")]
    pub a_cl: Mat,
    pub riccati_residual: f64,
    pub closed_loop_abscissa: f64,
    /// `ε` in `Γ + εI` when the law was computed with a regularized weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<f64>,
}

impl FeedbackLaw {
    pub fn from_json(text: &str) -> Result<Self> {
        let law: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let n = law.p.nrows();
        if law.p.ncols() != n || law.a_cl.shape() != (n, n) || law.h.nrows() != n {
            return Err(Error::Dimension("law.json has inconsistent shapes".into()));
        }
        Ok(law)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("law serializes")
    }

    /// `u(t) = hᵀ e^{A_cl t} y0`.
    pub fn control(&self, y0: Vector) -> Result<ControlSignal> {
        ControlSignal::feedback(self.h.clone(), self.a_cl.clone(), y0)
    }
}

/// `‖AᵀP + PA − PSP + Θ‖_∞`.
pub fn riccati_residual(a: &Mat, s: &Mat, theta: &Mat, p: &Mat) -> f64 {
    inf_norm(&riccati_map(a, s, theta, p))
}

fn riccati_map(a: &Mat, s: &Mat, theta: &Mat, p: &Mat) -> Mat {
    a.transpose() * p + p * a - p * s * p + theta
}

/// Stabilizing solution of the LQR Riccati equation.
pub fn solve_deterministic_lqr(sys: &SystemModel, theta: &Mat, gamma: &Mat) -> Result<FeedbackLaw> {
    let (n, m) = (sys.n(), sys.m());
    if theta.shape() != (n, n) || gamma.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "LQR weights must be {n}×{n} and {m}×{m}, got {:?} and {:?}",
            theta.shape(),
            gamma.shape()
        )));
    }
    let theta = symmetrize(theta);
    let gamma = symmetrize(gamma);
    let ev = symmetric_eigenvalues(&gamma)?;
    let gmax = ev.iter().fold(0.0f64, |s, x| s.max(x.abs()));
    let gmin = ev.iter().fold(f64::INFINITY, |s, x| s.min(x.abs()));
    if !(gmax > 0.0) || gmin <= 1e-12 * gmax {
        return Err(Error::Singular(format!(
            "Γ is numerically singular (|eigenvalues| in [{gmin:e}, {gmax:e}])"
        )));
    }
    let gamma_inv = gamma
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("Γ is not invertible".into()))?;
    let gamma_inv = symmetrize(&gamma_inv);
    let a = sys.a();
    let b = sys.b();
    let s = symmetrize(&(b * &gamma_inv * b.transpose()));

    let mut p = hamiltonian_solution(a, &s, &theta)?;
    let mut res = riccati_residual(a, &s, &theta, &p);
    for _ in 0..NEWTON_STEPS {
        let ak = a - &s * &p;
        let Ok(lyap) = LyapunovSolver::new(&ak) else { break };
        let r = riccati_map(a, &s, &theta, &p);
        let Ok(delta) = lyap.solve(&r) else { break };
        let cand = symmetrize(&(&p + delta));
        let cand_res = riccati_residual(a, &s, &theta, &cand);
        if !(cand_res < res) {
            break;
        }
        p = cand;
        res = cand_res;
    }

    let a_cl = a - &s * &p;
    let abscissa = spectral_abscissa(&a_cl)?;
    if abscissa >= 0.0 {
        return Err(Error::Riccati(format!(
            "closed loop is not Hurwitz (abscissa {abscissa:e})"
        )));
    }
    let scale = 1.0 + inf_norm(&theta) + 2.0 * inf_norm(a) * inf_norm(&p) + inf_norm(&s) * inf_norm(&p).powi(2);
    if !(res <= 1e-10 * scale) {
        return Err(Error::Riccati(format!(
            "Riccati residual {res:e} exceeds 1e-10 relative to scale {scale:e}"
        )));
    }
    let h = -(&p * b * &gamma_inv);
    Ok(FeedbackLaw {
        p,
        h,
        a_cl,
        riccati_residual: res,
        closed_loop_abscissa: abscissa,
        regularization: None,
    })
}

/// Applies the frequency gate before solving. A `NonnegativeOnly` verdict is
/// refused unless `regularization = Some(ε)`, in which case `Γ + εI` is used.
/// A `Fails` verdict is always refused.
pub fn solve_gated(
    sys: &SystemModel,
    theta: &Mat,
    gamma: &Mat,
    report: &FrequencyReport,
    regularization: Option<f64>,
) -> Result<FeedbackLaw> {
    match report.verdict {
        FrequencyVerdict::StrictlyPositive => solve_deterministic_lqr(sys, theta, gamma),
        FrequencyVerdict::NonnegativeOnly => match regularization {
            Some(eps) if eps > 0.0 => {
                let m = gamma.nrows();
                let mut law =
                    solve_deterministic_lqr(sys, theta, &(gamma + Mat::identity(m, m) * eps))?;
                law.regularization = Some(eps);
                Ok(law)
            }
            Some(eps) => Err(Error::Input(format!("regularization must be positive, got {eps}"))),
            None => Err(Error::Gate(format!(
                "delta_hat = {:e} is within tolerance of 0; existence is {}; \
                 pass a regularization ε to solve with Γ + εI",
                report.delta_hat, "undetermined"
            ))),
        },
        FrequencyVerdict::Fails => Err(Error::Gate(format!(
            "frequency condition fails (delta_hat = {:e})",
            report.delta_hat
        ))),
    }
}

// Stable invariant subspace of the Hamiltonian via a reordered complex Schur form.
fn hamiltonian_solution(a: &Mat, s: &Mat, theta: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-theta));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    let scale = h.norm().max(f64::MIN_POSITIVE);
    let schur = Schur::try_new(to_complex(&h), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Riccati("Hamiltonian Schur iteration did not converge".into()))?;
    let (mut q, mut t) = schur.unpack();
    let axis_tol = 1e-10 * scale;
    let mut stable = 0;
    for i in 0..2 * n {
        let re = t[(i, i)].re;
        if re.abs() <= axis_tol {
            return Err(Error::Riccati(format!(
                "Hamiltonian has an eigenvalue on the imaginary axis ({})",
                t[(i, i)]
            )));
        }
        if re < 0.0 {
            stable += 1;
        }
    }
    if stable != n {
        return Err(Error::Riccati(format!(
            "Hamiltonian has {stable} stable eigenvalues, expected {n}"
        )));
    }
    reorder_stable_first(&mut q, &mut t);
    let u11 = q.view((0, 0), (n, n)).into_owned();
    let u21 = q.view((n, 0), (n, n)).into_owned();
    let u11_inv = u11
        .try_inverse()
        .ok_or_else(|| Error::Riccati("stable subspace is not a graph (U11 singular)".into()))?;
    let pc = u21 * u11_inv;
    let p = pc.map(|z| z.re);
    let imag = pc.map(|z| z.im).norm();
    if imag > 1e-6 * (1.0 + p.norm()) {
        return Err(Error::Riccati(format!(
            "stable-subspace solution has imaginary part {imag:e}"
        )));
    }
    Ok(symmetrize(&p))
}

// Bubbles eigenvalues with negative real part to the leading block by
// adjacent unitary swaps, keeping `H = Q T Q*`.
fn reorder_stable_first(q: &mut CMat, t: &mut CMat) {
    let dim = t.nrows();
    let mut target = 0;
    for k in 0..dim {
        if t[(k, k)].re < 0.0 {
            let mut j = k;
            while j > target {
                swap_adjacent(q, t, j - 1);
                j -= 1;
            }
            target += 1;
        }
    }
}

fn swap_adjacent(q: &mut CMat, t: &mut CMat, k: usize) {
    let dim = t.nrows();
    let a = t[(k, k)];
    let b = t[(k + 1, k + 1)];
    let c = t[(k, k + 1)];
    let v0 = c;
    let v1 = b - a;
    let norm = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
    if norm == 0.0 {
        return;
    }
    let (v0, v1) = (v0 / norm, v1 / norm);
    // G = [[v0, −conj(v1)], [v1, conj(v0)]], first column an eigenvector for b.
    let g = [[v0, -v1.conj()], [v1, v0.conj()]];
    for col in 0..dim {
        let x = t[(k, col)];
        let y = t[(k + 1, col)];
        t[(k, col)] = g[0][0].conj() * x + g[1][0].conj() * y;
        t[(k + 1, col)] = g[0][1].conj() * x + g[1][1].conj() * y;
    }
    for row in 0..dim {
        let x = t[(row, k)];
        let y = t[(row, k + 1)];
        t[(row, k)] = x * g[0][0] + y * g[1][0];
        t[(row, k + 1)] = x * g[0][1] + y * g[1][1];
    }
    for row in 0..q.nrows() {
        let x = q[(row, k)];
        let y = q[(row, k + 1)];
        q[(row, k)] = x * g[0][0] + y * g[1][0];
        q[(row, k + 1)] = x * g[0][1] + y * g[1][1];
    }
    t[(k + 1, k)] = Complex::new(0.0, 0.0);
}

/// How far a sampled representation extends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Fixed(f64),
    /// Smallest grid time with `‖y(T)‖ ≤ AUTO_HORIZON_DECAY·‖y(0)‖`, capped at `max`.
    Auto { max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedControl {
    /// `u⁰(t) = hᵀ e^{A_cl t} 𝔼a`.
    pub feedback: ControlSignal,
    /// `u⁰` on `{0, dt, …, T}`, zero after `T`.
    pub sampled: Option<ControlSignal>,
    pub horizon: Option<f64>,
}

/// Builds `u⁰` from the law and the initial mean; optionally also samples it.
pub fn synthesize_control(
    law: &FeedbackLaw,
    init: &InitialState,
    sampling: Option<(Horizon, f64)>,
) -> Result<SynthesizedControl> {
    let y0 = init.mean().clone();
    let feedback = law.control(y0.clone())?;
    let Some((horizon, dt)) = sampling else {
        return Ok(SynthesizedControl {
            feedback,
            sampled: None,
            horizon: None,
        });
    };
    if !(dt > 0.0) {
        return Err(Error::Input(format!("sampling step must be positive, got {dt}")));
    }
    let step = (&law.a_cl * dt).exp();
    let ht = law.h.transpose();
    let y0_norm = y0.norm();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut y = y0;
    match horizon {
        Horizon::Fixed(t_end) => {
            if !(t_end >= dt) {
                return Err(Error::Input(format!(
                    "horizon {t_end} must be at least one step {dt}"
                )));
            }
            let steps = (t_end / dt).round() as usize;
            for k in 0..=steps {
                times.push(k as f64 * dt);
                values.push(&ht * &y);
                y = &step * y;
            }
        }
        Horizon::Auto { max } => {
            let mut k = 0usize;
            loop {
                let t = k as f64 * dt;
                times.push(t);
                values.push(&ht * &y);
                if k > 0 && y.norm() <= AUTO_HORIZON_DECAY * y0_norm {
                    break;
                }
                if y0_norm == 0.0 && k > 0 {
                    break;
                }
                if t + dt > max {
                    return Err(Error::Horizon(format!(
                        "‖y(t)‖/‖y(0)‖ = {:e} at t = {t}, above {AUTO_HORIZON_DECAY:e} within the cap {max}",
                        y.norm() / y0_norm
                    )));
                }
                y = &step * y;
                k += 1;
            }
        }
    }
    let t_end = *times.last().expect("at least one sample");
    Ok(SynthesizedControl {
        feedback,
        sampled: Some(ControlSignal::sampled(times, values)?),
        horizon: Some(t_end),
    })
}
