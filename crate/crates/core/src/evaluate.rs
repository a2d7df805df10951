//! Exact evaluation of `Φ[u] = ∫₀^∞ 𝔼xᵀGx + uᵀΓu dt` through the moment
//! equations
//!
//! `m' = Am + bu`,
//! `M' = AM + MAᵀ + bumᵀ + muᵀbᵀ + Σ_j C_j M C_jᵀ`,
//!
//! and the decomposition `Φ = (u, Ru) + 2(r, u) + ρ` obtained from three runs
//! (full, zero initial state, zero control).
//!
//! Feedback parts `hᵀe^{A_cl t}y0` of the control are integrated as extra
//! states `y' = A_cl y`. After the last sampled knot, the pair `z = (x, y)`
//! is a closed linear system, so the remaining cost is exactly
//! `tr(X_z 𝔼zzᵀ(T))` with `X_z` the stochastic Gramian of the augmented
//! system. The horizon is doubled until that tail is below `tol·|Φ_T|`.
//! The tail is reported as the truncation bound and not added to the total.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lyap_solve, stochastic_gramian, Mat, Vector};
use crate::model::{ControlSignal, CostModel, FeedbackControl, InitialState, SystemModel};
use crate::ode::Dopri5;
use crate::stability::check_stability;

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_DOUBLINGS: usize = 16;

/// `(t, 𝔼x(t), 𝔼x(t)x(t)ᵀ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub t: f64,
    pub m: Vector,
    pub second_moment: Mat,
}

impl MomentState {
    pub fn covariance(&self) -> Mat {
        &self.second_moment - &self.m * self.m.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    /// `Φ[u]`.
    pub total: f64,
    /// `(u, Ru)`: the cost with zero initial state.
    pub quadratic: f64,
    /// `2(r, u) = total − quadratic − constant_rho`.
    pub cross: f64,
    /// `ρ`: the cost with `u = 0`.
    pub constant_rho: f64,
    /// Integration horizon reached by the full run.
    pub horizon: f64,
    /// `|cost beyond horizon|` for the full run.
    pub truncation_error_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub tol: f64,
    /// Starting horizon; defaults to `10/margin`.
    pub horizon: Option<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            horizon: None,
        }
    }
}

/// Result of a single cost run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRun {
    pub cost: f64,
    pub horizon: f64,
    pub tail: f64,
}

struct Runner<'a> {
    a: &'a Mat,
    b: &'a Mat,
    noise: &'a [Mat],
    weights: Option<(&'a Mat, &'a Mat)>,
    u: &'a ControlSignal,
    fb: Vec<&'a FeedbackControl>,
    knots: Vec<f64>,
    n: usize,
    state: Vec<f64>,
    t: f64,
    h: f64,
    solver: Dopri5,
}

impl<'a> Runner<'a> {
    fn new(
        sys: &'a SystemModel,
        weights: Option<(&'a Mat, &'a Mat)>,
        u: &'a ControlSignal,
        init: &InitialState,
        tol: f64,
    ) -> Result<Self> {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::Input(format!("tolerance must lie in (0, 1), got {tol}")));
        }
        u.check_dims(sys)?;
        if init.dim() != sys.n() {
            return Err(Error::Dimension(format!(
                "initial state has dimension {}, system has {}",
                init.dim(),
                sys.n()
            )));
        }
        u.check_square_integrable()?;
        let n = sys.n();
        let fb = u.feedback_parts();
        let mut state = Vec::with_capacity(n + n * n + fb.len() * n + 1);
        state.extend(init.mean().iter());
        state.extend(init.second_moment().iter());
        for f in &fb {
            state.extend(f.y0().iter());
        }
        state.push(0.0);
        // Magnitude used for the absolute tolerance.
        let mut scale = init.second_moment().amax().max(init.mean().amax().powi(2));
        let mut u_max = u.sampled_limits(0.0).1.amax();
        for s in u.sampled_parts() {
            for v in s.values() {
                u_max = u_max.max(v.amax());
            }
        }
        for f in &fb {
            u_max = u_max.max(f.value(0.0).amax());
        }
        scale = scale.max(u_max * u_max).max(f64::MIN_POSITIVE);
        Ok(Self {
            a: sys.a(),
            b: sys.b(),
            noise: sys.noise(),
            weights,
            u,
            fb,
            knots: u.knots(),
            n,
            state,
            t: 0.0,
            h: 0.0,
            solver: Dopri5::new(tol, 1e-3 * tol * scale),
        })
    }

    fn advance_to(&mut self, target: f64) -> Result<()> {
        while self.t < target {
            let seg_end = self
                .knots
                .iter()
                .copied()
                .find(|&k| k > self.t)
                .map_or(target, |k| k.min(target));
            let mut state = std::mem::take(&mut self.state);
            let mut h = self.h;
            let res = {
                let this = &*self;
                let mut f = |t: f64, y: &[f64], dy: &mut [f64]| this.rhs(t, seg_end, y, dy);
                let n = this.n;
                let mut post = |y: &mut [f64]| symmetrize_block(&mut y[n..n + n * n], n);
                this.solver
                    .integrate(&mut f, this.t, seg_end, &mut state, &mut h, &mut post)
            };
            self.state = state;
            self.h = h;
            res?;
            self.t = seg_end;
        }
        Ok(())
    }

    fn control(&self, t: f64, seg_end: f64, y: &[f64]) -> Vector {
        let n = self.n;
        // On [t_k, t_{k+1}] the sampled part is linear; use the left limit at
        // the right end so a jump at a knot is not seen early.
        let mut u = if t >= seg_end {
            self.u.sampled_limits(seg_end).0
        } else {
            self.u.sampled_limits(t).1
        };
        let base = n + n * n;
        for (i, f) in self.fb.iter().enumerate() {
            let yi = Vector::from_column_slice(&y[base + i * n..base + (i + 1) * n]);
            u += f.h().transpose() * yi;
        }
        u
    }

    fn rhs(&self, t: f64, seg_end: f64, y: &[f64], dy: &mut [f64]) {
        let n = self.n;
        let m = Vector::from_column_slice(&y[..n]);
        let mm = Mat::from_column_slice(n, n, &y[n..n + n * n]);
        let u = self.control(t, seg_end, y);
        let bu = self.b * &u;
        let dm = self.a * &m + &bu;
        let cross = &bu * m.transpose();
        let mut dmm = self.a * &mm + &mm * self.a.transpose() + &cross + cross.transpose();
        for c in self.noise {
            dmm += c * &mm * c.transpose();
        }
        dy[..n].copy_from_slice(dm.as_slice());
        dy[n..n + n * n].copy_from_slice(dmm.as_slice());
        let base = n + n * n;
        for (i, f) in self.fb.iter().enumerate() {
            let yi = Vector::from_column_slice(&y[base + i * n..base + (i + 1) * n]);
            let d = f.closed_loop() * yi;
            dy[base + i * n..base + (i + 1) * n].copy_from_slice(d.as_slice());
        }
        let last = dy.len() - 1;
        dy[last] = match self.weights {
            Some((g, gamma)) => (g * &mm).trace() + u.dot(&(gamma * &u)),
            None => 0.0,
        };
    }

    fn moments(&self) -> MomentState {
        let n = self.n;
        MomentState {
            t: self.t,
            m: Vector::from_column_slice(&self.state[..n]),
            second_moment: Mat::from_column_slice(n, n, &self.state[n..n + n * n]),
        }
    }

    fn cost(&self) -> f64 {
        self.state[self.state.len() - 1]
    }

    fn feedback_states(&self) -> Vec<Vector> {
        let n = self.n;
        let base = n + n * n;
        (0..self.fb.len())
            .map(|i| Vector::from_column_slice(&self.state[base + i * n..base + (i + 1) * n]))
            .collect()
    }
}

fn symmetrize_block(v: &mut [f64], n: usize) {
    for j in 0..n {
        for i in 0..j {
            let avg = 0.5 * (v[i + j * n] + v[j + i * n]);
            v[i + j * n] = avg;
            v[j + i * n] = avg;
        }
    }
}

/// Integrates the moment equations on `[0, horizon]` and samples them at
/// `output_times` (sorted, within the horizon).
pub fn integrate_moments(
    sys: &SystemModel,
    u: &ControlSignal,
    init: &InitialState,
    horizon: f64,
    tol: f64,
    output_times: &[f64],
) -> Result<Vec<MomentState>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Input(format!("horizon must be positive, got {horizon}")));
    }
    if output_times.windows(2).any(|w| w[1] < w[0])
        || output_times.iter().any(|&t| !(0.0..=horizon).contains(&t))
    {
        return Err(Error::Input("output times must be sorted and lie in [0, horizon]".into()));
    }
    let mut runner = Runner::new(sys, None, u, init, tol)?;
    let mut out = Vec::with_capacity(output_times.len());
    for &t in output_times {
        runner.advance_to(t)?;
        let mut s = runner.moments();
        s.t = t;
        out.push(s);
    }
    Ok(out)
}

/// Uniform output grid `{0, T/k, …, T}`.
pub fn uniform_times(horizon: f64, intervals: usize) -> Vec<f64> {
    (0..=intervals)
        .map(|i| horizon * i as f64 / intervals as f64)
        .collect()
}

/// The augmented closed system `z = (x, y_1, …, y_p)` driven by the
/// feedback parts only; returns `X_z`.
fn augmented_gramian(sys: &SystemModel, cost: &CostModel, fb: &[&FeedbackControl]) -> Result<Mat> {
    let n = sys.n();
    let dim = n * (1 + fb.len());
    let mut az = Mat::zeros(dim, dim);
    az.view_mut((0, 0), (n, n)).copy_from(sys.a());
    let mut f = Mat::zeros(sys.m(), dim - n);
    for (i, part) in fb.iter().enumerate() {
        let off = n * (i + 1);
        az.view_mut((0, off), (n, n)).copy_from(&(sys.b() * part.h().transpose()));
        az.view_mut((off, off), (n, n)).copy_from(part.closed_loop());
        f.view_mut((0, i * n), (sys.m(), n)).copy_from(&part.h().transpose());
    }
    let cz: Vec<Mat> = sys
        .noise()
        .iter()
        .map(|c| {
            let mut m = Mat::zeros(dim, dim);
            m.view_mut((0, 0), (n, n)).copy_from(c);
            m
        })
        .collect();
    let mut qz = Mat::zeros(dim, dim);
    qz.view_mut((0, 0), (n, n)).copy_from(cost.g());
    if !fb.is_empty() {
        let w = f.transpose() * cost.gamma() * &f;
        qz.view_mut((n, n), (dim - n, dim - n)).copy_from(&w);
    }
    stochastic_gramian(&az, &cz, &qz)
}

fn tail_cost(xz: &Mat, state: &MomentState, ys: &[Vector]) -> f64 {
    let n = state.m.len();
    let dim = xz.nrows();
    let mut mz = Mat::zeros(dim, dim);
    mz.view_mut((0, 0), (n, n)).copy_from(&state.second_moment);
    for (i, yi) in ys.iter().enumerate() {
        let off = n * (i + 1);
        let xy = &state.m * yi.transpose();
        mz.view_mut((0, off), (n, n)).copy_from(&xy);
        mz.view_mut((off, 0), (n, n)).copy_from(&xy.transpose());
        for (j, yj) in ys.iter().enumerate() {
            let off_j = n * (j + 1);
            mz.view_mut((off, off_j), (n, n)).copy_from(&(yi * yj.transpose()));
        }
    }
    (xz * mz).trace()
}

/// `Φ[u]` alone (one run), with the horizon extended until the exact tail
/// is below `tol·|Φ|`.
pub fn cost_total(
    sys: &SystemModel,
    cost: &CostModel,
    u: &ControlSignal,
    init: &InitialState,
    opts: &EvalOptions,
) -> Result<CostRun> {
    cost.check_dims(sys)?;
    let cert = check_stability(sys)?;
    if !cert.is_stable() {
        return Err(Error::Tail(format!(
            "system is not mean-square stable (margin {:e})",
            cert.margin
        )));
    }
    let mut runner = Runner::new(sys, Some((cost.g(), cost.gamma())), u, init, opts.tol)?;
    let mut decay = cert.margin;
    for f in &runner.fb {
        decay = decay.min(-crate::linalg::spectral_abscissa(f.closed_loop())?);
    }
    let xz = augmented_gramian(sys, cost, &runner.fb)?;
    let mut horizon = opts.horizon.unwrap_or(10.0 / decay).max(u.sampled_end());
    if !(horizon > 0.0) {
        horizon = 1.0;
    }
    for _ in 0..=MAX_DOUBLINGS {
        runner.advance_to(horizon)?;
        let tail = tail_cost(&xz, &runner.moments(), &runner.feedback_states());
        let total = runner.cost();
        if tail.abs() <= opts.tol * total.abs() || tail == 0.0 {
            return Ok(CostRun {
                cost: total,
                horizon,
                tail: tail.abs(),
            });
        }
        horizon *= 2.0;
    }
    Err(Error::Tail(format!(
        "cost tail still above {:e} relative at horizon {horizon}",
        opts.tol
    )))
}

/// Full decomposition `Φ = quadratic + cross + ρ`.
pub fn cost_phi(
    sys: &SystemModel,
    cost: &CostModel,
    u: &ControlSignal,
    init: &InitialState,
    tol: f64,
) -> Result<CostBreakdown> {
    cost_phi_with(sys, cost, u, init, &EvalOptions { tol, horizon: None })
}

pub fn cost_phi_with(
    sys: &SystemModel,
    cost: &CostModel,
    u: &ControlSignal,
    init: &InitialState,
    opts: &EvalOptions,
) -> Result<CostBreakdown> {
    let zero_init = InitialState::zero(sys.n());
    let zero_u = ControlSignal::zero(sys.m());
    let (full, (quad, rho)) = rayon::join(
        || cost_total(sys, cost, u, init, opts),
        || {
            rayon::join(
                || cost_total(sys, cost, u, &zero_init, opts),
                || cost_total(sys, cost, &zero_u, init, opts),
            )
        },
    );
    let (full, quad, rho) = (full?, quad?, rho?);
    Ok(CostBreakdown {
        total: full.cost,
        quadratic: quad.cost,
        cross: full.cost - quad.cost - rho.cost,
        constant_rho: rho.cost,
        horizon: full.horizon,
        truncation_error_bound: full.tail,
    })
}

/// Cost of `u` in the deterministic problem `y' = Ay + bu`, `y(0) = y0`,
/// `∫ yᵀΘy + uᵀΓu dt`, with the same decomposition. Its `cross` field is
/// `2∫ y_uᵀΘ y_a dt`.
pub fn deterministic_cost(
    sys: &SystemModel,
    theta: &Mat,
    gamma: &Mat,
    u: &ControlSignal,
    y0: &Vector,
    tol: f64,
) -> Result<CostBreakdown> {
    let det = sys.without_noise();
    let weights = CostModel::new(theta.clone(), gamma.clone())?;
    let init = InitialState::deterministic(y0.clone())?;
    cost_phi(&det, &weights, u, &init, tol)
}

/// `ρ = tr(X_G 𝔼aaᵀ)` for the stochastic problem and
/// `ρ₁ = 𝔼aᵀ X_Θ 𝔼a` for the deterministic one.
pub fn rho_and_rho1(
    sys: &SystemModel,
    cost: &CostModel,
    theta: &Mat,
    init: &InitialState,
) -> Result<(f64, f64)> {
    cost.check_dims(sys)?;
    let xg = stochastic_gramian(sys.a(), sys.noise(), cost.g())?;
    let rho = (xg * init.second_moment()).trace();
    let xt = lyap_solve(sys.a(), theta)?;
    let mean = init.mean();
    let rho1 = mean.dot(&(xt * mean));
    Ok((rho, rho1))
}

/// CSV with header `t,m_1..m_n,M_11,M_12,..,M_nn` (upper triangle, row-major).
pub fn moments_csv(traj: &[MomentState]) -> String {
    let n = traj.first().map_or(0, |s| s.m.len());
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",m_{i}");
    }
    for i in 1..=n {
        for j in i..=n {
            let _ = write!(out, ",M_{i}{j}");
        }
    }
    out.push('\n');
    for s in traj {
        let _ = write!(out, "{}", s.t);
        for v in s.m.iter() {
            let _ = write!(out, ",{v}");
        }
        for i in 0..n {
            for j in i..n {
                let _ = write!(out, ",{}", s.second_moment[(i, j)]);
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: f64) -> Mat {
        Mat::from_element(1, 1, x)
    }

    fn scalar(c: f64) -> SystemModel {
        SystemModel::new(s(-1.0), s(1.0), vec![s(c)]).unwrap()
    }

    fn one() -> InitialState {
        InitialState::deterministic(Vector::from_vec(vec![1.0])).unwrap()
    }

    #[test]
    fn scalar_second_moment_decays_as_exp() {
        let traj = integrate_moments(
            &scalar(1.0),
            &ControlSignal::zero(1),
            &one(),
            5.0,
            1e-10,
            &uniform_times(5.0, 10),
        )
        .unwrap();
        for st in &traj {
            assert!((st.second_moment[(0, 0)] - (-st.t).exp()).abs() < 1e-9);
            assert!((st.m[0] - (-st.t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_everything_stays_zero() {
        let traj = integrate_moments(
            &scalar(1.0),
            &ControlSignal::zero(1),
            &InitialState::zero(1),
            2.0,
            1e-10,
            &[0.0, 1.0, 2.0],
        )
        .unwrap();
        assert!(traj.iter().all(|s| s.m[0] == 0.0 && s.second_moment[(0, 0)] == 0.0));
    }

    #[test]
    fn scalar_rho_is_one() {
        let cost = CostModel::new(s(1.0), s(1.0)).unwrap();
        let b = cost_phi(&scalar(1.0), &cost, &ControlSignal::zero(1), &one(), 1e-10).unwrap();
        assert!((b.total - 1.0).abs() < 1e-8, "{b:?}");
        assert!((b.constant_rho - 1.0).abs() < 1e-8);
        assert_eq!(b.quadratic, 0.0);
        assert!(b.cross.abs() < 1e-8);
        let (rho, rho1) = rho_and_rho1(&scalar(1.0), &cost, &s(2.0), &one()).unwrap();
        assert!((rho - 1.0).abs() < 1e-14);
        assert!((rho1 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_problem_costs_nothing() {
        let cost = CostModel::new(s(1.0), s(1.0)).unwrap();
        let b = cost_phi(&scalar(1.0), &cost, &ControlSignal::zero(1), &InitialState::zero(1), 1e-10)
            .unwrap();
        assert_eq!(b.total, 0.0);
        let (rho, rho1) = rho_and_rho1(&scalar(1.0), &cost, &s(2.0), &InitialState::zero(1)).unwrap();
        assert_eq!((rho, rho1), (0.0, 0.0));
    }

    #[test]
    fn sampled_constant_control_closed_form() {
        // u = 1 on [0, 1): x = e^{−t}·(a) ... use noise-free to get closed form.
        let sys = SystemModel::new(s(-1.0), s(1.0), vec![s(0.0)]).unwrap();
        let cost = CostModel::new(s(0.0), s(1.0)).unwrap();
        let u = ControlSignal::sampled(
            vec![0.0, 1.0],
            vec![Vector::from_vec(vec![1.0]), Vector::from_vec(vec![1.0])],
        )
        .unwrap();
        let b = cost_phi(&sys, &cost, &u, &InitialState::zero(1), 1e-10).unwrap();
        assert!((b.total - 1.0).abs() < 1e-9, "{b:?}");
    }

    #[test]
    fn csv_header() {
        let st = MomentState {
            t: 0.0,
            m: Vector::from_vec(vec![1.0, 2.0]),
            second_moment: Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]),
        };
        let csv = moments_csv(&[st]);
        assert_eq!(csv, "t,m_1,m_2,M_11,M_12,M_22\n0,1,2,1,2,4\n");
    }
}
