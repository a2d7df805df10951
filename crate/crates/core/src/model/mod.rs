//! Problem definition: the Itô system, the quadratic cost, and the initial
//! state moments.
//!
//! The controlled system is `dx = (A x + b u) dt + Σ_j C_j x dw_j` with
//! independent standard Wiener processes `w_j`, and the cost is
//! `∫₀^∞ E[xᵀ G x] + uᵀ Γ u dt`. Everything downstream only needs the first
//! two moments of the initial state, so that is all [`InitialState`] stores.

mod control;
mod io;

pub use control::{ControlSignal, FeedbackControl, SampledControl};
pub use io::{load_problem, parse_problem, save_problem, to_json_string, ProblemFile};

use crate::error::{Error, Result};
use crate::linalg::{inf_norm, is_finite, min_symmetric_eigenvalue, symmetrize, Mat, Vector};

/// Relative asymmetry accepted (and removed) when ingesting weights.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Tolerance on the least eigenvalue of the initial covariance.
pub const COVARIANCE_PSD_TOL: f64 = 1e-10;

/// Drift, control input and multiplicative noise channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: Mat,
    b: Mat,
    noise: Vec<Mat>,
}

impl SystemModel {
    pub fn new(a: Mat, b: Mat, noise: Vec<Mat>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}×{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "b must be {n}×m with m ≥ 1, got {}×{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if noise.is_empty() {
            return Err(Error::Dimension("at least one noise channel is required".into()));
        }
        for (j, c) in noise.iter().enumerate() {
            if c.nrows() != n || c.ncols() != n {
                return Err(Error::Dimension(format!(
                    "noise channel {j} must be {n}×{n}, got {}×{}",
                    c.nrows(),
                    c.ncols()
                )));
            }
        }
        if !is_finite(&a) || !is_finite(&b) || !noise.iter().all(is_finite) {
            return Err(Error::Invariant("system matrices contain non-finite entries".into()));
        }
        Ok(Self { a, b, noise })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn noise(&self) -> &[Mat] {
        &self.noise
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Control dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Number of noise channels.
    pub fn d(&self) -> usize {
        self.noise.len()
    }

    /// The same drift and input with a single zero noise channel.
    pub fn without_noise(&self) -> Self {
        let n = self.n();
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            noise: vec![Mat::zeros(n, n)],
        }
    }
}

/// Quadratic weights `G` (state) and `Γ` (control). Neither is required to
/// be definite.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    g: Mat,
    gamma: Mat,
}

impl CostModel {
    pub fn new(g: Mat, gamma: Mat) -> Result<Self> {
        if !is_finite(&g) || !is_finite(&gamma) {
            return Err(Error::Invariant("cost weights contain non-finite entries".into()));
        }
        let g = validate_symmetric(&g, SYMMETRY_TOL)?;
        let gamma = validate_symmetric(&gamma, SYMMETRY_TOL)?;
        Ok(Self { g, gamma })
    }

    /// Checks the weights against a system's dimensions.
    pub fn check_dims(&self, sys: &SystemModel) -> Result<()> {
        let (n, m) = (sys.n(), sys.m());
        if self.g.nrows() != n {
            return Err(Error::Dimension(format!(
                "G is {}×{}, expected {n}×{n}",
                self.g.nrows(),
                self.g.ncols()
            )));
        }
        if self.gamma.nrows() != m {
            return Err(Error::Dimension(format!(
                "Gamma is {}×{}, expected {m}×{m}",
                self.gamma.nrows(),
                self.gamma.ncols()
            )));
        }
        Ok(())
    }

    pub fn g(&self) -> &Mat {
        &self.g
    }

    pub fn gamma(&self) -> &Mat {
        &self.gamma
    }
}

/// First and second moments of the initial state `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    mean: Vector,
    second_moment: Mat,
    deterministic: bool,
}

impl InitialState {
    /// A deterministic initial state: `E aaᵀ = mean·meanᵀ`.
    pub fn deterministic(mean: Vector) -> Result<Self> {
        if !mean.iter().all(|x| x.is_finite()) {
            return Err(Error::Invariant("initial mean has non-finite entries".into()));
        }
        let second_moment = &mean * mean.transpose();
        Ok(Self {
            mean,
            second_moment,
            deterministic: true,
        })
    }

    /// A random initial state given by its mean and second moment. The
    /// state is flagged deterministic when the covariance vanishes.
    pub fn from_moments(mean: Vector, second_moment: Mat) -> Result<Self> {
        let n = mean.len();
        if second_moment.nrows() != n || second_moment.ncols() != n {
            return Err(Error::Dimension(format!(
                "second moment is {}×{}, expected {n}×{n}",
                second_moment.nrows(),
                second_moment.ncols()
            )));
        }
        if !mean.iter().all(|x| x.is_finite()) || !is_finite(&second_moment) {
            return Err(Error::Invariant("initial moments have non-finite entries".into()));
        }
        let second_moment = validate_symmetric(&second_moment, SYMMETRY_TOL)?;
        let outer = &mean * mean.transpose();
        let cov = &second_moment - &outer;
        let scale = 1.0 + inf_norm(&second_moment);
        if n > 0 {
            let lmin = min_symmetric_eigenvalue(&cov)?;
            if lmin < -COVARIANCE_PSD_TOL * scale {
                return Err(Error::Invariant(format!(
                    "initial covariance is not positive semidefinite (least eigenvalue {lmin:e})"
                )));
            }
        }
        if inf_norm(&cov) <= 1e-14 * scale {
            return Self::deterministic(mean);
        }
        Ok(Self {
            mean,
            second_moment,
            deterministic: false,
        })
    }

    /// Zero mean and zero second moment.
    pub fn zero(n: usize) -> Self {
        Self {
            mean: Vector::zeros(n),
            second_moment: Mat::zeros(n, n),
            deterministic: true,
        }
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn second_moment(&self) -> &Mat {
        &self.second_moment
    }

    pub fn covariance(&self) -> Mat {
        &self.second_moment - &self.mean * self.mean.transpose()
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// A complete, validated problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub system: SystemModel,
    pub cost: CostModel,
    pub init: InitialState,
}

impl Problem {
    pub fn new(system: SystemModel, cost: CostModel, init: InitialState) -> Result<Self> {
        cost.check_dims(&system)?;
        if init.dim() != system.n() {
            return Err(Error::Dimension(format!(
                "initial mean has length {}, expected {}",
                init.dim(),
                system.n()
            )));
        }
        Ok(Self { system, cost, init })
    }
}

/// Returns `(M + Mᵀ)/2` when `‖M − Mᵀ‖_∞ ≤ tol·(1 + ‖M‖_∞)`.
pub fn validate_symmetric(m: &Mat, tol: f64) -> Result<Mat> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = inf_norm(&(m - m.transpose()));
    if asym > tol * (1.0 + inf_norm(m)) {
        return Err(Error::Invariant(format!(
            "matrix is not symmetric (‖M − Mᵀ‖_∞ = {asym:e})"
        )));
    }
    Ok(symmetrize(m))
}
