use super::SystemModel;
use crate::error::{Error, Result};
use crate::linalg::{is_finite, spectral_abscissa, Mat, Vector};

/// `u(t) = hᵀ e^{A_cl t} y0` with `A_cl = A + b hᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackControl {
    h: Mat,
    closed_loop: Mat,
    y0: Vector,
}

impl FeedbackControl {
    pub fn new(h: Mat, closed_loop: Mat, y0: Vector) -> Result<Self> {
        let n = closed_loop.nrows();
        if closed_loop.ncols() != n || h.nrows() != n || y0.len() != n || h.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "feedback control needs h n×m, A_cl n×n, y0 n; got h {}×{}, A_cl {}×{}, y0 {}",
                h.nrows(),
                h.ncols(),
                closed_loop.nrows(),
                closed_loop.ncols(),
                y0.len()
            )));
        }
        if !is_finite(&h) || !is_finite(&closed_loop) || !y0.iter().all(|x| x.is_finite()) {
            return Err(Error::Input("feedback control has non-finite entries".into()));
        }
        Ok(Self { h, closed_loop, y0 })
    }

    pub fn h(&self) -> &Mat {
        &self.h
    }

    pub fn closed_loop(&self) -> &Mat {
        &self.closed_loop
    }

    pub fn y0(&self) -> &Vector {
        &self.y0
    }

    pub fn state_at(&self, t: f64) -> Vector {
        (&self.closed_loop * t).exp() * &self.y0
    }

    pub fn value(&self, t: f64) -> Vector {
        self.h.transpose() * self.state_at(t)
    }
}

/// Piecewise-linear interpolation of samples on an increasing grid starting
/// at 0; the signal is zero after the last sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledControl {
    times: Vec<f64>,
    values: Vec<Vector>,
}

impl SampledControl {
    pub fn new(times: Vec<f64>, values: Vec<Vector>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Input(format!(
                "sampled control needs equally many times and values (got {} and {})",
                times.len(),
                values.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(Error::Input("sampled control grid must start at t = 0".into()));
        }
        if !times.iter().all(|t| t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input(
                "sampled control grid must be finite and strictly increasing".into(),
            ));
        }
        let m = values[0].len();
        if m == 0 || values.iter().any(|v| v.len() != m) {
            return Err(Error::Dimension(
                "sampled control values must share a positive dimension".into(),
            ));
        }
        if !values.iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return Err(Error::Input("sampled control has non-finite values".into()));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("non-empty grid")
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Left and right limits at `t`. They differ only at the last sample
    /// time, where the signal drops to zero.
    pub fn limits(&self, t: f64) -> (Vector, Vector) {
        let zero = Vector::zeros(self.dim());
        let end = self.end();
        if t < 0.0 || t > end {
            return (zero.clone(), zero);
        }
        let v = self.interpolate(t);
        if t == end {
            (v, zero)
        } else if t == 0.0 {
            (zero, v)
        } else {
            (v.clone(), v)
        }
    }

    /// Right-continuous value.
    pub fn value(&self, t: f64) -> Vector {
        self.limits(t).1
    }

    fn interpolate(&self, t: f64) -> Vector {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.values[0].clone();
        }
        if k == self.times.len() {
            return self.values[k - 1].clone();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        &self.values[k - 1] * (1.0 - w) + &self.values[k] * w
    }
}

/// A deterministic open-loop control `u(·) ∈ L²(0, ∞; ℝᵐ)`.
///
/// `Sum` superposes signals, e.g. an optimal feedback law plus a sampled
/// perturbation.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSignal {
    Feedback(FeedbackControl),
    Sampled(SampledControl),
    Sum(Vec<ControlSignal>),
}

impl ControlSignal {
    /// `u ≡ 0` in ℝᵐ.
    pub fn zero(m: usize) -> Self {
        ControlSignal::Sampled(SampledControl {
            times: vec![0.0],
            values: vec![Vector::zeros(m)],
        })
    }

    pub fn feedback(h: Mat, closed_loop: Mat, y0: Vector) -> Result<Self> {
        Ok(ControlSignal::Feedback(FeedbackControl::new(h, closed_loop, y0)?))
    }

    pub fn sampled(times: Vec<f64>, values: Vec<Vector>) -> Result<Self> {
        Ok(ControlSignal::Sampled(SampledControl::new(times, values)?))
    }

    pub fn sum(parts: Vec<ControlSignal>) -> Result<Self> {
        let mut flat = Vec::new();
        for p in parts {
            match p {
                ControlSignal::Sum(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        if flat.is_empty() {
            return Err(Error::Input("empty control sum".into()));
        }
        let m = flat[0].dim();
        if flat.iter().any(|p| p.dim() != m) {
            return Err(Error::Dimension("summed controls differ in dimension".into()));
        }
        Ok(ControlSignal::Sum(flat))
    }

    /// `self + scale · other`, for sampled `other`.
    pub fn perturbed(&self, other: &SampledControl, scale: f64) -> Result<Self> {
        let scaled = SampledControl::new(
            other.times.clone(),
            other.values.iter().map(|v| v * scale).collect(),
        )?;
        Self::sum(vec![self.clone(), ControlSignal::Sampled(scaled)])
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlSignal::Feedback(f) => f.h.ncols(),
            ControlSignal::Sampled(s) => s.dim(),
            ControlSignal::Sum(parts) => parts[0].dim(),
        }
    }

    pub fn feedback_parts(&self) -> Vec<&FeedbackControl> {
        match self {
            ControlSignal::Feedback(f) => vec![f],
            ControlSignal::Sampled(_) => vec![],
            ControlSignal::Sum(parts) => parts.iter().flat_map(|p| p.feedback_parts()).collect(),
        }
    }

    pub fn sampled_parts(&self) -> Vec<&SampledControl> {
        match self {
            ControlSignal::Feedback(_) => vec![],
            ControlSignal::Sampled(s) => vec![s],
            ControlSignal::Sum(parts) => parts.iter().flat_map(|p| p.sampled_parts()).collect(),
        }
    }

    /// Sorted, deduplicated sample times of all sampled parts.
    pub fn knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self
            .sampled_parts()
            .iter()
            .flat_map(|s| s.times.iter().copied())
            .collect();
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    /// Time after which only the feedback parts remain active.
    pub fn sampled_end(&self) -> f64 {
        self.sampled_parts()
            .iter()
            .map(|s| s.end())
            .fold(0.0, f64::max)
    }

    /// Left and right limits of the sampled parts at `t`.
    pub fn sampled_limits(&self, t: f64) -> (Vector, Vector) {
        let m = self.dim();
        let mut l = Vector::zeros(m);
        let mut r = Vector::zeros(m);
        for s in self.sampled_parts() {
            let (a, b) = s.limits(t);
            l += a;
            r += b;
        }
        (l, r)
    }

    /// Right-continuous value at `t`.
    pub fn value(&self, t: f64) -> Vector {
        let mut u = self.sampled_limits(t).1;
        for f in self.feedback_parts() {
            u += f.value(t);
        }
        u
    }

    /// Values at `t_k = k·dt`, `k = 0..steps`. Feedback parts are propagated
    /// with the exact one-step transition `e^{A_cl dt}`.
    pub fn sample_grid(&self, dt: f64, steps: usize) -> Vec<Vector> {
        let m = self.dim();
        let mut out: Vec<Vector> = (0..steps)
            .map(|k| self.sampled_limits(k as f64 * dt).1)
            .collect();
        for f in self.feedback_parts() {
            let step = (&f.closed_loop * dt).exp();
            let ht = f.h.transpose();
            let mut y = f.y0.clone();
            for u in out.iter_mut() {
                *u += &ht * &y;
                y = &step * y;
            }
        }
        debug_assert!(out.iter().all(|u| u.len() == m));
        out
    }

    pub fn check_dims(&self, sys: &SystemModel) -> Result<()> {
        if self.dim() != sys.m() {
            return Err(Error::Dimension(format!(
                "control has dimension {}, system expects {}",
                self.dim(),
                sys.m()
            )));
        }
        for f in self.feedback_parts() {
            if f.closed_loop.nrows() != sys.n() {
                return Err(Error::Dimension(format!(
                    "feedback state has dimension {}, system has {}",
                    f.closed_loop.nrows(),
                    sys.n()
                )));
            }
        }
        Ok(())
    }

    /// Every feedback part must decay for `u` to be square-integrable.
    pub fn check_square_integrable(&self) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for f in self.feedback_parts() {
            let s = spectral_abscissa(&f.closed_loop)?;
            if s >= 0.0 {
                return Err(Error::Input(format!(
                    "feedback closed loop is not Hurwitz (abscissa {s:e})"
                )));
            }
            worst = worst.max(s);
        }
        Ok(worst)
    }
}
