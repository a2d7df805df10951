//! Euler–Maruyama simulation of `dx = (Ax + bu)dt + Σ_j C_j x dw_j` and a
//! Monte Carlo estimate of `Φ[u]`.
//!
//! Path `k` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `k` (stream
//! `k/2` with mirrored increments for antithetic pairs), so every path cost
//! is a pure function of `(seed, k)`. Costs are collected in path order and
//! reduced with a fixed pairwise tree, which makes the estimate bitwise
//! independent of the number of workers.
//!
//! Random initial states are drawn as Gaussians with the prescribed mean and
//! covariance. `Φ` depends on the initial law only through its first two
//! moments, so any law with those moments has the same cost.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, pairwise_sum, symmetric_eigen, Mat};
use crate::model::{ControlSignal, CostModel, InitialState, SystemModel};
use crate::stability::check_stability;

/// Paths whose state exceeds this multiple of the initial scale abort the run.
pub const OVERFLOW_FACTOR: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub antithetic: bool,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl SimulationConfig {
    pub fn new(paths: usize, dt: f64, horizon: f64, seed: u64) -> Self {
        Self {
            paths,
            dt,
            horizon,
            seed,
            antithetic: false,
            workers: 0,
        }
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt).round() as usize).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::Config("at least one path is required".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(Error::Config(format!(
                "horizon {} must be finite and at least dt = {}",
                self.horizon, self.dt
            )));
        }
        if self.antithetic && !self.paths.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "antithetic sampling needs an even path count, got {}",
                self.paths
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean_cost: f64,
    pub std_error: f64,
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub warnings: Vec<String>,
}

/// Per-path costs in path order, plus configuration warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCosts {
    pub costs: Vec<f64>,
    pub warnings: Vec<String>,
}

struct Stepper {
    n: usize,
    d: usize,
    a: Vec<f64>,
    c: Vec<f64>,
    g: Vec<f64>,
    /// `b u(t_k)` per step.
    drive: Vec<f64>,
    /// `u(t_k)ᵀ Γ u(t_k)` per step.
    control_cost: Vec<f64>,
    mean: Vec<f64>,
    /// Square root of the initial covariance, row-major; empty if deterministic.
    root: Vec<f64>,
    dt: f64,
    sqrt_dt: f64,
    guard: f64,
}

fn row_major(m: &Mat) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

impl Stepper {
    fn path_cost(&self, seed: u64, stream: u64, sign: f64, index: usize) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut x = self.mean.clone();
        if !self.root.is_empty() {
            let n = self.n;
            let z: Vec<f64> = (0..n)
                .map(|_| {
                    let s: f64 = StandardNormal.sample(&mut rng);
                    sign * s
                })
                .collect();
            for (xi, row) in x.iter_mut().zip(self.root.chunks(n)) {
                for (r, zj) in row.iter().zip(&z) {
                    *xi += r * zj;
                }
            }
        }
        match self.n {
            1 => self.run::<1>(&x, &mut rng, sign, index),
            2 => self.run::<2>(&x, &mut rng, sign, index),
            3 => self.run::<3>(&x, &mut rng, sign, index),
            4 => self.run::<4>(&x, &mut rng, sign, index),
            _ => self.run_dyn(x, &mut rng, sign, index),
        }
    }

    fn overflow(&self, index: usize, k: usize, big: f64) -> Error {
        Error::Overflow(format!(
            "path {index} reached |x| = {big:e} at step {k}; reduce dt"
        ))
    }

    // Fixed-size state for the common small dimensions.
    fn run<const N: usize>(
        &self,
        x0: &[f64],
        rng: &mut ChaCha8Rng,
        sign: f64,
        index: usize,
    ) -> Result<f64> {
        let mut x = [0.0; N];
        x.copy_from_slice(x0);
        let a: [[f64; N]; N] = square(&self.a);
        let g: [[f64; N]; N] = square(&self.g);
        let c: Vec<[[f64; N]; N]> = self.c.chunks_exact(N * N).map(square).collect();
        let (dt, sdt) = (self.dt, sign * self.sqrt_dt);
        // Compensated running sum of the left-point rule.
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for (k, (&uc, drive)) in self
            .control_cost
            .iter()
            .zip(self.drive.chunks_exact(N))
            .enumerate()
        {
            let mut q = 0.0;
            for i in 0..N {
                let mut gi = 0.0;
                for j in 0..N {
                    gi += g[i][j] * x[j];
                }
                q += x[i] * gi;
            }
            let y = (q + uc) * dt - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            let mut next = [0.0; N];
            for i in 0..N {
                let mut ax = drive[i];
                for j in 0..N {
                    ax += a[i][j] * x[j];
                }
                next[i] = x[i] + ax * dt;
            }
            for cm in &c {
                let z: f64 = StandardNormal.sample(rng);
                let w = sdt * z;
                for i in 0..N {
                    let mut cx = 0.0;
                    for j in 0..N {
                        cx += cm[i][j] * x[j];
                    }
                    next[i] += cx * w;
                }
            }
            x = next;
            let mut big = 0.0f64;
            for v in &x {
                big = big.max(v.abs());
            }
            if !(big <= self.guard) {
                return Err(self.overflow(index, k, big));
            }
        }
        Ok(sum)
    }

    fn run_dyn(&self, mut x: Vec<f64>, rng: &mut ChaCha8Rng, sign: f64, index: usize) -> Result<f64> {
        let (n, d) = (self.n, self.d);
        let nn = n * n;
        let mut next = vec![0.0; n];
        let mut dw = vec![0.0; d];
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for (k, (&uc, drive)) in self
            .control_cost
            .iter()
            .zip(self.drive.chunks_exact(n))
            .enumerate()
        {
            let mut q = 0.0;
            for (gi, &xi) in self.g.chunks_exact(n).zip(&x) {
                q += xi * dot(gi, &x);
            }
            let y = (q + uc) * self.dt - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            for w in dw.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *w = sign * self.sqrt_dt * z;
            }
            for (i, out) in next.iter_mut().enumerate() {
                let mut v = x[i] + (dot(&self.a[i * n..(i + 1) * n], &x) + drive[i]) * self.dt;
                for (ch, &w) in dw.iter().enumerate() {
                    v += dot(&self.c[ch * nn + i * n..ch * nn + (i + 1) * n], &x) * w;
                }
                *out = v;
            }
            std::mem::swap(&mut x, &mut next);
            let big = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !(big <= self.guard) {
                return Err(self.overflow(index, k, big));
            }
        }
        Ok(sum)
    }
}

fn square<const N: usize>(flat: &[f64]) -> [[f64; N]; N] {
    let mut m = [[0.0; N]; N];
    for (i, row) in m.iter_mut().enumerate() {
        row.copy_from_slice(&flat[i * N..(i + 1) * N]);
    }
    m
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn build_stepper(
    sys: &SystemModel,
    cost: &CostModel,
    u: &ControlSignal,
    init: &InitialState,
    cfg: &SimulationConfig,
) -> Result<Stepper> {
    let n = sys.n();
    let steps = cfg.steps();
    let grid = u.sample_grid(cfg.dt, steps);
    let mut drive = Vec::with_capacity(steps * n);
    let mut control_cost = Vec::with_capacity(steps);
    let mut u_scale = 0.0f64;
    for uk in &grid {
        let bu = sys.b() * uk;
        u_scale = u_scale.max(bu.amax());
        drive.extend(bu.iter());
        control_cost.push(uk.dot(&(cost.gamma() * uk)));
    }
    let mut c = Vec::with_capacity(sys.d() * n * n);
    for ch in sys.noise() {
        c.extend(row_major(ch));
    }
    let root = if init.is_deterministic() {
        Vec::new()
    } else {
        let (vals, vecs) = symmetric_eigen(&init.covariance())?;
        let mut r = Mat::zeros(n, n);
        for k in 0..n {
            let s = vals[k].max(0.0).sqrt();
            for i in 0..n {
                for j in 0..n {
                    r[(i, j)] += vecs[(i, k)] * s * vecs[(j, k)];
                }
            }
        }
        row_major(&r)
    };
    let init_scale = init
        .mean()
        .amax()
        .max(init.second_moment().diagonal().amax().sqrt());
    let scale = init_scale.max(u_scale).max(f64::MIN_POSITIVE);
    Ok(Stepper {
        n,
        d: sys.d(),
        a: row_major(sys.a()),
        c,
        g: row_major(cost.g()),
        drive,
        control_cost,
        mean: init.mean().iter().copied().collect(),
        root,
        dt: cfg.dt,
        sqrt_dt: cfg.dt.sqrt(),
        guard: OVERFLOW_FACTOR * scale,
    })
}

fn config_warnings(sys: &SystemModel, cfg: &SimulationConfig) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    let cert = check_stability(sys)?;
    if !(1.0 + cfg.dt * cert.ms_abscissa / 2.0 < 1.0) {
        warnings.push(format!(
            "system is not mean-square stable (abscissa {:e}); the cost may diverge",
            cert.ms_abscissa
        ));
    }
    // Mean-square stability of the Euler–Maruyama recursion itself.
    let n = sys.n();
    let step = Mat::identity(n, n) + sys.a() * cfg.dt;
    let mut k = step.kronecker(&step);
    for c in sys.noise() {
        k += c.kronecker(c) * cfg.dt;
    }
    let radius = eigenvalues(&k)?.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    if cert.is_stable() && radius >= 1.0 {
        warnings.push(format!(
            "dt = {} makes the discretized second moment unstable (spectral radius {radius})",
            cfg.dt
        ));
    }
    let steps = cfg.steps();
    let effective = steps as f64 * cfg.dt;
    if (effective - cfg.horizon).abs() > 1e-9 * cfg.horizon {
        warnings.push(format!(
            "horizon {} is not a multiple of dt; simulating {steps} steps to t = {effective}",
            cfg.horizon
        ));
    }
    Ok(warnings)
}

/// Simulates every path and returns the per-path costs in path order.
pub fn simulate_path_costs(
    sys: &SystemModel,
    cost: &CostModel,
    u: &ControlSignal,
    init: &InitialState,
    cfg: &SimulationConfig,
) -> Result<PathCosts> {
    cfg.validate()?;
    cost.check_dims(sys)?;
    u.check_dims(sys)?;
    if init.dim() != sys.n() {
        return Err(Error::Dimension(format!(
            "initial state has dimension {}, system has {}",
            init.dim(),
            sys.n()
        )));
    }
    let warnings = config_warnings(sys, cfg)?;
    let stepper = build_stepper(sys, cost, u, init, cfg)?;
    let run = |k: usize| -> Result<f64> {
        if cfg.antithetic {
            let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
            stepper.path_cost(cfg.seed, (k / 2) as u64, sign, k)
        } else {
            stepper.path_cost(cfg.seed, k as u64, 1.0, k)
        }
    };
    let collect = || (0..cfg.paths).into_par_iter().map(run).collect::<Result<Vec<f64>>>();
    let costs = if cfg.workers == 0 {
        collect()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(collect)?
    };
    Ok(PathCosts { costs, warnings })
}

/// Sample mean and standard error of the path costs. Antithetic pairs are
/// averaged first, so the error reflects the pair correlation.
pub fn summarize(costs: &[f64], antithetic: bool) -> (f64, f64) {
    let samples: Vec<f64> = if antithetic {
        costs.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect()
    } else {
        costs.to_vec()
    };
    let k = samples.len();
    let mean = pairwise_sum(&samples) / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = samples.iter().map(|c| (c - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

/// Monte Carlo estimate of `Φ[u]` on `[0, horizon]`.
pub fn simulate_paths(
    sys: &SystemModel,
    cost: &CostModel,
    u: &ControlSignal,
    init: &InitialState,
    cfg: &SimulationConfig,
) -> Result<CostEstimate> {
    Ok(estimate(&simulate_path_costs(sys, cost, u, init, cfg)?, cfg))
}

pub fn estimate(pc: &PathCosts, cfg: &SimulationConfig) -> CostEstimate {
    let (mean_cost, std_error) = summarize(&pc.costs, cfg.antithetic);
    let mut warnings = pc.warnings.clone();
    if pc.costs.len() < 2 {
        warnings.push("a single path gives no error estimate".into());
    }
    CostEstimate {
        mean_cost,
        std_error,
        paths: pc.costs.len(),
        dt: cfg.dt,
        horizon: cfg.steps() as f64 * cfg.dt,
        warnings,
    }
}

/// CSV `path_index,cost`.
pub fn paths_csv(costs: &[f64]) -> String {
    let mut out = String::from("path_index,cost\n");
    for (i, c) in costs.iter().enumerate() {
        let _ = writeln!(out, "{i},{c}");
    }
    out
}
