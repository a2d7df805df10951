//! Random problem instances and small independent numerical routines used as
//! oracles. Nothing here calls the solvers under test except the stability
//! check used to place noise strength inside the stable region.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stochlq::linalg::{spectral_abscissa, Mat, Vector};
use stochlq::model::{CostModel, InitialState, SystemModel};
use stochlq::stability::check_stability;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Non-normal Hurwitz matrix with abscissa in `[-1.5, -0.5]`.
pub fn hurwitz(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let m = gaussian(rng, n, n);
    let shift = spectral_abscissa(&m).unwrap() + rng.gen_range(0.5..1.5);
    m - Mat::identity(n, n) * shift
}

/// Noise channels scaled to `frac` of the mean-square stability boundary,
/// so the spectral radius of `T` is about `frac²`.
pub fn scaled_noise(rng: &mut ChaCha8Rng, a: &Mat, b: &Mat, d: usize, frac: f64) -> Vec<Mat> {
    let n = a.nrows();
    let raw: Vec<Mat> = (0..d).map(|_| gaussian(rng, n, n)).collect();
    let stable = |k: f64| {
        let cs: Vec<Mat> = raw.iter().map(|c| c * k).collect();
        check_stability(&SystemModel::new(a.clone(), b.clone(), cs).unwrap())
            .unwrap()
            .is_stable()
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while stable(hi) {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if stable(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    raw.iter().map(|c| c * (frac * lo)).collect()
}

pub fn spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let l = gaussian(rng, n, n);
    &l * l.transpose() + Mat::identity(n, n) * 0.1
}

pub fn symmetric(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let m = gaussian(rng, n, n);
    (&m + m.transpose()) * 0.5
}

pub struct Instance {
    pub sys: SystemModel,
    pub cost: CostModel,
    pub init: InitialState,
}

/// Mean-square stable instance with `G ≻ 0`, `Γ ≻ 0` and deterministic `a`.
pub fn stable_instance(seed: u64, n: usize, m: usize, d: usize) -> Instance {
    let mut r = rng(seed);
    let a = hurwitz(&mut r, n);
    let b = gaussian(&mut r, n, m);
    let frac = r.gen_range(0.3..0.7);
    let noise = scaled_noise(&mut r, &a, &b, d, frac);
    let sys = SystemModel::new(a, b, noise).unwrap();
    let cost = CostModel::new(spd(&mut r, n), spd(&mut r, m)).unwrap();
    let mean = Vector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    let init = InitialState::deterministic(mean).unwrap();
    Instance { sys, cost, init }
}

/// Same as [`stable_instance`] but with a random initial covariance.
pub fn random_init_instance(seed: u64, n: usize) -> Instance {
    let mut inst = stable_instance(seed, n, 1, 1);
    let mut r = rng(seed ^ 0x5eed);
    let l = gaussian(&mut r, n, n) * 0.5;
    let cov = &l * l.transpose();
    let mean = inst.init.mean().clone();
    let sm = cov + &mean * mean.transpose();
    inst.init = InitialState::from_moments(mean, sm).unwrap();
    inst
}

/// `e^{M t}` by scaling and squaring with a Taylor core; independent of
/// nalgebra's Padé `exp`.
pub fn expm(m: &Mat, t: f64) -> Mat {
    let n = m.nrows();
    let mt = m * t;
    let norm = mt.abs().row_sum().max();
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = mt / 2f64.powi(s);
    let mut term = Mat::identity(n, n);
    let mut e = Mat::identity(n, n);
    for k in 1..=20 {
        term = &term * &x / k as f64;
        e += &term;
    }
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

/// Gauss–Legendre nodes and weights on `[-1, 1]` via Newton on `P_k`.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; k];
    let mut w = vec![0.0; k];
    for i in 0..k {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=k {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = k as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                let dp = {
                    let (mut p0, mut p1) = (1.0, z);
                    for j in 2..=k {
                        let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    k as f64 * (z * p1 - p0) / (z * z - 1.0)
                };
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
    }
    (x, w)
}

/// `∫₀^∞ e^{Aᵀt} W e^{At} dt` by composite Gauss–Legendre on `[0, T]`,
/// `T` chosen from the decay of `e^{At}`.
pub fn gramian_by_quadrature(a: &Mat, w: &Mat) -> Mat {
    let n = a.nrows();
    let decay = -spectral_abscissa(a).unwrap();
    let horizon = 60.0 / decay;
    let panels = 400;
    let h = horizon / panels as f64;
    let (xs, ws) = gauss_legendre(12);
    let mut acc = Mat::zeros(n, n);
    for p in 0..panels {
        let t0 = p as f64 * h;
        for (x, wt) in xs.iter().zip(&ws) {
            let t = t0 + 0.5 * h * (x + 1.0);
            let e = expm(a, t);
            acc += e.transpose() * w * &e * (0.5 * h * wt);
        }
    }
    acc
}

/// Classic RK4 for `y' = f(t, y)` on a uniform grid; returns all grid values.
pub fn rk4<F: Fn(f64, &Vector) -> Vector>(f: F, y0: Vector, t_end: f64, steps: usize) -> Vec<Vector> {
    let h = t_end / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = y0;
    out.push(y.clone());
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &(&y + &k1 * (0.5 * h)));
        let k3 = f(t + 0.5 * h, &(&y + &k2 * (0.5 * h)));
        let k4 = f(t + h, &(&y + &k3 * h));
        y = &y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        out.push(y.clone());
    }
    out
}

/// Composite Simpson on an even number of uniform intervals.
pub fn simpson(values: &[f64], h: f64) -> f64 {
    let k = values.len() - 1;
    assert!(k.is_multiple_of(2), "Simpson needs an even number of intervals");
    let mut s = values[0] + values[k];
    for (i, v) in values.iter().enumerate().take(k).skip(1) {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * v;
    }
    s * h / 3.0
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// `X` with `AᵀX + XA + Σ CᵀXC + G = 0` by a dense Kronecker solve.
pub fn kron_stochastic_gramian(a: &Mat, noise: &[Mat], g: &Mat) -> Mat {
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let at = a.transpose();
    let mut op = id.kronecker(&at) + at.kronecker(&id);
    for c in noise {
        op += c.transpose().kronecker(&c.transpose());
    }
    let rhs = -Vector::from_column_slice(g.as_slice());
    let x = op.lu().solve(&rhs).expect("mean-square stable operator is invertible");
    let x = Mat::from_column_slice(n, n, x.as_slice());
    (&x + x.transpose()) * 0.5
}

/// Composite Simpson weights for `k` (even) uniform intervals of width `h`.
pub fn simpson_weights(k: usize, h: f64) -> Vec<f64> {
    assert!(k.is_multiple_of(2));
    (0..=k)
        .map(|i| {
            let w = if i == 0 || i == k {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}
