//! Adaptive Dormand–Prince 5(4) integration for small dense systems.

use crate::error::{Error, Result};

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

// Difference between the 5th- and 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Dopri5 {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            max_steps: 10_000_000,
        }
    }

    /// Advances `y` from `t0` to `t1`. `h` carries the step size between
    /// calls (pass 0 to let the integrator choose). `post` runs after every
    /// accepted step and may project the state (e.g. re-symmetrize).
    pub fn integrate<F, P>(
        &self,
        rhs: &mut F,
        t0: f64,
        t1: f64,
        y: &mut [f64],
        h: &mut f64,
        post: &mut P,
    ) -> Result<usize>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        P: FnMut(&mut [f64]),
    {
        let dim = y.len();
        if t1 <= t0 {
            return Ok(0);
        }
        let mut k = vec![vec![0.0; dim]; 7];
        let mut stage = vec![0.0; dim];
        let mut y_new = vec![0.0; dim];
        let mut t = t0;
        let span = t1 - t0;
        if !(*h > 0.0) {
            rhs(t, y, &mut k[0]);
            let d0 = rms(y);
            let d1 = rms(&k[0]);
            *h = if d0 > 1e-5 && d1 > 1e-5 { 0.01 * d0 / d1 } else { 1e-3 * span };
        }
        let mut steps = 0usize;
        while t < t1 {
            if steps >= self.max_steps {
                return Err(Error::Integrator(format!(
                    "step budget {} exhausted at t = {t}",
                    self.max_steps
                )));
            }
            let mut step = h.min(t1 - t);
            let last = step >= t1 - t;
            if step < 1e-14 * t.abs().max(1.0) {
                return Err(Error::Integrator(format!("step size underflow at t = {t}")));
            }
            rhs(t, y, &mut k[0]);
            for s in 1..7 {
                for i in 0..dim {
                    let mut acc = y[i];
                    for (j, kj) in k.iter().enumerate().take(s) {
                        acc += step * A[s][j] * kj[i];
                    }
                    stage[i] = acc;
                }
                let (done, rest) = k.split_at_mut(s);
                let _ = done;
                rhs(t + C[s] * step, &stage, &mut rest[0]);
                if s == 6 {
                    y_new.copy_from_slice(&stage);
                }
            }
            let mut err = 0.0;
            for i in 0..dim {
                let mut e = 0.0;
                for (j, kj) in k.iter().enumerate() {
                    e += E[j] * kj[i];
                }
                let sc = self.atol + self.rtol * y[i].abs().max(y_new[i].abs());
                let r = step * e / sc;
                err += r * r;
            }
            let err = (err / dim.max(1) as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Integrator(format!("non-finite state at t = {t}")));
            }
            if err <= 1.0 {
                t = if last { t1 } else { t + step };
                y.copy_from_slice(&y_new);
                post(y);
                steps += 1;
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !last {
                    *h = step * fac;
                } else {
                    *h = h.max(step * fac);
                }
            } else {
                step *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
                *h = step;
            }
        }
        Ok(steps)
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let solver = Dopri5::new(1e-12, 1e-14);
        let mut y = [1.0];
        let mut h = 0.0;
        solver
            .integrate(&mut |_, y: &[f64], dy: &mut [f64]| dy[0] = -y[0], 0.0, 3.0, &mut y, &mut h, &mut |_| {})
            .unwrap();
        assert!((y[0] - (-3.0f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_over_segments() {
        let solver = Dopri5::new(1e-11, 1e-13);
        let mut y = [1.0, 0.0];
        let mut h = 0.0;
        let mut f = |_: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
        };
        for k in 0..10 {
            let t0 = k as f64 * 0.5;
            solver.integrate(&mut f, t0, t0 + 0.5, &mut y, &mut h, &mut |_| {}).unwrap();
        }
        assert!((y[0] - 5f64.cos()).abs() < 1e-9);
        assert!((y[1] + 5f64.sin()).abs() < 1e-9);
    }
}
