mod common;

use common::*;
use nalgebra::Complex;
use proptest::prelude::*;
use stochlq::evaluate::{cost_phi, integrate_moments, uniform_times};
use stochlq::frequency::{check_frequency_condition, hermitian_form_f, pi_matrix};
use stochlq::linalg::{
    hermitian_min_eigenvalue, max_abs, min_symmetric_eigenvalue, symmetric_eigenvalues, CMat, Mat,
    Vector,
};
use stochlq::model::{ControlSignal, CostModel, InitialState};
use stochlq::theta::{apply_t, solve_theta, ThetaMethod, TransferFunction};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn hermitian_eigenvalues(h: &CMat) -> Vec<f64> {
    // Real symmetric embedding [[Re, −Im], [Im, Re]] doubles each eigenvalue.
    let m = h.nrows();
    let big = Mat::from_fn(2 * m, 2 * m, |i, j| {
        let z = h[(i % m, j % m)];
        match (i < m, j < m) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    });
    let mut ev: Vec<f64> = symmetric_eigenvalues(&big).unwrap().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev.into_iter().step_by(2).collect()
}

fn random_sampled(seed: u64, m: usize, knots: usize, t_end: f64) -> ControlSignal {
    let mut r = rng(seed);
    let times: Vec<f64> = (0..knots).map(|k| t_end * k as f64 / (knots - 1) as f64).collect();
    let mut values: Vec<Vector> = (0..knots).map(|_| gaussian(&mut r, m, 1).column(0).into_owned()).collect();
    *values.last_mut().unwrap() = Vector::zeros(m);
    ControlSignal::sampled(times, values).unwrap()
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn popov_spectrum_is_even_in_lambda(seed in 0u64..10_000, n in 1usize..5, m in 1usize..3, lambda in -50.0f64..50.0) {
        let inst = stable_instance(seed, n, m, 1);
        let theta = solve_theta(&inst.sys, &inst.cost, ThetaMethod::Direct, 1e-10).unwrap().theta;
        let plus = hermitian_eigenvalues(&pi_matrix(&inst.sys, &theta, inst.cost.gamma(), lambda).unwrap());
        let minus = hermitian_eigenvalues(&pi_matrix(&inst.sys, &theta, inst.cost.gamma(), -lambda).unwrap());
        let scale = plus.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        for (p, q) in plus.iter().zip(&minus) {
            prop_assert!((p - q).abs() <= 1e-12 * scale, "{p} vs {q}");
        }
    }

    #[test]
    fn popov_form_equals_hermitian_form(seed in 0u64..10_000, n in 1usize..5, m in 1usize..3, lambda in -20.0f64..20.0) {
        let inst = stable_instance(seed, n, m, 2);
        let theta = solve_theta(&inst.sys, &inst.cost, ThetaMethod::Direct, 1e-10).unwrap().theta;
        let mut r = rng(seed ^ 77);
        let u: Vec<Complex<f64>> = (0..m)
            .map(|_| Complex::new(gaussian(&mut r, 1, 1)[0], gaussian(&mut r, 1, 1)[0]))
            .collect();
        let uc = CMat::from_column_slice(m, 1, &u);
        let pi = pi_matrix(&inst.sys, &theta, inst.cost.gamma(), lambda).unwrap();
        let lhs = (uc.adjoint() * &pi * &uc)[(0, 0)];
        let x = TransferFunction::new(inst.sys.a()).apply(lambda, inst.sys.b()).unwrap() * &uc;
        let rhs = hermitian_form_f(&theta, inst.cost.gamma(), x.as_slice(), &u).unwrap();
        prop_assert!(lhs.im.abs() <= 1e-12 * (1.0 + lhs.re.abs()));
        prop_assert!((lhs.re - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{} vs {rhs}", lhs.re);
    }

    #[test]
    fn popov_matrix_is_hermitian_with_gamma_floor(seed in 0u64..10_000, n in 1usize..5, lambda in -20.0f64..20.0) {
        // With Θ ⪰ 0 the Popov function dominates Γ.
        let inst = stable_instance(seed, n, 2, 1);
        let theta = solve_theta(&inst.sys, &inst.cost, ThetaMethod::Direct, 1e-10).unwrap().theta;
        let pi = pi_matrix(&inst.sys, &theta, inst.cost.gamma(), lambda).unwrap();
        let skew = &pi - pi.adjoint();
        prop_assert!(skew.iter().all(|z| z.norm() <= 1e-12 * (1.0 + pi.iter().map(|w| w.norm()).fold(0.0, f64::max))));
        let floor = min_symmetric_eigenvalue(inst.cost.gamma()).unwrap();
        prop_assert!(hermitian_min_eigenvalue(&pi).unwrap() >= floor - 1e-12 * (1.0 + floor.abs()));
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn gamma_shift_moves_delta_hat_exactly(seed in 0u64..10_000, n in 1usize..4, shift in 0.01f64..2.0, indefinite in any::<bool>()) {
        let mut inst = stable_instance(seed, n, 1, 1);
        if indefinite {
            let mut r = rng(seed ^ 3);
            inst.cost = CostModel::new(symmetric(&mut r, n), inst.cost.gamma().clone()).unwrap();
        }
        let theta = solve_theta(&inst.sys, &inst.cost, ThetaMethod::Direct, 1e-10).unwrap().theta;
        let tol = 1e-7;
        let gamma = inst.cost.gamma();
        let shifted = gamma + Mat::identity(1, 1) * shift;
        let base = check_frequency_condition(&inst.sys, &theta, gamma, tol).unwrap();
        let moved = check_frequency_condition(&inst.sys, &theta, &shifted, tol).unwrap();
        prop_assert!(moved.delta_hat > base.delta_hat);
        let scale = 1.0 + base.delta_hat.abs();
        prop_assert!((moved.delta_hat - base.delta_hat - shift).abs() <= 2.0 * tol * scale,
            "δ {} → {} for shift {shift}", base.delta_hat, moved.delta_hat);
    }

    #[test]
    fn theta_is_linear_in_g(seed in 0u64..10_000, n in 1usize..5, d in 1usize..3, alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let inst = stable_instance(seed, n, 1, d);
        let mut r = rng(seed ^ 11);
        let (g1, g2) = (symmetric(&mut r, n), symmetric(&mut r, n));
        let gamma = inst.cost.gamma().clone();
        let solve = |g: &Mat| {
            let cost = CostModel::new(g.clone(), gamma.clone()).unwrap();
            solve_theta(&inst.sys, &cost, ThetaMethod::Direct, 1e-11).unwrap().theta
        };
        let combined = solve(&(&g1 * alpha + &g2 * beta));
        let expected = solve(&g1) * alpha + solve(&g2) * beta;
        let scale = 1.0 + max_abs(&expected);
        prop_assert!(max_abs(&(&combined - &expected)) <= 1e-9 * scale);
    }

    #[test]
    fn theta_is_monotone_in_g(seed in 0u64..10_000, n in 1usize..5, d in 1usize..3) {
        let inst = stable_instance(seed, n, 1, d);
        let mut r = rng(seed ^ 13);
        let low = symmetric(&mut r, n);
        let high = &low + spd(&mut r, n) * 0.1;
        let gamma = inst.cost.gamma().clone();
        let solve = |g: &Mat, method| {
            let cost = CostModel::new(g.clone(), gamma.clone()).unwrap();
            solve_theta(&inst.sys, &cost, method, 1e-12).unwrap().theta
        };
        for method in [ThetaMethod::Direct, ThetaMethod::FixedPoint] {
            let diff = solve(&high, method) - solve(&low, method);
            let scale = 1.0 + max_abs(&diff);
            prop_assert!(min_symmetric_eigenvalue(&diff).unwrap() >= -1e-9 * scale);
        }
        // T itself maps PSD to PSD.
        let t = apply_t(&inst.sys, &spd(&mut r, n)).unwrap();
        prop_assert!(min_symmetric_eigenvalue(&t).unwrap() >= -1e-9 * (1.0 + max_abs(&t)));
    }

    #[test]
    fn covariance_stays_psd_along_moments(seed in 0u64..10_000, n in 1usize..5, d in 1usize..3, m in 1usize..3) {
        let mut inst = stable_instance(seed, n, m, d);
        if seed % 2 == 0 {
            inst = random_init_instance(seed, n);
        }
        let u = random_sampled(seed ^ 5, inst.sys.m(), 9, 4.0);
        let times = uniform_times(8.0, 80);
        let traj = integrate_moments(&inst.sys, &u, &inst.init, 8.0, 1e-9, &times).unwrap();
        for s in &traj {
            let cov = s.covariance();
            let floor = -1e-9 * (1.0 + max_abs(&s.second_moment));
            prop_assert!(min_symmetric_eigenvalue(&cov).unwrap() >= floor, "t = {}", s.t);
        }
    }

    #[test]
    fn cost_breakdown_is_bilinear(seed in 0u64..10_000, n in 1usize..4, k in -3.0f64..3.0) {
        prop_assume!(k.abs() > 0.05);
        let inst = random_init_instance(seed, n);
        let u = random_sampled(seed ^ 9, 1, 7, 3.0);
        let ku = match &u {
            ControlSignal::Sampled(s) => ControlSignal::sampled(
                s.times().to_vec(),
                s.values().iter().map(|v| v * k).collect(),
            ).unwrap(),
            _ => unreachable!(),
        };
        let tol = 1e-10;
        let base = cost_phi(&inst.sys, &inst.cost, &u, &inst.init, tol).unwrap();
        let scaled = cost_phi(&inst.sys, &inst.cost, &ku, &inst.init, tol).unwrap();
        let scale = base.total.abs() + base.quadratic.abs() + base.constant_rho.abs();
        prop_assert!((scaled.quadratic - k * k * base.quadratic).abs() <= 1e-6 * k * k * scale);
        prop_assert!((scaled.cross - k * base.cross).abs() <= 1e-6 * k.abs().max(k * k) * scale);
        prop_assert!((scaled.constant_rho - base.constant_rho).abs() <= 1e-9 * scale);
        let zero = cost_phi(&inst.sys, &inst.cost, &u, &InitialState::zero(n), tol).unwrap();
        prop_assert!(zero.cross.abs() <= 1e-9 * scale && zero.constant_rho == 0.0);
    }
}
