mod common;

use common::*;
use stochlq::evaluate::cost_phi;
use stochlq::linalg::{Mat, Vector};
use stochlq::lqr::solve_deterministic_lqr;
use stochlq::model::{ControlSignal, CostModel, InitialState, SampledControl, SystemModel};
use stochlq::montecarlo::{simulate_paths, SimulationConfig};
use stochlq::theta::{solve_theta, ThetaMethod};

fn scalar() -> (SystemModel, CostModel, InitialState) {
    let one = |v: f64| Mat::from_element(1, 1, v);
    (
        SystemModel::new(one(-1.0), one(1.0), vec![one(1.0)]).unwrap(),
        CostModel::new(one(1.0), one(1.0)).unwrap(),
        InitialState::deterministic(Vector::from_element(1, 1.0)).unwrap(),
    )
}

fn optimal(sys: &SystemModel, cost: &CostModel, init: &InitialState) -> ControlSignal {
    let theta = solve_theta(sys, cost, ThetaMethod::Direct, 1e-12).unwrap().theta;
    solve_deterministic_lqr(sys, &theta, cost.gamma())
        .unwrap()
        .control(init.mean().clone())
        .unwrap()
}

#[test]
fn std_error_scales_with_inverse_root_paths() {
    let (sys, cost, init) = scalar();
    let small = simulate_paths(&sys, &cost, &ControlSignal::zero(1), &init, &SimulationConfig::new(4_000, 1e-2, 1.0, 1)).unwrap();
    let large = simulate_paths(&sys, &cost, &ControlSignal::zero(1), &init, &SimulationConfig::new(16_000, 1e-2, 1.0, 2)).unwrap();
    let ratio = small.std_error / large.std_error;
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn bias_shrinks_with_dt() {
    let (sys, cost, init) = scalar();
    let exact = cost_phi(&sys, &cost, &ControlSignal::zero(1), &init, 1e-10).unwrap().total;
    let errors: Vec<f64> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&dt| {
            let est = simulate_paths(&sys, &cost, &ControlSignal::zero(1), &init, &SimulationConfig::new(100_000, dt, 15.0, 3)).unwrap();
            (est.mean_cost - exact).abs()
        })
        .collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
}

#[test]
fn estimator_matches_discrete_moment_recursion() {
    // For u = 0 the scheme gives E x_{k+1}² = q E x_k² with q = (1 − dt)² + dt,
    // so the expected left-point cost is dt·Σ_{k<N} q^k.
    let (sys, cost, init) = scalar();
    let t_end = 3.0;
    for (dt, seed) in [(0.2f64, 5u64), (0.1, 6), (0.05, 7)] {
        let steps = (t_end / dt).round() as i32;
        let q = (1.0 - dt) * (1.0 - dt) + dt;
        let expected = dt * (1.0 - q.powi(steps)) / (1.0 - q);
        let est = simulate_paths(&sys, &cost, &ControlSignal::zero(1), &init, &SimulationConfig::new(100_000, dt, t_end, seed)).unwrap();
        let z = (est.mean_cost - expected) / est.std_error;
        assert!(z.abs() <= 3.0, "dt {dt}: {} vs {expected}, z = {z:.2}", est.mean_cost);
    }
}

#[test]
fn perturbing_the_optimum_does_not_help() {
    let (sys, cost, init) = scalar();
    let u0 = optimal(&sys, &cost, &init);
    let v = SampledControl::new(
        vec![0.0, 0.5, 1.0, 2.0],
        [0.3, -0.2, 0.1, 0.0].iter().map(|x| Vector::from_element(1, *x)).collect(),
    )
    .unwrap();
    let cfg = SimulationConfig::new(20_000, 1e-2, 5.0, 4);
    let base = simulate_paths(&sys, &cost, &u0, &init, &cfg).unwrap();
    for eps in [0.5, -0.5, 1.0] {
        let pert = simulate_paths(&sys, &cost, &u0.perturbed(&v, eps).unwrap(), &init, &cfg).unwrap();
        let slack = 3.0 * (base.std_error.powi(2) + pert.std_error.powi(2)).sqrt();
        assert!(base.mean_cost <= pert.mean_cost + slack, "ε = {eps}");
    }
}

#[test]
fn long_horizon_estimates_match_exact_costs() {
    let (sys, cost, init) = scalar();
    for u in [ControlSignal::zero(1), optimal(&sys, &cost, &init)] {
        let exact = cost_phi(&sys, &cost, &u, &init, 1e-10).unwrap().total;
        let est = simulate_paths(&sys, &cost, &u, &init, &SimulationConfig::new(100_000, 1e-3, 15.0, 0)).unwrap();
        let z = (est.mean_cost - exact) / est.std_error;
        assert!(z.abs() <= 3.0, "mean {} vs {exact}, z = {z:.2}", est.mean_cost);
    }
}

#[test]
fn stochastic_and_deterministic_costs_differ_by_constant() {
    // Φ[u] − ρ = Φ₁[u] − ρ₁ for every u, including u⁰.
    for k in 0..8u64 {
        let n = 2 + (k as usize % 2);
        let mut inst = stable_instance(8000 + k, n, 1, 1 + (k as usize % 2));
        if k % 2 == 1 {
            inst.init = random_init_instance(8100 + k, n).init;
        }
        let theta = solve_theta(&inst.sys, &inst.cost, ThetaMethod::Direct, 1e-12).unwrap().theta;
        let law = solve_deterministic_lqr(&inst.sys, &theta, inst.cost.gamma()).unwrap();
        let u0 = law.control(inst.init.mean().clone()).unwrap();
        let mut r = rng(k);
        let times: Vec<f64> = (0..9).map(|i| 0.5 * i as f64).collect();
        let mut values: Vec<Vector> = (0..9).map(|_| gaussian(&mut r, 1, 1).column(0).into_owned()).collect();
        values[8] = Vector::zeros(1);
        let sampled = ControlSignal::sampled(times, values).unwrap();
        for u in [u0, sampled] {
            let sto = cost_phi(&inst.sys, &inst.cost, &u, &inst.init, 1e-11).unwrap();
            let det = stochlq::evaluate::deterministic_cost(&inst.sys, &theta, inst.cost.gamma(), &u, inst.init.mean(), 1e-11)
                .unwrap();
            let lhs = sto.total - sto.constant_rho;
            let rhs = det.total - det.constant_rho;
            let scale = sto.quadratic.abs() + sto.cross.abs();
            assert!((lhs - rhs).abs() <= 1e-6 * scale, "instance {k}: {lhs} vs {rhs}");
        }
    }
}
