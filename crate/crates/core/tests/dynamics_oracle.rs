use std::sync::Arc;

use preisach_sir::density::Density;
use preisach_sir::dynamics::{integrate, IntegratorConfig, Outcome, SirParams, SirState};
use preisach_sir::oracle::fixed_step_integrate;

fn short(t_max: f64) -> IntegratorConfig {
    IntegratorConfig { t_max, ..IntegratorConfig::default() }
}

fn compare(params: &SirParams, start: &SirState, n: usize, t_max: f64, tol: f64) {
    let tr = integrate(params, start, &short(t_max)).unwrap();
    let last = tr.samples.last().unwrap();
    assert!((last.t - t_max).abs() < 1e-9 || tr.outcome != Outcome::Timeout);
    let run = fixed_step_integrate(params, start, n, 1e-3, last.t);
    let (i, s) = run.final_state();
    assert!((last.i - i).abs() < tol && (last.s - s).abs() < tol, "({}, {}) vs ({i}, {s})", last.i, last.s);
}

#[test]
fn classical_trajectory_matches_rk4() {
    let params = SirParams::classical(2.0, 0.5).unwrap();
    let start = SirState::virgin(0.02, 0.9).unwrap();
    compare(&params, &start, 2, 15.0, 1e-9);
}

#[test]
fn classical_limit_is_endemic_point() {
    let params = SirParams::classical(2.5, 0.3).unwrap();
    let tr = integrate(&params, &SirState::virgin(0.05, 0.8).unwrap(), &IntegratorConfig::default()).unwrap();
    assert_eq!(tr.outcome, Outcome::Equilibrium);
    let (i, s) = tr.final_state();
    assert!((s - 0.4).abs() < 1e-9 && (i - 0.3 * 0.6).abs() < 1e-9, "({i}, {s})");
}

#[test]
fn single_relay_trajectory_matches_rk4_through_switches() {
    let params = SirParams::new(0.5, Arc::new(Density::single_relay(0.17, 0.23).unwrap()), 2.0, 1.5).unwrap();
    let start = SirState::virgin(0.1, 0.5).unwrap();
    let tr = integrate(&params, &start, &short(20.0)).unwrap();
    assert!(tr.n_switches() >= 3);
    compare(&params, &start, 2, 20.0, 1e-6);
}

#[test]
fn uniform_trajectory_approaches_ensemble_limit() {
    let params = SirParams::new(0.4, Arc::new(Density::uniform()), 2.0, 1.6).unwrap();
    let start = SirState::virgin(0.01, 0.95).unwrap();
    compare(&params, &start, 200, 10.0, 5e-3);
}
