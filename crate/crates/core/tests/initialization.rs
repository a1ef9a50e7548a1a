mod common;

use common::random_loop;
use nalgebra::DMatrix;
use quantaw_core::linalg::discrete_lyapunov;
use quantaw_core::lmi::{accept_iterate, build_init_problem, build_level_residual, build_main_mi, lyapunov_witness};
use quantaw_core::sdp::{DEFAULT_DELTA, DEFAULT_TOL};
use quantaw_core::{solve, ClosedLoop, LineSearchConfig, Objective, UStructure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn systems() -> Vec<ClosedLoop> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..50)
        .map(|_| {
            let n_p = rng.random_range(1..=3);
            let n_c = rng.random_range(1..=3);
            let n_u = rng.random_range(1..=2);
            let rho = rng.random_range(0.05..0.95);
            random_loop(&mut rng, n_p, n_c, n_u, rho, 1.0)
        })
        .collect()
}

fn window_points(cl: &ClosedLoop) -> Vec<f64> {
    let rho = common::spectral_radius(cl.a_cl());
    LineSearchConfig::default()
        .grid
        .into_iter()
        .filter(|t| *t < 1.0 - rho * rho)
        .collect()
}

#[test]
fn closed_form_point_certifies_every_window_point() {
    for (i, cl) in systems().iter().enumerate() {
        for tau in window_points(cl) {
            let it = lyapunov_witness(cl, tau).unwrap();
            let main = common::lambda_max(&build_main_mi(&it, cl));
            let level = build_level_residual(&it.s1, tau, cl.quantizer());
            assert!(main < -1e-9 * it.p.norm(), "system {i}, tau {tau}: main {main:e}");
            assert!(level <= 0.0, "system {i}, tau {tau}: level {level:e}");
            assert!(it.e.iter().all(|v| *v == 0.0) && it.s2.iter().all(|v| *v == 0.0));
            assert_eq!(it.p, it.u);
        }
    }
}

#[test]
fn closed_form_point_is_scaled_lyapunov_solution() {
    let cl = &systems()[3];
    let tau: f64 = 0.2;
    let a = cl.a_cl() / (1.0 - tau).sqrt();
    let p0 = discrete_lyapunov(&a).unwrap();
    let n = cl.n_states();
    assert!((a.transpose() * &p0 * &a - &p0 + DMatrix::identity(n, n)).norm() <= 1e-10 * p0.norm());
    let it = lyapunov_witness(cl, tau).unwrap();
    let c = it.p[(0, 0)] / p0[(0, 0)];
    assert!(c > 0.0);
    assert!((&it.p - p0 * c).norm() <= 1e-12 * it.p.norm());
}

#[test]
fn line_search_problem_is_feasible_away_from_window_edge() {
    let zero = |cl: &ClosedLoop| Objective::Linear(DMatrix::zeros(cl.n_states(), cl.n_states()));
    for (i, cl) in systems().iter().enumerate() {
        let rho = common::spectral_radius(cl.a_cl());
        for tau in window_points(cl).into_iter().filter(|t| *t < 0.9 * (1.0 - rho * rho)) {
            let init = build_init_problem(cl, tau, UStructure::FreePsd, &zero(cl), DEFAULT_DELTA);
            let sol = solve(&init.problem, DEFAULT_TOL);
            assert!(sol.is_usable(), "system {i}, tau {tau}: {}", sol.status);
            let it = init.extract(&sol);
            accept_iterate(&it, cl, DEFAULT_DELTA, 10.0 * DEFAULT_TOL).unwrap();
        }
    }
}

#[test]
fn scaling_to_level_is_identity_when_satisfied() {
    let cl = &systems()[0];
    let it = lyapunov_witness(cl, 0.3).unwrap();
    assert_eq!(it.scaled_to_level(cl.quantizer()), it);
    let mut big = it.clone();
    big.s1.iter_mut().for_each(|v| *v *= 1e3);
    let scaled = big.scaled_to_level(cl.quantizer());
    assert!(build_level_residual(&scaled.s1, 0.3, cl.quantizer()) <= 0.0);
    assert!(scaled.p.norm() < big.p.norm());
}
