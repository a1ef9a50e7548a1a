use nalgebra::DVector;
use quantaw_core::certify::{max_decay, sample_states_on_levels, Condition};
use quantaw_core::examples::example_problem;
use quantaw_core::lmi::build_main_mi;
use quantaw_core::problem::Problem;
use quantaw_core::sdp::{line_search_init, SdpStatus};
use quantaw_core::{check_conditions, empirical_ugfta, gamma_bound, inclusion_check, synthesize, Margins};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn problem(id: &str) -> Problem {
    example_problem(id).unwrap().build().unwrap()
}

fn lambda_max(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().max()
}

#[test]
fn single_iteration_cap_is_respected() {
    let mut p = problem("example1");
    p.config.k_max = 1;
    p.config.epsilon = 1e-12;
    let out = synthesize(&p.closed_loop, &p.config).unwrap();
    assert!(out.trace.iterations() <= 1);
    assert!(!out.trace.converged);
    check_conditions(&out.iterate, &p.closed_loop, &Margins::default()).unwrap();
}

#[test]
fn iterates_stay_feasible_and_objective_grows() {
    let mut p = problem("example1");
    p.config.k_max = 15;
    p.config.epsilon = 1e-7;
    let out = synthesize(&p.closed_loop, &p.config).unwrap();
    let omegas = out.trace.omegas();
    assert_eq!(omegas.len(), out.trace.iterations() + 1);
    for w in omegas.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{omegas:?}");
    }
    for r in &out.trace.records {
        assert!(r.lambda_max_main <= -1e-8, "iteration {}: {}", r.k, r.lambda_max_main);
        assert!(r.tau > 0.0 && r.tau < 1.0);
    }
    let cert = check_conditions(&out.iterate, &p.closed_loop, &Margins::default()).unwrap();
    assert!(cert.mu < 0.0);
    assert!(out.iterate.e.iter().any(|v| *v != 0.0));
}

#[test]
fn example1_end_to_end() {
    let p = problem("example1");
    let out = synthesize(&p.closed_loop, &p.config).unwrap();
    assert!(out.trace.converged);
    assert!(out.trace.iterations() < p.config.k_max);
    let cert = check_conditions(&out.iterate, &p.closed_loop, &Margins::default()).unwrap();
    assert!(cert.residuals.main_lambda_max <= -1e-8);
    assert!(inclusion_check(&cert));
    assert_eq!(cert.e, out.e);
}

#[test]
fn example2_end_to_end() {
    let p = problem("example2");
    let out = synthesize(&p.closed_loop, &p.config).unwrap();
    let cert = check_conditions(&out.iterate, &p.closed_loop, &Margins::default()).unwrap();
    assert!(cert.mu < 0.0 && cert.mu > -1.0);
    assert_eq!(cert.p, cert.u);
}

#[test]
fn initialization_point_is_certified_with_zero_gain() {
    let p = problem("example1");
    let init = line_search_init(
        &p.closed_loop,
        p.config.ustruct,
        &p.config.omega,
        &p.config.line_search,
        p.config.delta,
        &p.config.solver,
    )
    .unwrap();
    assert!(init.iterate.e.iter().all(|v| *v == 0.0));
    assert!(init.grid_status.iter().any(|(_, s)| *s == SdpStatus::Optimal));
    let cert = check_conditions(&init.iterate, &p.closed_loop, &Margins::default()).unwrap();
    assert!(cert.varrho > 0.0);
}

#[test]
fn tampered_certificates_are_rejected() {
    let p = problem("example1");
    let out = synthesize(&p.closed_loop, &p.config).unwrap();
    let cl = &p.closed_loop;
    let margins = Margins::default();

    let mut neg = out.iterate.clone();
    neg.p = -neg.p;
    let r = check_conditions(&neg, cl, &margins).unwrap_err();
    assert!(r.has(Condition::PositiveDefiniteP));

    let mut big = out.iterate.clone();
    big.e *= 100.0;
    let r = check_conditions(&big, cl, &margins).unwrap_err();
    assert!(r.has(Condition::Main));
    assert!(lambda_max(&build_main_mi(&big, cl)) > 0.0);

    let mut tau = out.iterate.clone();
    tau.tau = 1.5;
    assert!(check_conditions(&tau, cl, &margins)
        .unwrap_err()
        .has(Condition::TauRange));

    let mut s = out.iterate.clone();
    s.s1[0] = -1e-12;
    assert!(check_conditions(&s, cl, &margins)
        .unwrap_err()
        .has(Condition::MultiplierSign));

    let mut level = out.iterate.clone();
    level.s1[0] *= 1e6;
    assert!(check_conditions(&level, cl, &margins)
        .unwrap_err()
        .has(Condition::Level));

    let mut incl = out.iterate.clone();
    incl.u = &incl.p * 2.0;
    assert!(check_conditions(&incl, cl, &margins)
        .unwrap_err()
        .has(Condition::Inclusion));
}

#[test]
fn decay_rate_matches_simulation_on_example1() {
    let p = problem("example1");
    let out = synthesize(&p.closed_loop, &p.config).unwrap();
    let cert = check_conditions(&out.iterate, &p.closed_loop, &Margins::default()).unwrap();
    let rho = max_decay(&out.iterate, &p.closed_loop, 1e-10);
    assert!((rho - cert.varrho).abs() < 1e-9);
    assert!(((1.0 - cert.varrho).ln() - cert.mu).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let states = sample_states_on_levels(&cert.p, 30, 1.0, 1e3, &mut rng);
    let report = empirical_ugfta(&cert, &p.closed_loop, &cert.e, &states, 0).unwrap();
    assert!(report.passed(), "{:?}", report.violations.first());
    assert!(report.worst_entry_slack <= 0);
    let x = &states[0];
    assert!(gamma_bound(&cert, x) > 0);
    assert_eq!(gamma_bound(&cert, &DVector::zeros(x.len())), 0);
}
