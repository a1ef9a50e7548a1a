use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use quantaw_core::certify::max_decay;
use quantaw_core::examples::example_problem;
use quantaw_core::lmi::build_linearized_subproblem;
use quantaw_core::problem::Problem;
use quantaw_core::sdp::{line_search_init, solve_with, LineSearchConfig};
use quantaw_core::{check_conditions, simulate, synthesize, Margins};

fn load(id: &str) -> Problem {
    example_problem(id).unwrap().build().unwrap()
}

fn init_and_subproblem(c: &mut Criterion) {
    let p = load("example1");
    let cfg = &p.config;
    let mut g = c.benchmark_group("example1");
    g.sample_size(10);
    let coarse = LineSearchConfig::uniform(0.05, 0.65, 5).unwrap();
    g.bench_function("line_search_5_points", |b| {
        b.iter(|| line_search_init(&p.closed_loop, cfg.ustruct, &cfg.omega, &coarse, cfg.delta, &cfg.solver).unwrap())
    });
    let init = line_search_init(
        &p.closed_loop,
        cfg.ustruct,
        &cfg.omega,
        &cfg.line_search,
        cfg.delta,
        &cfg.solver,
    )
    .unwrap();
    let at = init.iterate.point();
    g.bench_function("linearized_subproblem", |b| {
        b.iter(|| {
            let sub = build_linearized_subproblem(&at, &p.closed_loop, cfg.ustruct, &cfg.omega, cfg.delta);
            solve_with(&sub.problem, &cfg.solver)
        })
    });
    g.bench_function("synthesize", |b| b.iter(|| synthesize(&p.closed_loop, cfg).unwrap()));
    g.finish();
}

fn certification(c: &mut Criterion) {
    let p = load("example2");
    let out = synthesize(&p.closed_loop, &p.config).unwrap();
    let mut g = c.benchmark_group("example2");
    g.bench_function("check_conditions", |b| {
        b.iter(|| check_conditions(&out.iterate, &p.closed_loop, &Margins::default()).unwrap())
    });
    g.bench_function("max_decay", |b| {
        b.iter(|| max_decay(&out.iterate, &p.closed_loop, 1e-10))
    });
    let sim = p.simulation.as_ref().unwrap();
    g.bench_function("simulate_200_steps", |b| {
        b.iter(|| simulate(&p.closed_loop, &out.e, &sim.x0, sim.horizon, &sim.schedule).unwrap())
    });
    let e0 = DMatrix::zeros(out.e.nrows(), out.e.ncols());
    g.bench_function("simulate_200_steps_uncompensated", |b| {
        b.iter(|| simulate(&p.closed_loop, &e0, &sim.x0, sim.horizon, &sim.schedule).unwrap())
    });
    g.finish();
}

criterion_group!(benches, init_and_subproblem, certification);
criterion_main!(benches);
