#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use quantaw_core::{assemble_closed_loop, ClosedLoop, ControllerModel, PlantModel, QuantizerSpec, SynthesisIterate};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random symmetric positive definite matrix with eigenvalues above `floor`.
pub fn spd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * floor
}

pub fn sym<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    (&g + g.transpose()) * 0.5
}

pub fn nonneg<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..2.0)).collect()
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Random plant/controller pair with closed-loop spectral radius `rho`,
/// reached by scaling `A_p, B_p, A_c, B_c` (which scales `A_CL`).
pub fn random_loop<R: Rng>(rng: &mut R, n_p: usize, n_c: usize, n_u: usize, rho: f64, theta: f64) -> ClosedLoop {
    let n_y = rng.random_range(1..=2);
    let ap = gaussian(rng, n_p, n_p);
    let bp = gaussian(rng, n_p, n_u);
    let cp = gaussian(rng, n_y, n_p);
    let ac = gaussian(rng, n_c, n_c);
    let bc = gaussian(rng, n_c, n_y);
    let cc = gaussian(rng, n_u, n_c);
    let dc = gaussian(rng, n_u, n_y) * 0.3;
    let build = |g: f64| {
        let plant = PlantModel::new(&ap * g, &bp * g, cp.clone()).unwrap();
        let ctrl = ControllerModel::new(&ac * g, &bc * g, cc.clone(), dc.clone()).unwrap();
        assemble_closed_loop(&plant, &ctrl, &QuantizerSpec::uniform(theta, n_u).unwrap()).unwrap()
    };
    let base = spectral_radius(build(1.0).a_cl());
    let cl = build(rho / base);
    assert!((spectral_radius(cl.a_cl()) - rho).abs() < 1e-9);
    cl
}

pub fn random_iterate<R: Rng>(rng: &mut R, cl: &ClosedLoop) -> SynthesisIterate {
    let n = cl.n_states();
    let nu = cl.n_inputs();
    SynthesisIterate {
        tau: rng.random_range(0.01..0.99),
        p: spd(rng, n, 0.1),
        e: gaussian(rng, cl.n_controller(), nu),
        s1: nonneg(rng, nu),
        s2: nonneg(rng, nu),
        u: spd(rng, n, 0.0),
    }
}

pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().max()
}

pub fn column(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
