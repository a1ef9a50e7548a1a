//! Matrix-inequality objects of the synthesis problem.
//!
//! Block order everywhere is `(x, ψ, lifted)` with sizes `(n, n_u, n)` where
//! `n = n_p + n_c`. Every builder is written once over [`AffineMatrix`]; the
//! numeric entry points wrap their inputs as constants and read the value back,
//! so the SDP constraints and the numeric rechecks share one formula.
//!
//! The bilinear main inequality is split as `L + He(XᵀY)` with
//!
//! ```text
//! X(τ,E) = [ (τ/2)I  0   0 ]      Y(P) = [ P  0  0 ]
//!          [   0     RE  0 ]             [ 0  0  P ]
//! ```
//!
//! and the psd-concave part `Q = −XᵀX − YᵀY + He(XᵀY) = −(X−Y)ᵀ(X−Y)` is
//! linearized around a feasible point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::affine::AffineMatrix;
use crate::linalg::{blkdiag, diag, he};
use crate::plant::{ClosedLoop, QuantizerSpec};
use crate::sdp::{DiagVar, MatVar, ScalarVar, SdpProblem, SdpSolution, SymVar};

/// One point `(τ, P, E)` of the synthesis together with the multipliers and `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisIterate {
    pub tau: f64,
    pub p: DMatrix<f64>,
    pub e: DMatrix<f64>,
    /// Diagonal of S₁.
    pub s1: Vec<f64>,
    /// Diagonal of S₂.
    pub s2: Vec<f64>,
    pub u: DMatrix<f64>,
}

impl SynthesisIterate {
    pub fn s1_matrix(&self) -> DMatrix<f64> {
        diag(&self.s1)
    }

    pub fn s2_matrix(&self) -> DMatrix<f64> {
        diag(&self.s2)
    }

    pub fn point(&self) -> LinPoint {
        LinPoint {
            tau: self.tau,
            p: self.p.clone(),
            e: self.e.clone(),
        }
    }

    /// `(1 − t)·self + t·other` in every variable.
    pub fn lerp(&self, other: &SynthesisIterate, t: f64) -> SynthesisIterate {
        let mix = |a: f64, b: f64| a + t * (b - a);
        SynthesisIterate {
            tau: mix(self.tau, other.tau),
            p: &self.p + (&other.p - &self.p) * t,
            e: &self.e + (&other.e - &self.e) * t,
            s1: self.s1.iter().zip(&other.s1).map(|(a, b)| mix(*a, *b)).collect(),
            s2: self.s2.iter().zip(&other.s2).map(|(a, b)| mix(*a, *b)).collect(),
            u: &self.u + (&other.u - &self.u) * t,
        }
    }

    /// Multiply `P`, `S₁`, `S₂` and `U` by `k`. The conditions are invariant under this
    /// map combined with dividing the quantizer steps by `√k`.
    pub fn rescaled(&self, k: f64) -> SynthesisIterate {
        SynthesisIterate {
            tau: self.tau,
            p: &self.p * k,
            e: self.e.clone(),
            s1: self.s1.iter().map(|v| v * k).collect(),
            s2: self.s2.iter().map(|v| v * k).collect(),
            u: &self.u * k,
        }
    }

    /// Scale `P`, `S₁`, `S₂` and `U` down until `ΘᵀS₁Θ ≤ τ`. The main condition and
    /// the inclusion are homogeneous and keep their sign.
    pub fn scaled_to_level(&self, spec: &QuantizerSpec) -> SynthesisIterate {
        let load = build_level_residual(&self.s1, 0.0, spec);
        if load <= self.tau {
            return self.clone();
        }
        self.rescaled(self.tau / load * (1.0 - 4.0 * f64::EPSILON))
    }
}

/// Numeric acceptance test applied to every iterate the synthesis produces:
/// `λ_max(main) ≤ −δ + min(margin, δ/2)`, `ΘᵀS₁Θ − τ ≤ margin`, `λ_max(U − P) ≤ margin`
/// and `τ ∈ (0, 1)`. Returns `λ_max(main)` on success.
pub fn accept_iterate(it: &SynthesisIterate, cl: &ClosedLoop, delta: f64, margin: f64) -> Result<f64, String> {
    if !(it.tau > 0.0 && it.tau < 1.0) {
        return Err(format!("tau {} outside (0, 1)", it.tau));
    }
    let lm = crate::linalg::lambda_max(&build_main_mi(it, cl));
    let bound = -delta + margin.min(0.5 * delta);
    if !(lm <= bound) {
        return Err(format!("main condition lambda_max {lm:.3e} > {bound:.3e}"));
    }
    let level = build_level_residual(&it.s1, it.tau, cl.quantizer());
    if !(level <= margin) {
        return Err(format!("level residual {level:.3e} > {margin:.1e}"));
    }
    let incl = crate::linalg::lambda_max(&build_inclusion_residual(&it.u, &it.p));
    if !(incl <= margin) {
        return Err(format!("inclusion lambda_max {incl:.3e} > {margin:.1e}"));
    }
    Ok(lm)
}

/// Point `q = (τ, P, E)` at which the concave part is linearized.
#[derive(Debug, Clone, PartialEq)]
pub struct LinPoint {
    pub tau: f64,
    pub p: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

/// Direction `h = (h_τ, h_P, h_E)`; `h_P` must be symmetric.
pub type Direction = LinPoint;

/// How the set matrix `U` is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UStructure {
    /// `U = c·blkdiag(I_{n_p}, 0)` with scalar `c ≥ 0`.
    PlantBlockScalar,
    /// `U = P`; the inclusion constraint is then vacuous and dropped.
    EqualToP,
    /// Free symmetric `U ⪰ 0`.
    FreePsd,
}

/// Linear size functional ω(U).
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `trace(U)`
    Trace,
    /// `trace(W U)`
    Linear(DMatrix<f64>),
}

impl Objective {
    pub fn value(&self, u: &DMatrix<f64>) -> f64 {
        match self {
            Objective::Trace => u.trace(),
            Objective::Linear(w) => (w * u).trace(),
        }
    }

    pub fn expr(&self, u: &AffineMatrix) -> AffineMatrix {
        match self {
            Objective::Trace => u.trace(),
            Objective::Linear(w) => (&AffineMatrix::constant(w.clone()) * u).trace(),
        }
    }
}

fn c(m: &DMatrix<f64>) -> AffineMatrix {
    AffineMatrix::constant(m.clone())
}

fn zeros(r: usize, cl: usize) -> AffineMatrix {
    AffineMatrix::zeros(r, cl)
}

fn block_sizes(cl: &ClosedLoop) -> [usize; 3] {
    [cl.n_states(), cl.n_inputs(), cl.n_states()]
}

/// Main condition matrix with blocks
/// `(τ−1)P, −HᵀS₂, A_CLᵀP / −S₁−2S₂, (B_CL+RE)ᵀP / −P`.
pub fn main_mi_expr(
    cl: &ClosedLoop,
    tau: &AffineMatrix,
    p: &AffineMatrix,
    e: &AffineMatrix,
    s1: &AffineMatrix,
    s2: &AffineMatrix,
) -> AffineMatrix {
    let ht = c(&cl.h().transpose());
    let input = &c(cl.b_cl()) + &(&c(cl.r()) * e);
    AffineMatrix::sym_from_upper(
        &block_sizes(cl),
        &[
            vec![
                Some(&p.scaled_by(tau) - p),
                Some(-(&ht * s2)),
                Some(&c(&cl.a_cl().transpose()) * p),
            ],
            vec![None, Some(&(-s1) - &s2.scale(2.0)), Some(&input.transpose() * p)],
            vec![None, None, Some(-p)],
        ],
    )
}

/// Numeric main condition matrix at an iterate; must be `≺ 0`.
pub fn build_main_mi(it: &SynthesisIterate, cl: &ClosedLoop) -> DMatrix<f64> {
    main_mi_expr(
        cl,
        &AffineMatrix::scalar(it.tau),
        &c(&it.p),
        &c(&it.e),
        &c(&it.s1_matrix()),
        &c(&it.s2_matrix()),
    )
    .into_value()
}

/// Schur-reduced form `[(τ−1)P, −HᵀS₂; ⋆, −S₁−2S₂] + [A_CL, B_CL+RE]ᵀ P [A_CL, B_CL+RE]`,
/// a `(n + n_u)` square matrix that is `≺ 0` iff the main condition holds (given `P ≻ 0`).
pub fn build_reduced_mi(it: &SynthesisIterate, cl: &ClosedLoop) -> DMatrix<f64> {
    let n = cl.n_states();
    let nu = cl.n_inputs();
    let input = cl.b_cl() + cl.r() * &it.e;
    let mut g = DMatrix::zeros(n, n + nu);
    g.view_mut((0, 0), (n, n)).copy_from(cl.a_cl());
    g.view_mut((0, n), (n, nu)).copy_from(&input);
    let s2 = it.s2_matrix();
    let mut m = DMatrix::zeros(n + nu, n + nu);
    m.view_mut((0, 0), (n, n)).copy_from(&(&it.p * (it.tau - 1.0)));
    let cross = -(cl.h().transpose() * &s2);
    m.view_mut((0, n), (n, nu)).copy_from(&cross);
    m.view_mut((n, 0), (nu, n)).copy_from(&cross.transpose());
    m.view_mut((n, n), (nu, nu)).copy_from(&(-it.s1_matrix() - &s2 * 2.0));
    m + g.transpose() * &it.p * g
}

/// `ΘᵀS₁Θ − τ`; must be `≤ 0`.
pub fn build_level_residual(s1: &[f64], tau: f64, spec: &QuantizerSpec) -> f64 {
    s1.iter().zip(spec.theta()).map(|(s, t)| s * t * t).sum::<f64>() - tau
}

/// `U − P`; must be `⪯ 0`.
pub fn build_inclusion_residual(u: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    u - p
}

pub fn l_expr(cl: &ClosedLoop, p: &AffineMatrix, s1: &AffineMatrix, s2: &AffineMatrix) -> AffineMatrix {
    let ht = c(&cl.h().transpose());
    AffineMatrix::sym_from_upper(
        &block_sizes(cl),
        &[
            vec![Some(-p), Some(-(&ht * s2)), Some(&c(&cl.a_cl().transpose()) * p)],
            vec![
                None,
                Some(&(-s1) - &s2.scale(2.0)),
                Some(&c(&cl.b_cl().transpose()) * p),
            ],
            vec![None, None, Some(-p)],
        ],
    )
}

/// `X(τ, E)`, a `2n × (2n + n_u)` matrix.
pub fn x_expr(cl: &ClosedLoop, tau: &AffineMatrix, e: &AffineMatrix) -> AffineMatrix {
    let n = cl.n_states();
    let nu = cl.n_inputs();
    AffineMatrix::from_blocks(&[
        vec![
            AffineMatrix::identity(n).scaled_by(&tau.scale(0.5)),
            zeros(n, nu),
            zeros(n, n),
        ],
        vec![zeros(n, n), &c(cl.r()) * e, zeros(n, n)],
    ])
}

/// `Y(P)`, a `2n × (2n + n_u)` matrix.
pub fn y_expr(cl: &ClosedLoop, p: &AffineMatrix) -> AffineMatrix {
    let n = cl.n_states();
    let nu = cl.n_inputs();
    AffineMatrix::from_blocks(&[
        vec![p.clone(), zeros(n, nu), zeros(n, n)],
        vec![zeros(n, n), zeros(n, nu), p.clone()],
    ])
}

/// Numeric `(L, X, Y)` with `L + He(XᵀY)` equal to the main condition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub l: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

pub fn decompose_bilinear(it: &SynthesisIterate, cl: &ClosedLoop) -> Decomposition {
    let p = c(&it.p);
    Decomposition {
        l: l_expr(cl, &p, &c(&it.s1_matrix()), &c(&it.s2_matrix())).into_value(),
        x: x_expr(cl, &AffineMatrix::scalar(it.tau), &c(&it.e)).into_value(),
        y: y_expr(cl, &p).into_value(),
    }
}

/// `Q(τ, P, E) = −XᵀX − YᵀY + He(XᵀY)`.
pub fn build_q(tau: f64, p: &DMatrix<f64>, e: &DMatrix<f64>, cl: &ClosedLoop) -> DMatrix<f64> {
    let x = x_expr(cl, &AffineMatrix::scalar(tau), &c(e)).into_value();
    let y = y_expr(cl, &c(p)).into_value();
    let xt = x.transpose();
    -(&xt * &x) - y.transpose() * &y + he(&(&xt * &y))
}

/// Differential `DQ(q₀)h`, affine in the direction. Blocks (nonzero only):
///
/// ```text
/// (1,1)  (P₀ − (τ₀/2)I) h_τ + τ₀ h_P − He(P₀ h_P)
/// (2,2)  −He(E₀ᵀ Rᵀ R h_E)
/// (2,3)  E₀ᵀ Rᵀ h_P + h_Eᵀ Rᵀ P₀
/// (3,3)  −He(P₀ h_P)
/// ```
pub fn dq_expr(
    cl: &ClosedLoop,
    at: &LinPoint,
    h_tau: &AffineMatrix,
    h_p: &AffineMatrix,
    h_e: &AffineMatrix,
) -> AffineMatrix {
    let n = cl.n_states();
    let p0 = c(&at.p);
    let re0t = c(&(cl.r() * &at.e).transpose());
    let rt = c(&cl.r().transpose());
    let rtr = c(&(cl.r().transpose() * cl.r()));
    let tau_coeff = c(&(&at.p - DMatrix::identity(n, n) * (0.5 * at.tau)));
    let p0hp = &p0 * h_p;
    let b11 = &(&tau_coeff.scaled_by(h_tau) + &h_p.scale(at.tau)) - &p0hp.he();
    let b22 = -(&(&c(&at.e.transpose()) * &rtr) * h_e).he();
    let b23 = &(&re0t * h_p) + &(&(&h_e.transpose() * &rt) * &p0);
    let b33 = -p0hp.he();
    AffineMatrix::sym_from_upper(
        &block_sizes(cl),
        &[
            vec![Some(b11), None, None],
            vec![None, Some(b22), Some(b23)],
            vec![None, None, Some(b33)],
        ],
    )
}

pub fn apply_dq(at: &LinPoint, h: &Direction, cl: &ClosedLoop) -> DMatrix<f64> {
    dq_expr(cl, at, &AffineMatrix::scalar(h.tau), &c(&h.p), &c(&h.e)).into_value()
}

/// Realized `U` variable of an SDP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UVar {
    Scalar(ScalarVar),
    EqualToP,
    Free(SymVar),
}

impl UVar {
    pub fn expr(&self, cl: &ClosedLoop, p: &AffineMatrix) -> AffineMatrix {
        match self {
            UVar::Scalar(cv) => plant_block_mask(cl).scaled_by(&cv.expr()),
            UVar::EqualToP => p.clone(),
            UVar::Free(sv) => sv.expr(),
        }
    }
}

fn plant_block_mask(cl: &ClosedLoop) -> AffineMatrix {
    let np = cl.n_plant();
    let nc = cl.n_controller();
    c(&blkdiag(&[&DMatrix::identity(np, np), &DMatrix::zeros(nc, nc)]))
}

/// Decision variables shared by the initialization problem and the subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommonVars {
    pub p: SymVar,
    pub s1: DiagVar,
    pub s2: DiagVar,
    pub u: UVar,
}

impl CommonVars {
    fn add(prob: &mut SdpProblem, cl: &ClosedLoop, ustruct: UStructure, delta: f64) -> Self {
        let n = cl.n_states();
        let nu = cl.n_inputs();
        let p = prob.add_symmetric("P", n, Some(delta));
        let s1 = prob.add_diag_nonneg("S1", nu);
        let s2 = prob.add_diag_nonneg("S2", nu);
        let u = match ustruct {
            UStructure::PlantBlockScalar => UVar::Scalar(prob.add_scalar("c", Some(0.0), None)),
            UStructure::EqualToP => UVar::EqualToP,
            UStructure::FreePsd => UVar::Free(prob.add_symmetric("U", n, Some(0.0))),
        };
        Self { p, s1, s2, u }
    }

    /// Level constraint, inclusion constraint and objective.
    fn finish(&self, prob: &mut SdpProblem, cl: &ClosedLoop, tau: &AffineMatrix, omega: &Objective) {
        let theta_sq: Vec<f64> = cl.quantizer().theta().iter().map(|t| t * t).collect();
        let level = &(&c(&diag(&theta_sq)) * &self.s1.expr()).trace() - tau;
        prob.add_scalar_le("level", level);
        let p = self.p.expr();
        let u = self.u.expr(cl, &p);
        if !matches!(self.u, UVar::EqualToP) {
            prob.add_lmi("inclusion", &u - &p, 0.0);
        }
        prob.set_objective(omega.expr(&u));
    }

    fn extract(&self, cl: &ClosedLoop, sol: &SdpSolution, tau: f64, e: DMatrix<f64>) -> SynthesisIterate {
        let p_expr = self.p.expr();
        let p = sol.value(&p_expr);
        let u = sol.value(&self.u.expr(cl, &p_expr));
        SynthesisIterate {
            tau,
            p,
            e,
            s1: self.s1.entries(&sol.x),
            s2: self.s2.entries(&sol.x),
            u,
        }
    }
}

/// E = 0, fixed-τ problem used to seed the iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct InitProblem {
    pub problem: SdpProblem,
    pub tau: f64,
    pub vars: CommonVars,
    n_c: usize,
    n_u: usize,
    cl: ClosedLoop,
}

impl InitProblem {
    pub fn extract(&self, sol: &SdpSolution) -> SynthesisIterate {
        self.vars
            .extract(&self.cl, sol, self.tau, DMatrix::zeros(self.n_c, self.n_u))
    }
}

pub fn build_init_problem(
    cl: &ClosedLoop,
    tau: f64,
    ustruct: UStructure,
    omega: &Objective,
    delta: f64,
) -> InitProblem {
    let mut prob = SdpProblem::new();
    let vars = CommonVars::add(&mut prob, cl, ustruct, delta);
    let tau_e = AffineMatrix::scalar(tau);
    let e0 = zeros(cl.n_controller(), cl.n_inputs());
    let mi = main_mi_expr(cl, &tau_e, &vars.p.expr(), &e0, &vars.s1.expr(), &vars.s2.expr());
    prob.add_lmi("main", mi, delta);
    vars.finish(&mut prob, cl, &tau_e, omega);
    InitProblem {
        problem: prob,
        tau,
        vars,
        n_c: cl.n_controller(),
        n_u: cl.n_inputs(),
        cl: cl.clone(),
    }
}

/// Closed-form feasible point of the E = 0 problem for `τ < 1 − ρ(A_CL)²`: `P` solves
/// `ĀᵀPĀ − P = −I` for `Ā = A_CL/√(1−τ)`, `S₂ = 0`, `S₁ = (2λ_max(K) + 1)·I` with
/// `K = B_CLᵀPB_CL + B_CLᵀPA_CL A_CLᵀPB_CL/(1−τ)`, `U = P`, all scaled into the level
/// condition. `None` if the Lyapunov equation is singular or `P` is not positive definite.
pub fn lyapunov_witness(cl: &ClosedLoop, tau: f64) -> Option<SynthesisIterate> {
    let nu = cl.n_inputs();
    let (a, b) = (cl.a_cl(), cl.b_cl());
    let p = crate::linalg::discrete_lyapunov(&(a / (1.0 - tau).sqrt()))?;
    if crate::linalg::lambda_min(&p) <= 0.0 {
        return None;
    }
    let pb = &p * b;
    let k = b.transpose() * &pb + pb.transpose() * a * a.transpose() * &pb / (1.0 - tau);
    let s = 2.0 * crate::linalg::lambda_max(&k) + 1.0;
    let it = SynthesisIterate {
        tau,
        p: p.clone(),
        e: DMatrix::zeros(cl.n_controller(), nu),
        s1: vec![s; nu],
        s2: vec![0.0; nu],
        u: p,
    };
    Some(it.scaled_to_level(cl.quantizer()))
}

/// Linear inner approximation of the synthesis problem around `q₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedProblem {
    pub problem: SdpProblem,
    pub tau: ScalarVar,
    pub e: MatVar,
    pub vars: CommonVars,
    cl: ClosedLoop,
}

impl LinearizedProblem {
    pub fn extract(&self, sol: &SdpSolution) -> SynthesisIterate {
        let e = sol.value(&self.e.expr());
        self.vars.extract(&self.cl, sol, sol.scalar(self.tau), e)
    }
}

/// Lifted constraint `M = [R̂ W; Wᵀ −I]` with `R̂ = L + Q(q₀) + DQ(q₀)(q − q₀)` and
/// `W = [Xᵀ Yᵀ]`. The strictness margin δ is applied to the `R̂` block only, so that
/// `M + δ·blkdiag(I, 0) ⪯ 0` is equivalent (Schur) to `L + Q(q₀) + DQ(q₀)(q−q₀) + XᵀX + YᵀY ⪯ −δI`,
/// which holds with equality structure at `q = q₀` whenever the main condition does.
#[allow(clippy::too_many_arguments)]
pub fn linearized_mi_expr(
    cl: &ClosedLoop,
    at: &LinPoint,
    tau: &AffineMatrix,
    p: &AffineMatrix,
    e: &AffineMatrix,
    s1: &AffineMatrix,
    s2: &AffineMatrix,
    delta: f64,
) -> AffineMatrix {
    let n = cl.n_states();
    let nu = cl.n_inputs();
    let q0 = build_q(at.tau, &at.p, &at.e, cl);
    let h_tau = tau - &AffineMatrix::scalar(at.tau);
    let h_p = p - &c(&at.p);
    let h_e = e - &c(&at.e);
    let r_hat = &(&l_expr(cl, p, s1, s2) + &c(&q0)) + &dq_expr(cl, at, &h_tau, &h_p, &h_e);
    let r_hat = &r_hat + &AffineMatrix::identity(2 * n + nu).scale(delta);
    let w = AffineMatrix::from_blocks(&[vec![x_expr(cl, tau, e).transpose(), y_expr(cl, p).transpose()]]);
    AffineMatrix::sym_from_upper(
        &[2 * n + nu, 4 * n],
        &[
            vec![Some(r_hat), Some(w)],
            vec![None, Some(-AffineMatrix::identity(4 * n))],
        ],
    )
}

pub fn build_linearized_subproblem(
    at: &LinPoint,
    cl: &ClosedLoop,
    ustruct: UStructure,
    omega: &Objective,
    delta: f64,
) -> LinearizedProblem {
    let mut prob = SdpProblem::new();
    let tau = prob.add_scalar("tau", Some(delta), Some(1.0 - delta));
    let vars = CommonVars::add(&mut prob, cl, ustruct, delta);
    let e = prob.add_matrix("E", cl.n_controller(), cl.n_inputs());
    let m = linearized_mi_expr(
        cl,
        at,
        &tau.expr(),
        &vars.p.expr(),
        &e.expr(),
        &vars.s1.expr(),
        &vars.s2.expr(),
        delta,
    );
    prob.add_lmi("linearized main", m, 0.0);
    vars.finish(&mut prob, cl, &tau.expr(), omega);
    LinearizedProblem {
        problem: prob,
        tau,
        e,
        vars,
        cl: cl.clone(),
    }
}

/// Numeric value of the lifted constraint matrix (margin included) at an iterate.
pub fn eval_linearized_mi(at: &LinPoint, it: &SynthesisIterate, cl: &ClosedLoop, delta: f64) -> DMatrix<f64> {
    linearized_mi_expr(
        cl,
        at,
        &AffineMatrix::scalar(it.tau),
        &c(&it.p),
        &c(&it.e),
        &c(&it.s1_matrix()),
        &c(&it.s2_matrix()),
        delta,
    )
    .into_value()
}
