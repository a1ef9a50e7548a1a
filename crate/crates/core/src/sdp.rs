//! Solver-agnostic semidefinite programs, the Clarabel backend, and the τ line
//! search that seeds the synthesis loop.

use std::fmt;
use std::str::FromStr;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use log::{debug, info};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::affine::AffineMatrix;
use crate::error::{Error, Result};
use crate::linalg::{lambda_max, max_abs, spectral_radius as radius};
use crate::lmi::{accept_iterate, build_init_problem, Objective, SynthesisIterate, UStructure};
use crate::plant::ClosedLoop;

/// Default strictness margin δ for `≺ 0` / `≻ 0`.
pub const DEFAULT_DELTA: f64 = 1e-7;
/// Default solver tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
struct VarInfo {
    name: String,
    lower: Option<f64>,
    upper: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalarVar(usize);

impl ScalarVar {
    pub fn index(self) -> usize {
        self.0
    }
    pub fn expr(self) -> AffineMatrix {
        AffineMatrix::variable(self.0, DMatrix::from_element(1, 1, 1.0))
    }
}

/// Symmetric matrix variable stored as its upper triangle (column-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymVar {
    offset: usize,
    size: usize,
}

impl SymVar {
    pub fn size(self) -> usize {
        self.size
    }

    pub fn expr(self) -> AffineMatrix {
        let n = self.size;
        let mut k = self.offset;
        let mut pairs = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            for i in 0..=j {
                let mut b = DMatrix::zeros(n, n);
                b[(i, j)] = 1.0;
                b[(j, i)] = 1.0;
                pairs.push((k, b));
                k += 1;
            }
        }
        AffineMatrix::linear(n, n, pairs)
    }
}

/// Rectangular matrix variable (column-major scalars).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatVar {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl MatVar {
    pub fn expr(self) -> AffineMatrix {
        let pairs = (0..self.cols).flat_map(|j| {
            (0..self.rows).map(move |i| {
                let mut b = DMatrix::zeros(self.rows, self.cols);
                b[(i, j)] = 1.0;
                (self.offset + j * self.rows + i, b)
            })
        });
        AffineMatrix::linear(self.rows, self.cols, pairs)
    }
}

/// Diagonal matrix variable with nonnegative entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DiagVar {
    offset: usize,
    size: usize,
}

impl DiagVar {
    pub fn expr(self) -> AffineMatrix {
        let n = self.size;
        AffineMatrix::linear(
            n,
            n,
            (0..n).map(|i| {
                let mut b = DMatrix::zeros(n, n);
                b[(i, i)] = 1.0;
                (self.offset + i, b)
            }),
        )
    }

    /// Entries clipped at 0 (interior-point iterates may undershoot the bound by roundoff).
    pub fn entries(self, x: &[f64]) -> Vec<f64> {
        x[self.offset..self.offset + self.size]
            .iter()
            .map(|v| v.max(0.0))
            .collect()
    }
}

/// `expr ⪯ −margin·I`
#[derive(Debug, Clone, PartialEq)]
pub struct LmiConstraint {
    pub name: String,
    pub expr: AffineMatrix,
    pub margin: f64,
}

/// `expr ≤ 0` with `expr` a 1×1 affine expression.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarConstraint {
    pub name: String,
    pub expr: AffineMatrix,
}

/// A linear-objective SDP: maximize `objective` over bounded scalar decisions
/// subject to affine matrix and scalar inequalities.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    vars: Vec<VarInfo>,
    lmis: Vec<LmiConstraint>,
    scalars: Vec<ScalarConstraint>,
    objective: AffineMatrix,
}

impl Default for SdpProblem {
    fn default() -> Self {
        Self::new()
    }
}

impl SdpProblem {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            lmis: Vec::new(),
            scalars: Vec::new(),
            objective: AffineMatrix::scalar(0.0),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn lmis(&self) -> &[LmiConstraint] {
        &self.lmis
    }

    pub fn scalar_constraints(&self) -> &[ScalarConstraint] {
        &self.scalars
    }

    pub fn objective(&self) -> &AffineMatrix {
        &self.objective
    }

    fn push_var(&mut self, name: String, lower: Option<f64>, upper: Option<f64>) -> usize {
        self.vars.push(VarInfo { name, lower, upper });
        self.vars.len() - 1
    }

    pub fn add_scalar(&mut self, name: &str, lower: Option<f64>, upper: Option<f64>) -> ScalarVar {
        ScalarVar(self.push_var(name.to_string(), lower, upper))
    }

    /// Symmetric variable; `psd_margin = Some(m)` adds the cone constraint `X ⪰ m·I`.
    pub fn add_symmetric(&mut self, name: &str, n: usize, psd_margin: Option<f64>) -> SymVar {
        let offset = self.vars.len();
        for j in 0..n {
            for i in 0..=j {
                self.push_var(format!("{name}[{i},{j}]"), None, None);
            }
        }
        let var = SymVar { offset, size: n };
        if let Some(m) = psd_margin {
            self.add_lmi(&format!("{name} psd"), -var.expr(), m);
        }
        var
    }

    pub fn add_matrix(&mut self, name: &str, rows: usize, cols: usize) -> MatVar {
        let offset = self.vars.len();
        for j in 0..cols {
            for i in 0..rows {
                self.push_var(format!("{name}[{i},{j}]"), None, None);
            }
        }
        MatVar { offset, rows, cols }
    }

    pub fn add_diag_nonneg(&mut self, name: &str, n: usize) -> DiagVar {
        let offset = self.vars.len();
        for i in 0..n {
            self.push_var(format!("{name}[{i}]"), Some(0.0), None);
        }
        DiagVar { offset, size: n }
    }

    pub fn add_lmi(&mut self, name: &str, expr: AffineMatrix, margin: f64) {
        assert!(expr.nrows() == expr.ncols(), "LMI {name} is not square");
        self.lmis.push(LmiConstraint {
            name: name.to_string(),
            expr,
            margin,
        });
    }

    pub fn add_scalar_le(&mut self, name: &str, expr: AffineMatrix) {
        assert_eq!(expr.shape(), (1, 1), "scalar constraint {name} is not 1x1");
        self.scalars.push(ScalarConstraint {
            name: name.to_string(),
            expr,
        });
    }

    pub fn set_objective(&mut self, expr: AffineMatrix) {
        assert_eq!(expr.shape(), (1, 1), "objective must be 1x1");
        self.objective = expr;
    }

    /// Largest violation of any constraint or bound at `x`, with the name of the
    /// worst constraint. Recomputed by eigendecomposition, independent of the backend.
    /// Matrix inequalities `F(x) ⪯ −mI` are measured as `(λ_max(F(x)) + m) / (1 + ‖F(x)‖_max)`,
    /// bounds and scalar inequalities in absolute terms.
    pub fn violation(&self, x: &[f64]) -> (f64, String) {
        let mut worst = (0.0, String::from("none"));
        let mut update = |v: f64, name: &str| {
            if v > worst.0 || v.is_nan() {
                worst = (v, name.to_string());
            }
        };
        for (i, info) in self.vars.iter().enumerate() {
            if let Some(lo) = info.lower {
                update(lo - x[i], &info.name);
            }
            if let Some(hi) = info.upper {
                update(x[i] - hi, &info.name);
            }
        }
        for c in &self.scalars {
            update(c.expr.eval(x)[(0, 0)], &c.name);
        }
        for c in &self.lmis {
            let f = c.expr.eval(x);
            update((lambda_max(&f) + c.margin) / (1.0 + max_abs(&f)), &c.name);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SdpStatus {
    Optimal,
    Feasible,
    Infeasible,
    SolverError,
}

impl fmt::Display for SdpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::Feasible => "feasible",
            SdpStatus::Infeasible => "infeasible",
            SdpStatus::SolverError => "solver-error",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub worst_constraint: String,
    pub iterations: u32,
    pub diagnostics: String,
    /// The backend reported convergence (possibly to reduced accuracy), whatever the recheck said.
    pub backend_converged: bool,
}

impl SdpSolution {
    pub fn is_usable(&self) -> bool {
        matches!(self.status, SdpStatus::Optimal | SdpStatus::Feasible)
    }

    pub fn value(&self, expr: &AffineMatrix) -> DMatrix<f64> {
        expr.eval(&self.x)
    }

    pub fn scalar(&self, v: ScalarVar) -> f64 {
        self.x[v.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Clarabel,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Clarabel => "clarabel",
        }
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clarabel" => Ok(Backend::Clarabel),
            other => Err(Error::InvalidConfig(format!(
                "unknown SDP backend '{other}' (available: clarabel)"
            ))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub backend: Backend,
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            backend: Backend::Clarabel,
            tol: DEFAULT_TOL,
            max_iter: 400,
        }
    }
}

impl SolverSettings {
    /// Violations up to this value are accepted on recheck.
    pub fn recheck_margin(&self) -> f64 {
        10.0 * self.tol
    }
}

/// Upper triangle, column-major, off-diagonals scaled by √2.
fn svec(m: &DMatrix<f64>, out: &mut Vec<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..=j {
            let v = if i == j {
                m[(i, j)]
            } else {
                0.5 * (m[(i, j)] + m[(j, i)]) * std::f64::consts::SQRT_2
            };
            out.push(v);
        }
    }
}

/// Solve with the default backend settings at tolerance `tol`.
pub fn solve(problem: &SdpProblem, tol: f64) -> SdpSolution {
    solve_with(
        problem,
        &SolverSettings {
            tol,
            ..SolverSettings::default()
        },
    )
}

pub fn solve_with(problem: &SdpProblem, settings: &SolverSettings) -> SdpSolution {
    match settings.backend {
        Backend::Clarabel => solve_clarabel(problem, settings),
    }
}

fn solve_clarabel(problem: &SdpProblem, settings: &SolverSettings) -> SdpSolution {
    let n = problem.num_vars();
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();

    // s = b − A x ∈ R₊ for bounds and scalar inequalities
    let mut nonneg = 0;
    let mut push_row = |coeffs: &[(usize, f64)], rhs: f64, b: &mut Vec<f64>| {
        let r = b.len();
        for &(k, v) in coeffs {
            if v != 0.0 {
                rows.push(r);
                cols.push(k);
                vals.push(v);
            }
        }
        b.push(rhs);
    };
    for (k, info) in problem.vars.iter().enumerate() {
        if let Some(lo) = info.lower {
            push_row(&[(k, -1.0)], -lo, &mut b);
            nonneg += 1;
        }
        if let Some(hi) = info.upper {
            push_row(&[(k, 1.0)], hi, &mut b);
            nonneg += 1;
        }
    }
    for c in &problem.scalars {
        let coeffs: Vec<(usize, f64)> = c.expr.terms().map(|(k, m)| (k, m[(0, 0)])).collect();
        push_row(&coeffs, -c.expr.constant_part()[(0, 0)], &mut b);
        nonneg += 1;
    }
    if nonneg > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(nonneg));
    }

    // s = svec(−margin·I − F(x)) ∈ PSD for F(x) ⪯ −margin·I
    let mut buf = Vec::new();
    for c in &problem.lmis {
        let dim = c.expr.nrows();
        let r0 = b.len();
        let mut rhs = -c.expr.constant_part().clone();
        for i in 0..dim {
            rhs[(i, i)] -= c.margin;
        }
        buf.clear();
        svec(&rhs, &mut buf);
        b.extend_from_slice(&buf);
        for (k, coeff) in c.expr.terms() {
            buf.clear();
            svec(coeff, &mut buf);
            for (off, v) in buf.iter().enumerate() {
                if *v != 0.0 {
                    rows.push(r0 + off);
                    cols.push(k);
                    vals.push(*v);
                }
            }
        }
        cones.push(SupportedConeT::PSDTriangleConeT(dim));
    }

    let m = b.len();
    let a = CscMatrix::new_from_triplets(m, n, rows, cols, vals);
    let p = CscMatrix::zeros((n, n));
    let mut q = vec![0.0; n];
    for (k, coeff) in problem.objective.terms() {
        q[k] = -coeff[(0, 0)];
    }

    let solver_settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(settings.max_iter)
        .tol_gap_abs(settings.tol)
        .tol_gap_rel(settings.tol)
        .tol_feas(settings.tol)
        .build()
        .expect("valid clarabel settings");

    let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, solver_settings) {
        Ok(s) => s,
        Err(e) => {
            return SdpSolution {
                status: SdpStatus::SolverError,
                x: vec![0.0; n],
                objective: f64::NAN,
                max_violation: f64::INFINITY,
                worst_constraint: String::new(),
                iterations: 0,
                diagnostics: format!("clarabel setup failed: {e:?}"),
                backend_converged: false,
            }
        }
    };
    solver.solve();
    let raw = solver.solution.status;
    let x = solver.solution.x.clone();
    let iterations = solver.solution.iterations;
    let objective = problem.objective.eval(&x)[(0, 0)];
    let (max_violation, worst_constraint) = problem.violation(&x);
    let diagnostics = format!("clarabel status {raw:?} after {iterations} iterations");
    debug!("{diagnostics}; max violation {max_violation:.3e} ({worst_constraint})");

    let recheck_ok = max_violation <= settings.recheck_margin() && x.iter().all(|v| v.is_finite());
    let status = match raw {
        SolverStatus::Solved if recheck_ok => SdpStatus::Optimal,
        SolverStatus::Solved | SolverStatus::AlmostSolved if recheck_ok => SdpStatus::Feasible,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SdpStatus::Infeasible,
        _ => SdpStatus::SolverError,
    };
    let diagnostics =
        if status == SdpStatus::SolverError && matches!(raw, SolverStatus::Solved | SolverStatus::AlmostSolved) {
            format!(
                "{diagnostics}; recheck violation {max_violation:.3e} at '{worst_constraint}' exceeds {:.1e}",
                settings.recheck_margin()
            )
        } else if matches!(raw, SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible) {
            format!("{diagnostics}; objective is unbounded")
        } else {
            diagnostics
        };
    SdpSolution {
        status,
        x,
        objective,
        max_violation,
        worst_constraint,
        iterations,
        diagnostics,
        backend_converged: matches!(raw, SolverStatus::Solved | SolverStatus::AlmostSolved),
    }
}

/// Grid of candidate τ values for the initialization line search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchConfig {
    pub grid: Vec<f64>,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        Self::uniform(0.01, 0.99, 50).expect("default grid is valid")
    }
}

impl LineSearchConfig {
    pub fn new(grid: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidConfig("tau grid is empty".into()));
        }
        if let Some(t) = grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidConfig(format!("tau grid point {t} is outside (0,1)")));
        }
        Ok(Self { grid })
    }

    /// `count` evenly spaced points from `start` to `end` inclusive.
    pub fn uniform(start: f64, end: f64, count: usize) -> Result<Self> {
        let grid = match count {
            0 => Vec::new(),
            1 => vec![start],
            _ => (0..count)
                .map(|i| start + (end - start) * i as f64 / (count - 1) as f64)
                .collect(),
        };
        Self::new(grid)
    }

    /// Parse `a:b:n`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || Error::InvalidConfig(format!("tau grid '{spec}' is not of the form a:b:n"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        Self::uniform(a, b, n)
    }
}

/// Spectral radius `ρ(A)`.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    radius(a)
}

/// Result of the initialization line search.
#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub iterate: SynthesisIterate,
    pub tau: f64,
    pub omega: f64,
    /// `(τ, status)` for every grid point tried.
    pub grid_status: Vec<(f64, SdpStatus)>,
}

/// Solve the E = 0 problem on every grid τ and keep the feasible point with the
/// largest ω(U); ties go to the smaller τ.
pub fn line_search_init(
    cl: &ClosedLoop,
    ustruct: UStructure,
    omega: &Objective,
    config: &LineSearchConfig,
    delta: f64,
    settings: &SolverSettings,
) -> Result<InitResult> {
    let rho = spectral_radius(cl.a_cl());
    if rho >= 1.0 {
        return Err(Error::UnstableNominalLoop { rho });
    }
    let mut grid: Vec<f64> = config.grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64, SynthesisIterate)> = None;
    let mut grid_status = Vec::with_capacity(grid.len());
    for &tau in &grid {
        let init = build_init_problem(cl, tau, ustruct, omega, delta);
        let sol = solve_with(&init.problem, settings);
        debug!("init tau={tau:.4}: {} ({})", sol.status, sol.diagnostics);
        grid_status.push((tau, sol.status));
        if !sol.is_usable() {
            continue;
        }
        let it = init.extract(&sol);
        if let Err(why) = accept_iterate(&it, cl, delta, settings.recheck_margin()) {
            debug!("init tau={tau:.4} rejected on recheck: {why}");
            if let Some(last) = grid_status.last_mut() {
                last.1 = SdpStatus::SolverError;
            }
            continue;
        }
        let w = omega.value(&it.u);
        let better = match &best {
            None => true,
            Some((_, bw, _)) => w > bw + 1e-9 * (1.0 + bw.abs()),
        };
        if better {
            best = Some((tau, w, it));
        }
    }
    match best {
        Some((tau, w, iterate)) => {
            info!("line search selected tau={tau:.4} with omega={w:.6e}");
            Ok(InitResult {
                iterate,
                tau,
                omega: w,
                grid_status,
            })
        }
        None => Err(Error::NoFeasibleGridPoint {
            rho,
            window: 1.0 - rho * rho,
        }),
    }
}
