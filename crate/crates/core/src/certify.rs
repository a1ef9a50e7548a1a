//! Independent verification of a synthesized design.
//!
//! Everything here is recomputed from the iterate by eigendecomposition and
//! simulation; nothing is taken from the solver.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{lambda_max, lambda_min, quad_form};
use crate::lmi::{build_inclusion_residual, build_level_residual, build_main_mi, build_reduced_mi, SynthesisIterate};
use crate::plant::{step, ClosedLoop};
use crate::serde_matrix;

/// Tolerances used by the verification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    /// Absolute slack on the non-strict eigenvalue and scalar conditions.
    pub eigen: f64,
    /// Relative slack on `V` in simulation checks.
    pub simulation_rel: f64,
    /// Bisection width for the decay rate.
    pub bisection_width: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self {
            eigen: 1e-6,
            simulation_rel: 1e-9,
            bisection_width: 1e-10,
        }
    }
}

/// Recomputed residuals of the three synthesis conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// λ_max of the main condition matrix (must be < 0).
    pub main_lambda_max: f64,
    /// `ΘᵀS₁Θ − τ` (must be ≤ 0).
    pub level: f64,
    /// λ_max of `U − P` (must be ≤ 0).
    pub inclusion_lambda_max: f64,
}

/// A verified design: `E(P)` is included in `E(U)` and attracts every solution in
/// finite time, with `V(x⁺) ≤ e^μ V(x)` outside `E(P)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    #[serde(with = "serde_matrix")]
    pub p: DMatrix<f64>,
    #[serde(with = "serde_matrix")]
    pub e: DMatrix<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub tau: f64,
    #[serde(with = "serde_matrix")]
    pub u: DMatrix<f64>,
    /// `ln(1 − ϱ) < 0`
    pub mu: f64,
    pub varrho: f64,
    pub residuals: Residuals,
    pub margins: Margins,
    pub tool_version: String,
}

impl Certificate {
    /// `V(x) = xᵀPx`
    pub fn lyapunov(&self, x: &DVector<f64>) -> f64 {
        quad_form(&self.p, x)
    }

    pub fn attractor(&self) -> EllipsoidSet {
        EllipsoidSet::new(self.p.clone())
    }

    pub fn u_set(&self) -> EllipsoidSet {
        EllipsoidSet::new(self.u.clone())
    }

    pub fn iterate(&self) -> SynthesisIterate {
        SynthesisIterate {
            tau: self.tau,
            p: self.p.clone(),
            e: self.e.clone(),
            s1: self.s1.clone(),
            s2: self.s2.clone(),
            u: self.u.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// `{x : xᵀ Q x ≤ 1}`
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidSet {
    pub shape: DMatrix<f64>,
}

impl EllipsoidSet {
    pub fn new(shape: DMatrix<f64>) -> Self {
        Self { shape }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        quad_form(&self.shape, x) <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// τ ∈ (0, 1)
    TauRange,
    /// P ≻ 0
    PositiveDefiniteP,
    /// S₁, S₂ diagonal with nonnegative entries
    MultiplierSign,
    /// U ⪰ 0
    SemidefiniteU,
    /// main condition ≺ 0
    Main,
    /// ΘᵀS₁Θ − τ ≤ 0
    Level,
    /// U − P ⪯ 0
    Inclusion,
    /// no positive decay rate could be certified
    Decrease,
    /// shapes do not match the closed loop
    Shape,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::TauRange => "tau in (0,1)",
            Condition::PositiveDefiniteP => "P > 0",
            Condition::MultiplierSign => "S1, S2 >= 0",
            Condition::SemidefiniteU => "U >= 0",
            Condition::Main => "main condition < 0",
            Condition::Level => "level condition <= 0",
            Condition::Inclusion => "inclusion U - P <= 0",
            Condition::Decrease => "positive decay rate",
            Condition::Shape => "dimensions",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: Condition,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[error("certificate violated: {}", describe(.violations))]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
    pub residuals: Option<Residuals>,
}

fn describe(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("{} (residual {:.3e})", v.condition, v.residual))
        .collect::<Vec<_>>()
        .join("; ")
}

impl ViolationReport {
    pub fn has(&self, c: Condition) -> bool {
        self.violations.iter().any(|v| v.condition == c)
    }
}

/// Recheck all synthesis conditions and compute the largest certified decay.
pub fn check_conditions(
    it: &SynthesisIterate,
    cl: &ClosedLoop,
    margins: &Margins,
) -> std::result::Result<Certificate, ViolationReport> {
    let n = cl.n_states();
    let nu = cl.n_inputs();
    let shape_ok = it.p.shape() == (n, n)
        && it.u.shape() == (n, n)
        && it.e.shape() == (cl.n_controller(), nu)
        && it.s1.len() == nu
        && it.s2.len() == nu;
    if !shape_ok {
        return Err(ViolationReport {
            violations: vec![Violation {
                condition: Condition::Shape,
                residual: f64::NAN,
            }],
            residuals: None,
        });
    }
    let mut violations = Vec::new();
    let mut fail = |condition, residual| violations.push(Violation { condition, residual });

    if !(it.tau > 0.0 && it.tau < 1.0) {
        fail(Condition::TauRange, it.tau);
    }
    let p_min = lambda_min(&it.p);
    if !(p_min > 0.0) {
        fail(Condition::PositiveDefiniteP, p_min);
    }
    let s_min = it.s1.iter().chain(&it.s2).copied().fold(f64::INFINITY, f64::min);
    if !(s_min >= 0.0) {
        fail(Condition::MultiplierSign, s_min);
    }
    let u_min = lambda_min(&it.u);
    if !(u_min >= -margins.eigen) {
        fail(Condition::SemidefiniteU, u_min);
    }
    let residuals = Residuals {
        main_lambda_max: lambda_max(&build_main_mi(it, cl)),
        level: build_level_residual(&it.s1, it.tau, cl.quantizer()),
        inclusion_lambda_max: lambda_max(&build_inclusion_residual(&it.u, &it.p)),
    };
    if !(residuals.main_lambda_max < 0.0) {
        fail(Condition::Main, residuals.main_lambda_max);
    }
    if !(residuals.level <= margins.eigen) {
        fail(Condition::Level, residuals.level);
    }
    if !(residuals.inclusion_lambda_max <= margins.eigen) {
        fail(Condition::Inclusion, residuals.inclusion_lambda_max);
    }

    let mut varrho = 0.0;
    if violations.is_empty() {
        varrho = max_decay(it, cl, margins.bisection_width);
        if varrho <= 0.0 {
            violations.push(Violation {
                condition: Condition::Decrease,
                residual: lambda_max(&build_reduced_mi(it, cl)),
            });
        }
    }
    if !violations.is_empty() {
        return Err(ViolationReport {
            violations,
            residuals: Some(residuals),
        });
    }
    Ok(Certificate {
        p: it.p.clone(),
        e: it.e.clone(),
        s1: it.s1.clone(),
        s2: it.s2.clone(),
        tau: it.tau,
        u: it.u.clone(),
        mu: (1.0 - varrho).ln(),
        varrho,
        residuals,
        margins: *margins,
        tool_version: crate::VERSION.to_string(),
    })
}

/// Largest `ϱ ∈ [0, 1)` with `M + blkdiag(ϱP, 0) ⪯ 0` (bisection; the feasible set
/// is an interval since `P ≻ 0`). Returns 0 when `M` itself is not `⪯ 0`.
pub fn max_decay(it: &SynthesisIterate, cl: &ClosedLoop, width: f64) -> f64 {
    let m = build_reduced_mi(it, cl);
    let n = cl.n_states();
    let feasible = |rho: f64| {
        let mut shifted = m.clone();
        let mut blk = shifted.view_mut((0, 0), (n, n));
        blk += &it.p * rho;
        lambda_max(&shifted) <= 0.0
    };
    if !feasible(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    if feasible(hi - width) {
        return hi - width;
    }
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Steps after which the solution from `x` is guaranteed inside `E(P)`:
/// `⌈ln V(x) / |μ|⌉` outside, 0 inside. Ratios within 1e-12 (relative) above an
/// integer are rounded down.
pub fn gamma_bound(cert: &Certificate, x: &DVector<f64>) -> u64 {
    gamma_from_level(cert.mu, cert.lyapunov(x))
}

pub fn gamma_from_level(mu: f64, v: f64) -> u64 {
    if v <= 1.0 {
        return 0;
    }
    let ratio = v.ln() / -mu;
    let floor = ratio.floor();
    if ratio - floor <= 1e-12 * ratio.max(1.0) {
        floor as u64
    } else {
        ratio.ceil() as u64
    }
}

/// Over-approximation of `T(r) = sup Γ` over `E(P) + r𝔹`, using
/// `V ≤ λ_max(P)·(λ_min(P)^{-1/2} + r)²` on that set.
pub fn finite_time_bound(cert: &Certificate, r: f64) -> u64 {
    let radius = 1.0 / lambda_min(&cert.p).sqrt() + r.max(0.0);
    gamma_from_level(cert.mu, lambda_max(&cert.p) * radius * radius)
}

/// `E(P) ⊆ E(U)` via `λ_max(U − P) ≤ margin`.
pub fn inclusion_check(cert: &Certificate) -> bool {
    lambda_max(&build_inclusion_residual(&cert.u, &cert.p)) <= cert.margins.eigen
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UgftaFailure {
    /// `V(x⁺) > e^μ V(x)` outside the attractor
    Decrease,
    /// left the attractor after entering it
    Invariance,
    /// not inside the attractor by step Γ(x₀)
    EntryTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UgftaViolation {
    pub sample: usize,
    pub step: usize,
    pub kind: UgftaFailure,
    pub residual: f64,
    pub state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct UgftaReport {
    pub samples: usize,
    pub steps_checked: usize,
    /// Largest observed `V(x⁺) / V(x)` outside the attractor.
    pub worst_decrease_ratio: f64,
    /// Largest observed `V` after entering the attractor.
    pub worst_invariant_level: f64,
    /// Largest `entry step − Γ(x₀)` (≤ 0 when sound).
    pub worst_entry_slack: i64,
    pub violations: Vec<UgftaViolation>,
}

impl UgftaReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Simulate every sample and check the certified decrease, the invariance of
/// `E(P)` and the entry-time bound Γ. Each run lasts `max(horizon, Γ(x₀) + 1)` steps.
pub fn empirical_ugfta(
    cert: &Certificate,
    cl: &ClosedLoop,
    e: &DMatrix<f64>,
    samples: &[DVector<f64>],
    horizon: usize,
) -> Result<UgftaReport> {
    let rel = cert.margins.simulation_rel;
    let decay = cert.mu.exp();
    let mut report = UgftaReport {
        samples: samples.len(),
        worst_entry_slack: i64::MIN,
        ..UgftaReport::default()
    };
    for (idx, x0) in samples.iter().enumerate() {
        let gamma = gamma_bound(cert, x0);
        let steps = horizon.max(gamma as usize + 1);
        let mut x = x0.clone();
        let mut v = cert.lyapunov(&x);
        let mut entered = if v <= 1.0 { Some(0usize) } else { None };
        for j in 0..steps {
            let next = step(cl, e, &x, true)?;
            let v_next = cert.lyapunov(&next);
            report.steps_checked += 1;
            if v > 1.0 {
                report.worst_decrease_ratio = report.worst_decrease_ratio.max(v_next / v);
                let excess = v_next - (decay * v + rel * v);
                if excess > 0.0 {
                    report.violations.push(UgftaViolation {
                        sample: idx,
                        step: j,
                        kind: UgftaFailure::Decrease,
                        residual: excess,
                        state: x.iter().copied().collect(),
                    });
                }
            }
            if entered.is_some() {
                report.worst_invariant_level = report.worst_invariant_level.max(v_next);
                if v_next > 1.0 + rel {
                    report.violations.push(UgftaViolation {
                        sample: idx,
                        step: j + 1,
                        kind: UgftaFailure::Invariance,
                        residual: v_next - 1.0,
                        state: next.iter().copied().collect(),
                    });
                }
            } else if v_next <= 1.0 + rel {
                entered = Some(j + 1);
            }
            x = next;
            v = v_next;
        }
        let entry = entered.map_or(steps as i64 + 1, |s| s as i64);
        let slack = entry - gamma as i64;
        report.worst_entry_slack = report.worst_entry_slack.max(slack);
        if slack > 0 {
            report.violations.push(UgftaViolation {
                sample: idx,
                step: entry as usize,
                kind: UgftaFailure::EntryTime,
                residual: slack as f64,
                state: x0.iter().copied().collect(),
            });
        }
    }
    if samples.is_empty() {
        report.worst_entry_slack = 0;
    }
    Ok(report)
}

/// Random states with `V(x) = xᵀPx` log-uniform in `(v_lo, v_hi)` and uniformly
/// distributed directions.
pub fn sample_states_on_levels<R: Rng>(
    p: &DMatrix<f64>,
    count: usize,
    v_lo: f64,
    v_hi: f64,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let n = p.nrows();
    let (a, b) = (v_lo.ln(), v_hi.ln());
    (0..count)
        .map(|_| {
            let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let level = rng.random_range(a..b).exp();
            let scale = (level / quad_form(p, &dir)).sqrt();
            dir * scale
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cert_with(mu: f64, p: DMatrix<f64>, u: DMatrix<f64>) -> Certificate {
        Certificate {
            p,
            e: DMatrix::zeros(1, 1),
            s1: vec![1.0],
            s2: vec![0.0],
            tau: 0.1,
            u,
            mu,
            varrho: 1.0 - mu.exp(),
            residuals: Residuals {
                main_lambda_max: -1.0,
                level: 0.0,
                inclusion_lambda_max: 0.0,
            },
            margins: Margins::default(),
            tool_version: String::new(),
        }
    }

    #[test]
    fn gamma_examples() {
        let mu = (0.8_f64).ln();
        let p = DMatrix::identity(1, 1);
        let cert = cert_with(mu, p.clone(), p);
        let inside = DVector::from_element(1, 0.5);
        assert_eq!(gamma_bound(&cert, &inside), 0);
        assert_eq!(gamma_from_level(mu, (-2.0 * mu).exp()), 2);
        assert_eq!(gamma_from_level(mu, (-2.5 * mu).exp()), 3);
        let x = DVector::from_element(1, (-2.0 * mu).exp().sqrt());
        assert_eq!(gamma_bound(&cert, &x), 2);
    }

    #[test]
    fn inclusion_examples() {
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0]);
        let mu = (0.9_f64).ln();
        assert!(inclusion_check(&cert_with(mu, p.clone(), p.clone())));
        assert!(inclusion_check(&cert_with(mu, p.clone(), DMatrix::zeros(2, 2))));
        assert!(!inclusion_check(&cert_with(
            mu,
            p.clone(),
            &p + DMatrix::identity(2, 2)
        )));
    }

    #[test]
    fn ellipsoid_membership() {
        let s = EllipsoidSet::new(crate::linalg::diag(&[4.0, 1.0]));
        assert!(s.contains(&DVector::from_column_slice(&[0.5, 0.0])));
        assert!(!s.contains(&DVector::from_column_slice(&[0.6, 0.0])));
    }

    #[test]
    fn finite_time_bound_dominates_gamma_on_ball() {
        let p = crate::linalg::diag(&[4.0, 1.0]);
        let cert = cert_with((0.7_f64).ln(), p.clone(), DMatrix::zeros(2, 2));
        let t = finite_time_bound(&cert, 2.0);
        // the point farthest in V within E(P) + 2B along the first axis
        let x = DVector::from_column_slice(&[0.5 + 2.0, 0.0]);
        assert!(gamma_bound(&cert, &x) <= t);
    }

    #[test]
    fn sampled_levels_are_in_range() {
        use rand::SeedableRng;
        let p = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for x in sample_states_on_levels(&p, 200, 1.0, 1e3, &mut rng) {
            let v = quad_form(&p, &x);
            assert!(v > 1.0 - 1e-9 && v < 1e3 * (1.0 + 1e-9), "{v}");
        }
    }
}
