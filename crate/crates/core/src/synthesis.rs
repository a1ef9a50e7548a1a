//! Iterative convex-concave synthesis of the compensator gain `E`.
//!
//! Starting from the E = 0 line-search solution, each iteration solves the
//! linear inner approximation around the previous iterate. Every subproblem
//! solution is feasible for the original bilinear conditions, so the loop can
//! always fall back to the last iterate.

use std::io::{self, Write};
use std::time::Instant;

use log::{debug, info, warn};
use nalgebra::DMatrix;
use thiserror::Error;

use crate::error::Error;
use crate::linalg::lambda_max;
use crate::lmi::{accept_iterate, build_linearized_subproblem, build_main_mi, Objective, SynthesisIterate, UStructure};
use crate::plant::{ClosedLoop, QuantizerSpec};
use crate::sdp::{line_search_init, solve_with, LineSearchConfig, SdpStatus, SolverSettings, DEFAULT_DELTA};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    /// Stop when `|ω(U_{k+1}) − ω(U_k)| ≤ epsilon`.
    pub epsilon: f64,
    pub k_max: usize,
    pub ustruct: UStructure,
    pub omega: Objective,
    pub line_search: LineSearchConfig,
    /// Strictness margin for `≺ 0` / `≻ 0`.
    pub delta: f64,
    pub solver: SolverSettings,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            k_max: 2000,
            ustruct: UStructure::FreePsd,
            omega: Objective::Trace,
            line_search: LineSearchConfig::default(),
            delta: DEFAULT_DELTA,
            solver: SolverSettings::default(),
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidConfig("k_max must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "delta must be in (0, 0.5), got {}",
                self.delta
            )));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol must be positive, got {}",
                self.solver.tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub tau: f64,
    pub omega: f64,
    /// λ_max of the main condition matrix at the iterate.
    pub lambda_max_main: f64,
    pub status: SdpStatus,
    pub millis: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    /// Terminated by the `ε` test rather than by `k_max`.
    pub converged: bool,
}

impl IterationTrace {
    pub fn omegas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.omega).collect()
    }

    /// Number of subproblems solved.
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k,tau,omega,lambda_max_8a,status,ms")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{:.3}",
                r.k, r.tau, r.omega, r.lambda_max_main, r.status, r.millis
            )?;
        }
        Ok(())
    }
}

/// Successive `|ω(U_{k+1}) − ω(U_k)|`.
pub fn objective_progress(trace: &IterationTrace) -> Vec<f64> {
    trace
        .records
        .windows(2)
        .map(|w| (w[1].omega - w[0].omega).abs())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOutcome {
    pub e: DMatrix<f64>,
    pub iterate: SynthesisIterate,
    pub trace: IterationTrace,
}

#[derive(Debug, Clone, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Setup(#[from] Error),

    #[error("subproblem at iteration {k} failed ({status}): {diagnostic}")]
    Subproblem {
        k: usize,
        status: SdpStatus,
        diagnostic: String,
        /// Last feasible iterate reached before the failure.
        last: Box<SynthesisOutcome>,
    },
}

impl SynthesisError {
    /// True when the subproblem was certified infeasible at its linearization point,
    /// as opposed to the backend failing.
    pub fn is_infeasible_at_linearization(&self) -> bool {
        matches!(
            self,
            SynthesisError::Subproblem {
                status: SdpStatus::Infeasible,
                ..
            }
        )
    }
}

/// Factor `k = s²`, `s = min(1, max θ)`, by which `P`, `S₁`, `S₂` and `U` are
/// multiplied in the working problem (whose quantizer steps are `Θ / s`).
pub fn working_scale(cl: &ClosedLoop) -> f64 {
    let s = cl.quantizer().theta().iter().copied().fold(0.0, f64::max).min(1.0);
    s * s
}

/// Backtracking steps tried when a subproblem solution fails the recheck.
const BACKTRACK_STEPS: usize = 30;

/// Run the convex-concave synthesis loop on `cl`.
///
/// The SDPs are posed in working units (see [`working_scale`]), where `δ` and the
/// recheck margin apply; the trace and the returned iterate are in original units.
/// A subproblem solution that fails [`accept_iterate`] is pulled back towards the
/// previous iterate, which is feasible for the same subproblem; if no step passes,
/// the previous iterate is kept and the loop stops on the `ε` test.
pub fn synthesize(cl: &ClosedLoop, config: &SynthesisConfig) -> Result<SynthesisOutcome, SynthesisError> {
    config.validate()?;
    info!(
        "synthesis: backend={} tol={:.1e} delta={:.1e} epsilon={:.1e} k_max={} grid={} points in [{:.3}, {:.3}] U={:?}",
        config.solver.backend,
        config.solver.tol,
        config.delta,
        config.epsilon,
        config.k_max,
        config.line_search.grid.len(),
        config.line_search.grid.iter().copied().fold(f64::INFINITY, f64::min),
        config
            .line_search
            .grid
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
        config.ustruct,
    );
    let scale = working_scale(cl);
    let s = scale.sqrt();
    let theta: Vec<f64> = cl.quantizer().theta().iter().map(|t| t / s).collect();
    let work = cl.with_quantizer(QuantizerSpec::new(theta)?)?;
    let original = |it: &SynthesisIterate| it.rescaled(1.0 / scale);
    let omega_of = |it: &SynthesisIterate| config.omega.value(&it.u) / scale;
    let lambda_of = |it: &SynthesisIterate| lambda_max(&build_main_mi(&original(it), cl));

    let start = Instant::now();
    let init = line_search_init(
        &work,
        config.ustruct,
        &config.omega,
        &config.line_search,
        config.delta,
        &config.solver,
    )?;
    let mut current = init.iterate;
    let mut omega = omega_of(&current);
    let mut trace = IterationTrace::default();
    trace.records.push(IterationRecord {
        k: 0,
        tau: current.tau,
        omega,
        lambda_max_main: lambda_of(&current),
        status: SdpStatus::Optimal,
        millis: start.elapsed().as_secs_f64() * 1e3,
    });

    let margin = config.solver.recheck_margin();
    let finish = |current: &SynthesisIterate, trace| SynthesisOutcome {
        e: current.e.clone(),
        iterate: original(current),
        trace,
    };
    let mut k = 0;
    while k < config.k_max {
        let t0 = Instant::now();
        let sub = build_linearized_subproblem(&current.point(), &work, config.ustruct, &config.omega, config.delta);
        let sol = solve_with(&sub.problem, &config.solver);
        // a converged solution that misses the backend recheck is still a usable
        // search direction: every step taken below is rechecked exactly
        if !sol.is_usable() && !(sol.backend_converged && sol.x.iter().all(|v| v.is_finite())) {
            let out = finish(&current, trace);
            return Err(subproblem_failure(k, sol.status, sol.diagnostics, out));
        }
        let candidate = sub.extract(&sol);
        let mut next = None;
        let mut step = 1.0;
        for _ in 0..BACKTRACK_STEPS {
            let trial = if step == 1.0 {
                candidate.clone()
            } else {
                current.lerp(&candidate, step)
            };
            match accept_iterate(&trial, &work, config.delta, margin) {
                Ok(_) => {
                    next = Some(trial);
                    break;
                }
                Err(why) => debug!("iteration {k}: step {step:.3e} rejected ({why})"),
            }
            step *= 0.5;
        }
        let next = next.unwrap_or_else(|| {
            warn!("iteration {k}: no acceptable step towards the subproblem solution, keeping the previous iterate");
            current.clone()
        });
        let next_omega = omega_of(&next);
        if next_omega < omega - margin * (1.0 + omega.abs()) {
            warn!("iteration {k}: objective decreased from {omega:.9e} to {next_omega:.9e}");
        }
        trace.records.push(IterationRecord {
            k: k + 1,
            tau: next.tau,
            omega: next_omega,
            lambda_max_main: lambda_of(&next),
            status: sol.status,
            millis: t0.elapsed().as_secs_f64() * 1e3,
        });
        let progress = (next_omega - omega).abs();
        current = next;
        omega = next_omega;
        if progress <= config.epsilon {
            trace.converged = true;
            break;
        }
        k += 1;
    }
    info!(
        "synthesis finished after {} iterations (converged: {}) in {:.2}s, omega={omega:.6e}",
        trace.iterations(),
        trace.converged,
        start.elapsed().as_secs_f64()
    );
    Ok(finish(&current, trace))
}

fn subproblem_failure(k: usize, status: SdpStatus, diagnostic: String, last: SynthesisOutcome) -> SynthesisError {
    warn!("iteration {k}: {diagnostic}");
    SynthesisError::Subproblem {
        k,
        status,
        diagnostic,
        last: Box::new(last),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(k: usize, omega: f64) -> IterationRecord {
        IterationRecord {
            k,
            tau: 0.1,
            omega,
            lambda_max_main: -1.0,
            status: SdpStatus::Optimal,
            millis: 0.0,
        }
    }

    #[test]
    fn progress_of_single_entry_trace_is_empty() {
        let t = IterationTrace {
            records: vec![record(0, 1.0)],
            converged: false,
        };
        assert!(objective_progress(&t).is_empty());
    }

    #[test]
    fn progress_is_absolute_difference() {
        let t = IterationTrace {
            records: vec![record(0, 1.0), record(1, 1.5), record(2, 1.25)],
            converged: false,
        };
        assert_eq!(objective_progress(&t), vec![0.5, 0.25]);
    }

    #[test]
    fn config_validation() {
        let mut c = SynthesisConfig::default();
        assert!(c.validate().is_ok());
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        let c = SynthesisConfig {
            k_max: 0,
            ..SynthesisConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn trace_csv_header() {
        let t = IterationTrace {
            records: vec![record(0, 1.0)],
            converged: true,
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("k,tau,omega,lambda_max_8a,status,ms\n0,0.1,1,-1,optimal,"));
    }
}
