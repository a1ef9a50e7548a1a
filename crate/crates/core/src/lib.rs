//! Synthesis and certification of anti-windup-like compensators for discrete-time
//! output-feedback loops with a uniformly quantized control input.
//!
//! The closed loop `x⁺ = A_CL x + (B_CL + R E) ψ_Θ(Hx)` is built in [`plant`]. The
//! matrix inequalities live in [`lmi`], the conic backend and the τ line search in
//! [`sdp`], the iterative gain design in [`synthesis`] and the independent checks
//! in [`certify`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate openblas_src as _;

pub mod affine;
pub mod certify;
pub mod error;
pub mod examples;
pub mod linalg;
pub mod lmi;
pub mod plant;
pub mod problem;
pub mod sdp;
pub mod serde_matrix;
pub mod synthesis;

pub use certify::{
    check_conditions, empirical_ugfta, finite_time_bound, gamma_bound, inclusion_check, Certificate, EllipsoidSet,
    Margins, UgftaReport, ViolationReport,
};
pub use error::{Error, Result};
pub use lmi::{Objective, SynthesisIterate, UStructure};
pub use plant::{
    assemble_closed_loop, psi, quantize, sector_residuals, simulate, step, ClosedLoop, ControllerModel, PlantModel,
    QuantizerSpec, Trajectory,
};
pub use problem::{ProblemFile, ResultFile};
pub use sdp::{solve, spectral_radius, LineSearchConfig, SdpProblem, SdpSolution, SdpStatus, SolverSettings};
pub use synthesis::{
    objective_progress, synthesize, IterationTrace, SynthesisConfig, SynthesisError, SynthesisOutcome,
};

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
