//! Problem and result documents (JSON, matrices as arrays of rows).

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certify::{Certificate, Margins, Residuals};
use crate::error::{Error, Result};
use crate::lmi::{Objective, SynthesisIterate, UStructure};
use crate::plant::{assemble_closed_loop, ClosedLoop, ControllerModel, PlantModel, QuantizerSpec};
use crate::sdp::{Backend, LineSearchConfig, SolverSettings, DEFAULT_DELTA, DEFAULT_TOL};
use crate::serde_matrix::{self, parse_rows};
use crate::synthesis::{SynthesisConfig, SynthesisOutcome};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "D")]
    pub d: Rows,
}

/// Either `"a:b:n"` or an explicit list of τ values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauGrid {
    Range(String),
    Points(Vec<f64>),
}

impl Default for TauGrid {
    fn default() -> Self {
        TauGrid::Range("0.01:0.99:50".into())
    }
}

impl TauGrid {
    pub fn to_config(&self) -> Result<LineSearchConfig> {
        match self {
            TauGrid::Range(s) => LineSearchConfig::parse(s),
            TauGrid::Points(p) => LineSearchConfig::new(p.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveSpec {
    Trace,
    /// `ω(U) = trace(W U)`
    Linear(Rows),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    pub epsilon: f64,
    pub k_max: usize,
    pub tau_grid: TauGrid,
    pub u_structure: UStructure,
    pub objective: ObjectiveSpec,
    pub delta: f64,
    pub tol: f64,
    pub max_iter: u32,
    pub backend: String,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let solver = SolverSettings::default();
        Self {
            epsilon: 1e-4,
            k_max: 2000,
            tau_grid: TauGrid::default(),
            u_structure: UStructure::FreePsd,
            objective: ObjectiveSpec::Trace,
            delta: DEFAULT_DELTA,
            tol: DEFAULT_TOL,
            max_iter: solver.max_iter,
            backend: solver.backend.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    On,
    Off,
}

/// Compensation schedule: always on, always off, or on during half-open windows `[from, to)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Schedule {
    Mode(ScheduleMode),
    Windows(Vec<[usize; 2]>),
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Mode(ScheduleMode::On)
    }
}

impl Schedule {
    pub fn flags(&self, horizon: usize) -> Vec<bool> {
        (0..horizon)
            .map(|j| match self {
                Schedule::Mode(m) => *m == ScheduleMode::On,
                Schedule::Windows(w) => w.iter().any(|[a, b]| (*a..*b).contains(&j)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub x0: Vec<f64>,
    pub horizon: usize,
    #[serde(default)]
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub plant: PlantSection,
    pub controller: ControllerSection,
    pub theta: Vec<f64>,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
}

/// A validated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub plant: PlantModel,
    pub controller: ControllerModel,
    pub closed_loop: ClosedLoop,
    pub config: SynthesisConfig,
    pub simulation: Option<SimulationSetup>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSetup {
    pub x0: DVector<f64>,
    pub horizon: usize,
    pub schedule: Vec<bool>,
}

fn matrix(field: &str, symbol: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    parse_rows(rows).map_err(|e| Error::Schema(format!("{field} ({symbol}): {e}")))
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Compact JSON of the parsed document with defaults filled in.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("problem serializes")
    }

    /// SHA-256 of [`Self::canonical_json`], hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    /// Validate everything and assemble the closed loop.
    pub fn build(&self) -> Result<Problem> {
        let plant = PlantModel::new(
            matrix("plant.A", "A_p", &self.plant.a)?,
            matrix("plant.B", "B_p", &self.plant.b)?,
            matrix("plant.C", "C_p", &self.plant.c)?,
        )?;
        let controller = ControllerModel::new(
            matrix("controller.A", "A_c", &self.controller.a)?,
            matrix("controller.B", "B_c", &self.controller.b)?,
            matrix("controller.C", "C_c", &self.controller.c)?,
            matrix("controller.D", "D_c", &self.controller.d)?,
        )?;
        let quantizer = QuantizerSpec::new(self.theta.clone())?;
        let closed_loop = assemble_closed_loop(&plant, &controller, &quantizer)?;
        let config = self.synthesis_config(&closed_loop)?;
        let simulation = match &self.simulation {
            None => None,
            Some(sim) => {
                if sim.x0.len() != closed_loop.n_states() {
                    return Err(Error::Schema(format!(
                        "simulation.x0 has {} entries, expected n_p + n_c = {}",
                        sim.x0.len(),
                        closed_loop.n_states()
                    )));
                }
                if sim.x0.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Schema("simulation.x0 has non-finite entries".into()));
                }
                Some(SimulationSetup {
                    x0: DVector::from_column_slice(&sim.x0),
                    horizon: sim.horizon,
                    schedule: sim.schedule.flags(sim.horizon),
                })
            }
        };
        Ok(Problem {
            plant,
            controller,
            closed_loop,
            config,
            simulation,
        })
    }

    fn synthesis_config(&self, cl: &ClosedLoop) -> Result<SynthesisConfig> {
        let s = &self.synthesis;
        let omega = match &s.objective {
            ObjectiveSpec::Trace => Objective::Trace,
            ObjectiveSpec::Linear(rows) => {
                let w = matrix("synthesis.objective.linear", "W", rows)?;
                if w.shape() != (cl.n_states(), cl.n_states()) {
                    return Err(Error::Schema(format!(
                        "synthesis.objective.linear is {:?}, expected {:?}",
                        w.shape(),
                        (cl.n_states(), cl.n_states())
                    )));
                }
                Objective::Linear(w)
            }
        };
        let config = SynthesisConfig {
            epsilon: s.epsilon,
            k_max: s.k_max,
            ustruct: s.u_structure,
            omega,
            line_search: s.tau_grid.to_config()?,
            delta: s.delta,
            solver: SolverSettings {
                backend: s.backend.parse::<Backend>()?,
                tol: s.tol,
                max_iter: s.max_iter,
            },
        };
        config.validate()?;
        Ok(config)
    }
}

/// Settings a result was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub backend: String,
    pub tol: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub k_max: usize,
    pub u_structure: UStructure,
    pub tau_grid: Vec<f64>,
}

impl RunSettings {
    pub fn from_config(c: &SynthesisConfig) -> Self {
        Self {
            backend: c.solver.backend.to_string(),
            tol: c.solver.tol,
            delta: c.delta,
            epsilon: c.epsilon,
            k_max: c.k_max,
            u_structure: c.ustruct,
            tau_grid: c.line_search.grid.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    #[serde(rename = "E", with = "serde_matrix")]
    pub e: DMatrix<f64>,
    #[serde(rename = "P", with = "serde_matrix")]
    pub p: DMatrix<f64>,
    #[serde(rename = "S1")]
    pub s1: Vec<f64>,
    #[serde(rename = "S2")]
    pub s2: Vec<f64>,
    pub tau: f64,
    #[serde(rename = "U", with = "serde_matrix")]
    pub u: DMatrix<f64>,
    pub mu: f64,
    pub varrho: f64,
    pub omega_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residuals: Residuals,
    pub margins: Margins,
    pub settings: RunSettings,
    pub tool_version: String,
    pub input_digest: String,
}

impl ResultFile {
    pub fn new(cert: &Certificate, outcome: &SynthesisOutcome, config: &SynthesisConfig, input_digest: String) -> Self {
        Self {
            e: cert.e.clone(),
            p: cert.p.clone(),
            s1: cert.s1.clone(),
            s2: cert.s2.clone(),
            tau: cert.tau,
            u: cert.u.clone(),
            mu: cert.mu,
            varrho: cert.varrho,
            omega_trace: outcome.trace.omegas(),
            iterations: outcome.trace.iterations(),
            converged: outcome.trace.converged,
            residuals: cert.residuals,
            margins: cert.margins,
            settings: RunSettings::from_config(config),
            tool_version: crate::VERSION.to_string(),
            input_digest,
        }
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
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("result file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
