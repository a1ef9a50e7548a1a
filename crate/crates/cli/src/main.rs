use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use quantaw_core::certify::{check_conditions, empirical_ugfta, sample_states_on_levels, Certificate, Margins};
use quantaw_core::examples::{example_problem, EXAMPLE_IDS};
use quantaw_core::problem::{Problem, ProblemFile, ResultFile, TauGrid};
use quantaw_core::synthesis::{synthesize, SynthesisError, SynthesisOutcome};
use quantaw_core::{simulate, Error, Trajectory};

mod exit {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const SCHEMA: u8 = 2;
    pub const UNSTABLE: u8 = 3;
    pub const SOLVER: u8 = 4;
    pub const CERTIFICATE: u8 = 5;
}

#[derive(Parser, Debug)]
#[command(
    name = "quantaw",
    version,
    about = "Compensator synthesis for loops with quantized input"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Settings that override the problem file.
#[derive(Args, Debug, Clone, Default)]
struct Overrides {
    /// Solver tolerance
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Strictness margin for strict inequalities
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Objective-progress stopping threshold
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Iteration cap
    #[arg(long, global = true)]
    kmax: Option<usize>,
    /// Line-search grid as start:end:count
    #[arg(long = "tau-grid", global = true, value_name = "A:B:N")]
    tau_grid: Option<String>,
    /// SDP backend name
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Seed for randomized checks
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize and certify a compensator gain
    Synth {
        problem: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Iteration trace CSV
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Simulate with and without the gain of a result file
    Simulate {
        problem: PathBuf,
        result: PathBuf,
        /// Output directory for the trajectory CSVs
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Re-check a result file against its problem
    Verify {
        problem: PathBuf,
        result: PathBuf,
        /// Random initial states for the simulated decrease check
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Run a bundled example end to end
    Reproduce {
        /// example1 or example2
        example: String,
        out_dir: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::UnstableNominalLoop { .. } => exit::UNSTABLE,
            Error::NoFeasibleGridPoint { .. } | Error::Solver(_) => exit::SOLVER,
            _ => exit::SCHEMA,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<SynthesisError> for Failure {
    fn from(e: SynthesisError) -> Self {
        match e {
            SynthesisError::Setup(e) => e.into(),
            other => Failure::new(exit::SOLVER, other.to_string()),
        }
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(exit::IO, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn apply_overrides(pf: &mut ProblemFile, o: &Overrides) {
    let s = &mut pf.synthesis;
    if let Some(v) = o.tol {
        s.tol = v;
    }
    if let Some(v) = o.delta {
        s.delta = v;
    }
    if let Some(v) = o.epsilon {
        s.epsilon = v;
    }
    if let Some(v) = o.kmax {
        s.k_max = v;
    }
    if let Some(v) = &o.tau_grid {
        s.tau_grid = TauGrid::Range(v.clone());
    }
    if let Some(v) = &o.backend {
        s.backend = v.clone();
    }
}

/// Parsed problem file, the digest of the file as given and the problem with overrides applied.
fn load_problem(path: &Path, o: &Overrides) -> Result<(ProblemFile, String, Problem), Failure> {
    let pf = ProblemFile::load(path)?;
    let digest = pf.digest();
    let mut effective = pf.clone();
    apply_overrides(&mut effective, o);
    let problem = effective.build()?;
    let c = &problem.config;
    info!(
        "backend {}, tol {:e}, delta {:e}, epsilon {:e}, k_max {}, tau grid {} points in [{}, {}]",
        c.solver.backend,
        c.solver.tol,
        c.delta,
        c.epsilon,
        c.k_max,
        c.line_search.grid.len(),
        c.line_search.grid.first().copied().unwrap_or(f64::NAN),
        c.line_search.grid.last().copied().unwrap_or(f64::NAN),
    );
    Ok((pf, digest, problem))
}

fn load_result(path: &Path) -> Result<ResultFile, Failure> {
    Ok(ResultFile::load(path)?)
}

fn print_certificate(cert: &Certificate) {
    println!("certificate: valid");
    println!("  lambda_max(main)      = {:.6e}", cert.residuals.main_lambda_max);
    println!("  level residual        = {:.6e}", cert.residuals.level);
    println!("  lambda_max(U - P)     = {:.6e}", cert.residuals.inclusion_lambda_max);
    println!("  tau                   = {}", cert.tau);
    println!("  varrho                = {:.6e}", cert.varrho);
    println!("  mu                    = {:.6e}", cert.mu);
}

struct Synthesized {
    outcome: SynthesisOutcome,
    cert: Certificate,
    result: ResultFile,
}

fn run_synthesis(problem: &Problem, digest: String) -> Result<Synthesized, Failure> {
    let outcome = synthesize(&problem.closed_loop, &problem.config)?;
    info!(
        "{} iterations, converged: {}, E = {:?}",
        outcome.trace.iterations(),
        outcome.trace.converged,
        outcome.e.as_slice()
    );
    let cert = check_conditions(&outcome.iterate, &problem.closed_loop, &Margins::default())
        .map_err(|r| Failure::new(exit::CERTIFICATE, r.to_string()))?;
    let result = ResultFile::new(&cert, &outcome, &problem.config, digest);
    Ok(Synthesized { outcome, cert, result })
}

fn write_trace(path: &Path, outcome: &SynthesisOutcome) -> Result<(), Failure> {
    let f = fs::File::create(path).map_err(|e| io_fail(path, e))?;
    outcome.trace.write_csv(BufWriter::new(f)).map_err(|e| io_fail(path, e))
}

fn write_trajectory(path: &Path, t: &Trajectory) -> Result<(), Failure> {
    let f = fs::File::create(path).map_err(|e| io_fail(path, e))?;
    t.write_csv(BufWriter::new(f)).map_err(|e| io_fail(path, e))
}

fn cmd_synth(problem: &Path, out: &Path, trace: Option<&Path>, o: &Overrides) -> Result<(), Failure> {
    let (_, digest, problem) = load_problem(problem, o)?;
    let s = run_synthesis(&problem, digest)?;
    write_file(out, &s.result.to_json())?;
    if let Some(path) = trace {
        write_trace(path, &s.outcome)?;
    }
    print_certificate(&s.cert);
    println!("  iterations            = {}", s.outcome.trace.iterations());
    println!("  E                     = {:?}", s.cert.e.as_slice());
    Ok(())
}

/// Compensated run (problem schedule) and uncompensated run (E = 0).
fn simulate_pair(problem: &Problem, e: &DMatrix<f64>, out: &Path) -> Result<(), Failure> {
    let sim = problem
        .simulation
        .as_ref()
        .ok_or_else(|| Failure::new(exit::SCHEMA, "problem file has no simulation section"))?;
    let cl = &problem.closed_loop;
    let on = simulate(cl, e, &sim.x0, sim.horizon, &sim.schedule)?;
    let off = simulate(cl, e, &sim.x0, sim.horizon, &vec![false; sim.horizon])?;
    fs::create_dir_all(out).map_err(|err| io_fail(out, err))?;
    write_trajectory(&out.join("trajectory_compensated.csv"), &on)?;
    write_trajectory(&out.join("trajectory_uncompensated.csv"), &off)?;
    let n_p = cl.n_plant();
    let last = |t: &Trajectory| t.plant_states(n_p).last().map_or(0.0, |x| x.norm());
    println!(
        "final |x_p|: compensated {:.6e}, uncompensated {:.6e}",
        last(&on),
        last(&off)
    );
    Ok(())
}

fn cmd_simulate(problem: &Path, result: &Path, out: &Path, o: &Overrides) -> Result<(), Failure> {
    let (_, _, problem) = load_problem(problem, o)?;
    let result = load_result(result)?;
    problem.closed_loop.check_gain(&result.e)?;
    simulate_pair(&problem, &result.e, out)
}

fn cmd_verify(problem: &Path, result: &Path, samples: usize, o: &Overrides) -> Result<(), Failure> {
    let (_, digest, problem) = load_problem(problem, o)?;
    let result = load_result(result)?;
    if result.input_digest != digest {
        return Err(Failure::new(
            exit::SCHEMA,
            format!(
                "result was produced from a different problem (digest {} != {digest})",
                result.input_digest
            ),
        ));
    }
    let cl = &problem.closed_loop;
    let cert = check_conditions(&result.iterate(), cl, &Margins::default())
        .map_err(|r| Failure::new(exit::CERTIFICATE, r.to_string()))?;
    print_certificate(&cert);
    if samples > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
        let states = sample_states_on_levels(&cert.p, samples, 1.0, 1e3, &mut rng);
        let report = empirical_ugfta(&cert, cl, &cert.e, &states, 0)?;
        println!(
            "simulated decrease: {} samples, {} steps, worst V+/V {:.9}, worst entry slack {}",
            report.samples, report.steps_checked, report.worst_decrease_ratio, report.worst_entry_slack
        );
        if let Some(v) = report.violations.first() {
            return Err(Failure::new(
                exit::CERTIFICATE,
                format!(
                    "simulated check failed: {:?} at sample {} step {} (residual {:.3e}, state {:?})",
                    v.kind, v.sample, v.step, v.residual, v.state
                ),
            ));
        }
    }
    Ok(())
}

fn cmd_reproduce(example: &str, out_dir: &Path, o: &Overrides) -> Result<(), Failure> {
    let pf = example_problem(example).map_err(|_| {
        Failure::new(
            exit::SCHEMA,
            format!(
                "unknown example '{example}'; expected one of: {}",
                EXAMPLE_IDS.join(", ")
            ),
        )
    })?;
    fs::create_dir_all(out_dir).map_err(|e| io_fail(out_dir, e))?;
    let problem_path = out_dir.join("problem.json");
    write_file(&problem_path, &pf.to_json_pretty())?;
    let (_, digest, problem) = load_problem(&problem_path, o)?;
    let s = run_synthesis(&problem, digest)?;
    write_file(&out_dir.join("result.json"), &s.result.to_json())?;
    write_file(&out_dir.join("certificate.json"), &s.cert.to_json())?;
    write_trace(&out_dir.join("trace.csv"), &s.outcome)?;
    simulate_pair(&problem, &s.cert.e, out_dir)?;
    print_certificate(&s.cert);
    println!("  iterations            = {}", s.outcome.trace.iterations());
    println!("  E                     = {:?}", s.cert.e.as_slice());
    println!("artifacts written to {}", out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let o = &cli.overrides;
    let outcome = match &cli.command {
        Command::Synth { problem, out, trace } => cmd_synth(problem, out, trace.as_deref(), o),
        Command::Simulate { problem, result, out } => cmd_simulate(problem, result, out, o),
        Command::Verify {
            problem,
            result,
            samples,
        } => cmd_verify(problem, result, *samples, o),
        Command::Reproduce { example, out_dir } => cmd_reproduce(example, out_dir, o),
    };
    match outcome {
        Ok(()) => ExitCode::from(exit::OK),
        Err(f) => {
            if f.code == exit::CERTIFICATE {
                warn!("certificate check failed");
            }
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
