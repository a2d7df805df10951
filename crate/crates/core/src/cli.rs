//! Command-line pipeline: `stochlq check|solve|evaluate|simulate`.
//!
//! Every command prints a JSON [`RunReport`] on stdout. With `--out <dir>`
//! the report and any artifacts (`law.json`, `moments.csv`, `paths.csv`) are
//! written there as well. The exit code is a function of the verdicts:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | frequency condition strictly positive / command succeeded |
//! | 1 | load or numerical error |
//! | 2 | frequency condition non-negative only (existence undetermined) |
//! | 3 | frequency condition fails |
//! | 4 | not mean-square stable |
//! | 5 | no stabilizing Riccati solution |

// Stage helpers return the finished report as their error value.
#![allow(clippy::result_large_err)]

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::evaluate::{self, CostBreakdown, EvalOptions};
use crate::frequency::{self, FrequencyReport, FrequencyVerdict};
use crate::linalg::{Mat, Vector};
use crate::lqr::{self, FeedbackLaw};
use crate::model::{parse_problem, ControlSignal, Problem};
use crate::montecarlo::{self, CostEstimate, SimulationConfig};
use crate::serde_mat;
use crate::stability::{self, StabilityCertificate};
use crate::theta::{self, ThetaMethod, ThetaSolution};

pub const TOOL_VERSION: &str = concat!("stochlq ", env!("CARGO_PKG_VERSION"));

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NONNEGATIVE_ONLY: i32 = 2;
pub const EXIT_FAILS: i32 = 3;
pub const EXIT_UNSTABLE: i32 = 4;
pub const EXIT_RICCATI: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "stochlq", version)]
#[command(about = "Stochastic LQ control with multiplicative noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean-square stability, the weight equation and the frequency condition
    Check(CommonArgs),
    /// Adds the optimal feedback law
    Solve(CommonArgs),
    /// Exact cost of a control through the moment equations
    Evaluate(CommonArgs),
    /// Monte Carlo estimate of the cost of a control
    Simulate(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Check(_) => "check",
            Command::Solve(_) => "solve",
            Command::Evaluate(_) => "evaluate",
            Command::Simulate(_) => "simulate",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Check(a) | Command::Solve(a) | Command::Evaluate(a) | Command::Simulate(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Problem definition (JSON)
    pub problem: PathBuf,

    /// Sampled control `{"times": [...], "values": [[...], ...]}`; u = 0 if omitted
    pub control: Option<PathBuf>,

    /// Frequency-condition tolerance; evaluation runs at tol/10
    #[arg(long, default_value_t = frequency::DEFAULT_TOL)]
    pub tol: f64,

    /// Starting horizon for evaluation, simulation horizon for simulate
    #[arg(long)]
    pub horizon: Option<f64>,

    /// Simulation step
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,

    /// Simulated paths
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,

    /// Simulation seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for simulation (0 = all cores)
    #[arg(long, default_value_t = 0)]
    pub workers: usize,

    /// Antithetic path pairs
    #[arg(long)]
    pub antithetic: bool,

    /// Directory for report.json and artifacts
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Use a previously written law.json as the control
    #[arg(long, conflicts_with = "optimal")]
    pub law: Option<PathBuf>,

    /// Use the optimal control, recomputed from the problem
    #[arg(long)]
    pub optimal: bool,

    /// Solve with Γ + εI when the frequency condition is only non-negative
    #[arg(long)]
    pub regularize: Option<f64>,

    /// Weight-equation solver
    #[arg(long, value_enum, default_value_t = MethodArg::Direct)]
    pub method: MethodArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    Direct,
    FixedPoint,
}

impl From<MethodArg> for ThetaMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Direct => ThetaMethod::Direct,
            MethodArg::FixedPoint => ThetaMethod::FixedPoint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSummary {
    #[serde(with = "serde_mat::rows")]
    pub theta: Mat,
    pub residual_eq4: f64,
    pub residual_gramian: f64,
    pub method: ThetaMethod,
    pub iterations: usize,
}

impl From<&ThetaSolution> for ThetaSummary {
    fn from(s: &ThetaSolution) -> Self {
        Self {
            theta: s.theta.clone(),
            residual_eq4: s.residual_eq4,
            residual_gramian: s.residual_gramian,
            method: s.method,
            iterations: s.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawSummary {
    #[serde(rename = "P", with = "serde_mat::rows")]
    pub p: Mat,
    #[serde(with = "serde_mat::rows")]
    pub h: Mat,
    pub closed_loop_abscissa: f64,
    pub riccati_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<f64>,
}

impl From<&FeedbackLaw> for LawSummary {
    fn from(l: &FeedbackLaw) -> Self {
        Self {
            p: l.p.clone(),
            h: l.h.clone(),
            closed_loop_abscissa: l.closed_loop_abscissa,
            riccati_residual: l.riccati_residual,
            regularization: l.regularization,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoReport {
    pub rho: f64,
    pub rho1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub command: String,
    /// SHA-256 of the problem file.
    pub input_digest: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<FrequencyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<LawSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<RhoReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<CostEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StageError>,
}

impl RunReport {
    fn new(command: &str, input_digest: String) -> Self {
        Self {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            input_digest,
            exit_code: EXIT_OK,
            stability: None,
            theta: None,
            frequency: None,
            law: None,
            costs: None,
            rho: None,
            montecarlo: None,
            error: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    fn fail(mut self, stage: &str, err: &Error) -> Self {
        self.exit_code = match err {
            Error::Riccati(_) => EXIT_RICCATI,
            _ => EXIT_ERROR,
        };
        self.error = Some(StageError {
            stage: stage.to_string(),
            kind: error_kind(err).to_string(),
            message: err.to_string(),
        });
        self
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Parse(_) => "ParseError",
        Error::Dimension(_) => "DimensionError",
        Error::Invariant(_) => "InvariantError",
        Error::Numerical(_) => "NumericalError",
        Error::Singular(_) => "SingularError",
        Error::Convergence(_) => "ConvergenceError",
        Error::Riccati(_) => "RiccatiError",
        Error::Horizon(_) => "HorizonError",
        Error::Integrator(_) => "IntegratorError",
        Error::Input(_) => "InputError",
        Error::Tail(_) => "TailError",
        Error::Gate(_) => "GateRefusal",
        Error::Config(_) => "ConfigError",
        Error::Overflow(_) => "OverflowError",
        Error::Io(_) => "IoError",
    }
}

pub fn verdict_exit_code(v: FrequencyVerdict) -> i32 {
    match v {
        FrequencyVerdict::StrictlyPositive => EXIT_OK,
        FrequencyVerdict::NonnegativeOnly => EXIT_NONNEGATIVE_ONLY,
        FrequencyVerdict::Fails => EXIT_FAILS,
    }
}

/// Sampled control file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlFile {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ControlFile {
    pub fn into_signal(self) -> crate::Result<ControlSignal> {
        ControlSignal::sampled(self.times, self.values.into_iter().map(Vector::from_vec).collect())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Artifacts produced alongside the report.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub law: Option<String>,
    pub moments: Option<String>,
    pub paths: Option<String>,
}

/// Runs a command and returns the report plus artifacts; never panics on bad input.
pub fn execute(cmd: &Command) -> (RunReport, Artifacts) {
    let args = cmd.args();
    let mut art = Artifacts::default();
    let bytes = match fs::read(&args.problem) {
        Ok(b) => b,
        Err(e) => {
            let r = RunReport::new(cmd.name(), String::new());
            return (r.fail("load", &Error::Io(e)), art);
        }
    };
    let report = RunReport::new(cmd.name(), sha256_hex(&bytes));
    let problem = match std::str::from_utf8(&bytes)
        .map_err(|e| Error::Parse(e.to_string()))
        .and_then(parse_problem)
    {
        Ok(p) => p,
        Err(e) => return (report.fail("load", &e), art),
    };
    let report = match cmd {
        Command::Check(a) => cmd_check(&problem, a, report).0,
        Command::Solve(a) => cmd_solve(&problem, a, report, &mut art),
        Command::Evaluate(a) => cmd_evaluate(&problem, a, report, &mut art),
        Command::Simulate(a) => cmd_simulate(&problem, a, report, &mut art),
    };
    (report, art)
}

struct Checked {
    theta: ThetaSolution,
    frequency: FrequencyReport,
}

fn stability_and_theta(
    p: &Problem,
    args: &CommonArgs,
    mut report: RunReport,
) -> Result<(RunReport, ThetaSolution), RunReport> {
    let cert = match stability::check_stability(&p.system) {
        Ok(c) => c,
        Err(e) => return Err(report.fail("stability", &e)),
    };
    let stable = cert.is_stable();
    report.stability = Some(cert);
    if !stable {
        report.exit_code = EXIT_UNSTABLE;
        return Err(report);
    }
    let sol = match theta::solve_theta(&p.system, &p.cost, args.method.into(), args.tol) {
        Ok(s) => s,
        Err(e) => return Err(report.fail("theta", &e)),
    };
    report.theta = Some(ThetaSummary::from(&sol));
    Ok((report, sol))
}

fn cmd_check(p: &Problem, args: &CommonArgs, report: RunReport) -> (RunReport, Option<Checked>) {
    let (mut report, theta) = match stability_and_theta(p, args, report) {
        Ok(x) => x,
        Err(r) => return (r, None),
    };
    let freq = match frequency::check_frequency_condition(
        &p.system,
        &theta.theta,
        p.cost.gamma(),
        args.tol,
    ) {
        Ok(f) => f,
        Err(e) => return (report.fail("frequency", &e), None),
    };
    report.exit_code = verdict_exit_code(freq.verdict);
    report.frequency = Some(freq.clone());
    (report, Some(Checked { theta, frequency: freq }))
}

fn solve_law(
    p: &Problem,
    args: &CommonArgs,
    report: RunReport,
) -> Result<(RunReport, FeedbackLaw, ThetaSolution), RunReport> {
    let (mut report, checked) = cmd_check(p, args, report);
    let Some(checked) = checked else { return Err(report) };
    let law = match lqr::solve_gated(
        &p.system,
        &checked.theta.theta,
        p.cost.gamma(),
        &checked.frequency,
        args.regularize,
    ) {
        Ok(l) => l,
        Err(Error::Gate(msg)) => {
            // Exit code already reflects the verdict.
            report.error = Some(StageError {
                stage: "lqr".into(),
                kind: "GateRefusal".into(),
                message: msg,
            });
            return Err(report);
        }
        Err(e) => return Err(report.fail("lqr", &e)),
    };
    report.exit_code = EXIT_OK;
    report.law = Some(LawSummary::from(&law));
    Ok((report, law, checked.theta))
}

fn cmd_solve(p: &Problem, args: &CommonArgs, report: RunReport, art: &mut Artifacts) -> RunReport {
    match solve_law(p, args, report) {
        Ok((report, law, _)) => {
            art.law = Some(law.to_json() + "\n");
            report
        }
        Err(r) => r,
    }
}

enum Source {
    Signal(ControlSignal),
    Law(FeedbackLaw),
}

fn control_source(p: &Problem, args: &CommonArgs, report: &mut RunReport) -> Result<Source, (String, Error)> {
    if let Some(path) = &args.law {
        let text = fs::read_to_string(path).map_err(|e| ("control".to_string(), Error::Io(e)))?;
        return FeedbackLaw::from_json(&text)
            .map(Source::Law)
            .map_err(|e| ("control".into(), e));
    }
    if let Some(path) = &args.control {
        let text = fs::read_to_string(path).map_err(|e| ("control".to_string(), Error::Io(e)))?;
        let file: ControlFile =
            serde_json::from_str(&text).map_err(|e| ("control".to_string(), Error::Parse(e.to_string())))?;
        return file.into_signal().map(Source::Signal).map_err(|e| ("control".into(), e));
    }
    if args.optimal {
        let r = std::mem::replace(report, RunReport::new("", String::new()));
        return match solve_law(p, args, r) {
            Ok((r, law, _)) => {
                *report = r;
                Ok(Source::Law(law))
            }
            Err(r) => {
                *report = r;
                Err(("lqr".into(), Error::Gate(String::new())))
            }
        };
    }
    Ok(Source::Signal(ControlSignal::zero(p.system.m())))
}

fn resolve_control(
    p: &Problem,
    args: &CommonArgs,
    mut report: RunReport,
) -> Result<(RunReport, ControlSignal), RunReport> {
    match control_source(p, args, &mut report) {
        Ok(Source::Signal(u)) => Ok((report, u)),
        Ok(Source::Law(law)) => {
            if law.p.nrows() != p.system.n() || law.h.ncols() != p.system.m() {
                let e = Error::Dimension("law does not match the problem dimensions".into());
                return Err(report.fail("control", &e));
            }
            match law.control(p.init.mean().clone()) {
                Ok(u) => {
                    if report.law.is_none() {
                        report.law = Some(LawSummary::from(&law));
                    }
                    Ok((report, u))
                }
                Err(e) => Err(report.fail("control", &e)),
            }
        }
        // The solve stage already recorded its outcome.
        Err((stage, _)) if stage == "lqr" => Err(report),
        Err((stage, e)) => Err(report.fail(&stage, &e)),
    }
}

fn cmd_evaluate(p: &Problem, args: &CommonArgs, report: RunReport, art: &mut Artifacts) -> RunReport {
    let (report, u) = match resolve_control(p, args, report) {
        Ok(x) => x,
        Err(r) => return r,
    };
    let (mut report, theta) = if report.theta.is_some() {
        let t = report.theta.as_ref().map(|t| t.theta.clone()).expect("theta present");
        (report, t)
    } else {
        match stability_and_theta(p, args, report) {
            Ok((r, s)) => (r, s.theta),
            Err(r) => return r,
        }
    };
    let opts = EvalOptions {
        tol: args.tol / 10.0,
        horizon: args.horizon,
    };
    let costs = match evaluate::cost_phi_with(&p.system, &p.cost, &u, &p.init, &opts) {
        Ok(c) => c,
        Err(e) => return report.fail("evaluate", &e),
    };
    report.costs = Some(costs);
    match evaluate::rho_and_rho1(&p.system, &p.cost, &theta, &p.init) {
        Ok((rho, rho1)) => report.rho = Some(RhoReport { rho, rho1 }),
        Err(e) => return report.fail("evaluate", &e),
    }
    let times = evaluate::uniform_times(costs.horizon, 200);
    match evaluate::integrate_moments(&p.system, &u, &p.init, costs.horizon, opts.tol, &times) {
        Ok(traj) => art.moments = Some(evaluate::moments_csv(&traj)),
        Err(e) => return report.fail("evaluate", &e),
    }
    report.exit_code = EXIT_OK;
    report
}

fn cmd_simulate(p: &Problem, args: &CommonArgs, report: RunReport, art: &mut Artifacts) -> RunReport {
    let (mut report, u) = match resolve_control(p, args, report) {
        Ok(x) => x,
        Err(r) => return r,
    };
    let cert = match &report.stability {
        Some(c) => c.clone(),
        None => match stability::check_stability(&p.system) {
            Ok(c) => c,
            Err(e) => return report.fail("stability", &e),
        },
    };
    let horizon = args.horizon.unwrap_or_else(|| {
        if cert.margin > 0.0 {
            (10.0 / cert.margin).max(u.sampled_end())
        } else {
            10.0
        }
    });
    report.stability = Some(cert);
    let cfg = SimulationConfig {
        paths: args.paths,
        dt: args.dt,
        horizon,
        seed: args.seed,
        antithetic: args.antithetic,
        workers: args.workers,
    };
    match montecarlo::simulate_path_costs(&p.system, &p.cost, &u, &p.init, &cfg) {
        Ok(pc) => {
            art.paths = Some(montecarlo::paths_csv(&pc.costs));
            report.montecarlo = Some(montecarlo::estimate(&pc, &cfg));
        }
        Err(e) => return report.fail("simulate", &e),
    }
    report.exit_code = EXIT_OK;
    report
}

/// Writes `report.json` and artifacts into `dir`.
pub fn write_outputs(dir: &Path, report: &RunReport, art: &Artifacts) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json())?;
    if let Some(law) = &art.law {
        fs::write(dir.join("law.json"), law)?;
    }
    if let Some(m) = &art.moments {
        fs::write(dir.join("moments.csv"), m)?;
    }
    if let Some(pth) = &art.paths {
        fs::write(dir.join("paths.csv"), pth)?;
    }
    Ok(())
}

/// Entry point shared by the binary: runs, prints, writes; returns the exit code.
pub fn main_with(cli: Cli) -> i32 {
    let (mut report, art) = execute(&cli.command);
    if let Some(dir) = &cli.command.args().out {
        if let Err(e) = write_outputs(dir, &report, &art) {
            report = report.fail("output", &Error::Io(e));
        }
    }
    print!("{}", report.to_json());
    if let Some(err) = &report.error {
        eprintln!("stochlq {}: {} failed: {}", report.command, err.stage, err.message);
    }
    report.exit_code
}
