//! Subcommand orchestration, `report.json` and `trajectories.csv`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::basis::{JumpSpec, NodeRef, TimeGrid};
use crate::config::{parse_config, DecaySection, RunConfig, TerminalSection};
use crate::contraction::{c_beta, search_beta, AnalysisMode, FeasibilityReport};
use crate::error::{Error, Result};
use crate::generator::{DelayDescriptor, GeneratorSpec};
use crate::infinite::{apriori_check, decay_check, solve_infinite, AprioriReport, DecayReport, LadderTrace};
use crate::picard::{verify_solution, FiniteProblem, IterationTrace, MeanOffsets, Route, VerifyReport};
use crate::process::{norm_h2_beta, norm_l2_beta, norm_s2_beta, SolutionTriple};
use crate::suites::{run_all, SuiteResult};

pub const EXIT_SUCCESS: i32 = 0;
/// Unexpected failure, e.g. an output file could not be written.
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_NON_CONVERGENCE: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveFinite,
    SolveInfinite,
    Analyze,
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SolveFinite => "solve-finite",
            Command::SolveInfinite => "solve-infinite",
            Command::Analyze => "analyze",
            Command::Verify => "verify",
        }
    }
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonConvergence(_) | Error::Divergence(_) | Error::LadderExhausted(_) => EXIT_NON_CONVERGENCE,
        Error::Io(_) => EXIT_FAILURE,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratorInfo {
    pub name: String,
    pub params: Value,
    /// Declared constant; every slot enters the bound squared.
    pub lipschitz: f64,
    pub lipschitz_form: &'static str,
    pub delay: DelayDescriptor,
    pub mean_only: bool,
}

impl GeneratorInfo {
    fn new(gen: &GeneratorSpec, cfg: &RunConfig) -> Self {
        Self {
            name: gen.name().to_string(),
            params: cfg.raw.generator.as_ref().map_or(Value::Null, |g| g.params.clone()),
            lipschitz: gen.lipschitz(),
            lipschitz_form: "squared",
            delay: gen.delay(),
            mean_only: gen.is_mean_only(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Norms {
    pub beta: f64,
    pub s2_y: f64,
    pub l2_z: f64,
    pub h2_k: f64,
}

impl Norms {
    fn of(sol: &SolutionTriple, beta: f64) -> Self {
        let t = &sol.tree;
        Self {
            beta,
            s2_y: norm_s2_beta(t, &sol.y, beta),
            l2_z: norm_l2_beta(t, &sol.z, beta),
            h2_k: norm_h2_beta(t, &sol.k, beta, t.jumps()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub path: Option<String>,
    pub message: String,
}

impl ErrorInfo {
    fn of(err: &Error) -> Self {
        let kind = match err {
            Error::Config { .. } => "config",
            Error::NonConvergence(_) => "non_convergence",
            Error::Divergence(_) => "divergence",
            Error::LadderExhausted(_) => "ladder_exhausted",
            Error::NodeBudget { .. } => "node_budget",
            Error::NotReducible(_) => "not_reducible",
            Error::Io(_) => "io",
            _ => "invalid_input",
        };
        let path = match err {
            Error::Config { path, .. } => Some(path.clone()),
            _ => None,
        };
        let message = match err {
            Error::Config { message, .. } => message.clone(),
            other => other.to_string(),
        };
        Self { kind, path, message }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FiniteReport {
    pub command: &'static str,
    pub status: &'static str,
    pub error: Option<ErrorInfo>,
    pub route: Option<Route>,
    pub grid: TimeGrid,
    pub jumps: JumpSpec,
    pub generator: GeneratorInfo,
    pub terminal: Option<TerminalSection>,
    pub iterations: usize,
    pub trace: Option<IterationTrace>,
    pub y0: Option<f64>,
    pub norms: Option<Norms>,
    pub verification: Option<VerifyReport>,
    pub offsets: Option<MeanOffsets>,
    pub node_count: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InfiniteReport {
    pub command: &'static str,
    pub status: &'static str,
    pub error: Option<ErrorInfo>,
    pub jumps: JumpSpec,
    pub generator: GeneratorInfo,
    pub condition_lipschitz_form: &'static str,
    pub horizon: Option<f64>,
    pub ladder: Option<LadderTrace>,
    pub y0: Option<f64>,
    pub norm_call: Option<f64>,
    pub decay: Option<DecayReport>,
    pub apriori: Option<AprioriReport>,
    /// Identification of the estimate's constant used by `apriori`.
    pub apriori_constant: &'static str,
    pub apriori_error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub command: &'static str,
    pub status: &'static str,
    pub strict: bool,
    pub feasible: bool,
    pub lipschitz: f64,
    pub lipschitz_form: &'static str,
    pub c_beta: Option<f64>,
    pub report: FeasibilityReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyRunReport {
    pub command: &'static str,
    pub status: &'static str,
    pub seed: u64,
    pub cases: usize,
    pub all_pass: bool,
    pub suites: Vec<SuiteResult>,
}

#[derive(Debug, Clone, Serialize)]
struct ConfigErrorReport {
    command: &'static str,
    status: &'static str,
    error: ErrorInfo,
}

fn write_json<T: Serialize>(out: &Path, value: &T) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    text.push('\n');
    fs::write(out.join("report.json"), text)?;
    Ok(())
}

/// Writes `t,node_id,prob,Y,Z,K_1..K_m` in (layer, index) order with 17
/// significant digits; `Z` and `K` are empty on the last layer.
pub fn write_trajectories(path: &Path, sol: &SolutionTriple) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    let tree = &*sol.tree;
    let m = tree.jumps().len();
    let n = tree.steps();
    let mut header = String::from("t,node_id,prob,Y,Z");
    for j in 1..=m {
        header.push_str(&format!(",K_{j}"));
    }
    writeln!(w, "{header}")?;
    for i in 0..=n {
        let t = tree.grid().time(i);
        let probs = tree.layer_probs(i);
        for (idx, p) in probs.iter().enumerate() {
            let node = NodeRef::new(i, idx);
            write!(w, "{t:.16e},{},{p:.16e},{:.16e}", tree.node_id(node), sol.y.value(node))?;
            if i < n {
                write!(w, ",{:.16e}", sol.z.value(node))?;
                for k in sol.k.values(node) {
                    write!(w, ",{k:.16e}")?;
                }
            } else {
                w.write_all(",".repeat(1 + m).as_bytes())?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn verify_tolerance(cfg: &RunConfig) -> f64 {
    // distances are squared, residuals are not
    cfg.picard.tolerance.sqrt().max(1e-12)
}

fn solve_finite_cmd(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let grid = cfg.require_grid()?;
    let gen = cfg.require_generator()?.clone();
    let problem = FiniteProblem {
        grid,
        jumps: cfg.jumps.clone(),
        generator: gen.clone(),
        terminal: cfg.terminal.clone(),
    };
    let mut report = FiniteReport {
        command: Command::SolveFinite.name(),
        status: "converged",
        error: None,
        route: None,
        grid,
        jumps: cfg.jumps.clone(),
        generator: GeneratorInfo::new(&gen, cfg),
        terminal: cfg.raw.terminal.clone(),
        iterations: 0,
        trace: None,
        y0: None,
        norms: None,
        verification: None,
        offsets: None,
        node_count: None,
    };
    match problem.solve(&cfg.picard, cfg.raw.picard.mode, cfg.raw.picard.node_budget) {
        Ok(run) => {
            let verification = verify_solution(&run.generator, &run.xi, &run.solution, verify_tolerance(cfg))?;
            report.route = Some(run.route);
            report.iterations = run.trace.iterations();
            report.y0 = Some(run.solution.y0());
            report.norms = Some(Norms::of(&run.solution, run.trace.beta));
            report.trace = Some(run.trace);
            report.verification = Some(verification);
            report.offsets = run.offsets;
            report.node_count = Some(run.solution.tree.node_count());
            write_json(out, &report)?;
            write_trajectories(&out.join("trajectories.csv"), &run.solution)?;
            Ok(EXIT_SUCCESS)
        }
        Err(err @ (Error::NonConvergence(_) | Error::Divergence(_))) => {
            report.error = Some(ErrorInfo::of(&err));
            report.status = match err {
                Error::Divergence(_) => "divergence",
                _ => "non_convergence",
            };
            if let Error::NonConvergence(t) | Error::Divergence(t) = err {
                report.iterations = t.iterations();
                report.trace = Some(*t);
            }
            write_json(out, &report)?;
            Ok(EXIT_NON_CONVERGENCE)
        }
        Err(e) => Err(e),
    }
}

fn solve_infinite_cmd(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let gen = cfg.require_generator()?.clone();
    let ladder = cfg.require_ladder()?.clone();
    let mut report = InfiniteReport {
        command: Command::SolveInfinite.name(),
        status: "converged",
        error: None,
        jumps: cfg.jumps.clone(),
        generator: GeneratorInfo::new(&gen, cfg),
        condition_lipschitz_form: "squared",
        horizon: None,
        ladder: None,
        y0: None,
        norm_call: None,
        decay: None,
        apriori: None,
        apriori_constant: "1/epsilon",
        apriori_error: None,
    };
    match solve_infinite(&gen, &cfg.jumps, &ladder, &cfg.picard) {
        Ok(run) => {
            let decay = cfg.raw.decay.clone().unwrap_or(DecaySection {
                beta_prime: ladder.beta,
                beta: ladder.beta + 0.5,
            });
            report.decay = Some(decay_check(&run.solution, decay.beta_prime, decay.beta).map_err(|e| match e {
                Error::Domain(m) => Error::config("/decay", m),
                other => other,
            })?);
            match apriori_check(&run.solution, &gen, ladder.beta, ladder.epsilon) {
                Ok(a) => report.apriori = Some(a),
                Err(e) => report.apriori_error = Some(e.to_string()),
            }
            report.horizon = Some(run.horizon);
            report.y0 = Some(run.solution.y0());
            report.norm_call = Some(crate::process::norm_call(&run.solution, ladder.beta));
            report.ladder = Some(run.trace);
            write_json(out, &report)?;
            write_trajectories(&out.join("trajectories.csv"), &run.solution)?;
            Ok(EXIT_SUCCESS)
        }
        Err(Error::LadderExhausted(trace)) => {
            report.status = "ladder_exhausted";
            report.error = Some(ErrorInfo {
                kind: "ladder_exhausted",
                path: None,
                message: "truncation ladder exhausted without reaching tolerance".into(),
            });
            report.ladder = Some(*trace);
            write_json(out, &report)?;
            Ok(EXIT_NON_CONVERGENCE)
        }
        Err(err @ (Error::NonConvergence(_) | Error::Divergence(_))) => {
            report.status = "rung_failed";
            report.error = Some(ErrorInfo::of(&err));
            write_json(out, &report)?;
            Ok(EXIT_NON_CONVERGENCE)
        }
        Err(e) => Err(e),
    }
}

fn analyze_cmd(cfg: &RunConfig, out: &Path, strict: bool) -> Result<i32> {
    let (mode, c) = cfg.analysis_mode()?;
    let report = search_beta(mode, c, cfg.raw.analysis.budget)?;
    let cb = match mode {
        AnalysisMode::FinitePoint { horizon, .. }
        | AnalysisMode::FiniteMeasure { horizon, .. }
        | AnalysisMode::SpecialTwoPoint { horizon, .. } => Some(c_beta(report.best_beta, horizon)?),
        AnalysisMode::Infinite { .. } => None,
    };
    let feasible = report.feasible;
    let doc = AnalyzeReport {
        command: Command::Analyze.name(),
        status: if feasible { "feasible" } else { "infeasible" },
        strict,
        feasible,
        lipschitz: c,
        lipschitz_form: "squared",
        c_beta: cb,
        report,
    };
    write_json(out, &doc)?;
    Ok(if strict && !feasible { EXIT_INFEASIBLE } else { EXIT_SUCCESS })
}

fn verify_cmd(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let v = &cfg.raw.verify;
    let suites = run_all(v.seed, v.cases);
    let all_pass = suites.iter().all(|s| s.pass);
    let doc = VerifyRunReport {
        command: Command::Verify.name(),
        status: if all_pass { "pass" } else { "fail" },
        seed: v.seed,
        cases: v.cases,
        all_pass,
        suites,
    };
    write_json(out, &doc)?;
    Ok(if all_pass { EXIT_SUCCESS } else { EXIT_FAILURE })
}

/// Runs a parsed configuration; returns the process exit code.
pub fn run(command: Command, cfg: &RunConfig, out: &Path, strict: bool) -> i32 {
    let result = match command {
        Command::SolveFinite => solve_finite_cmd(cfg, out),
        Command::SolveInfinite => solve_infinite_cmd(cfg, out),
        Command::Analyze => analyze_cmd(cfg, out, strict),
        Command::Verify => verify_cmd(cfg, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => fail(command, out, &e),
    }
}

fn fail(command: Command, out: &Path, err: &Error) -> i32 {
    let code = exit_code(err);
    eprintln!("mfdbsde {}: {err}", command.name());
    if code == EXIT_CONFIG {
        let doc = ConfigErrorReport {
            command: command.name(),
            status: "config_error",
            error: ErrorInfo::of(err),
        };
        // best effort: the output directory may itself be the problem
        let _ = write_json(out, &doc);
    }
    code
}

/// Parses `document` and runs it.
pub fn run_document(command: Command, document: &str, out: &Path, strict: bool) -> i32 {
    match parse_config(document) {
        Ok(cfg) => run(command, &cfg, out, strict),
        Err(e) => fail(command, out, &e),
    }
}

/// Reads the configuration file at `path` and runs it.
pub fn run_file(command: Command, path: &Path, out: &Path, strict: bool) -> i32 {
    match fs::read_to_string(path) {
        Ok(text) => run_document(command, &text, out, strict),
        Err(e) => fail(command, out, &Error::config("/", format!("cannot read {}: {e}", path.display()))),
    }
}
