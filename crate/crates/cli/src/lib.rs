//! The `abreu` command-line tool.
//!
//! Exit codes: 0 success, 1 I/O, usage or parse error, 2 right-hand side with
//! nonzero mean, 3 solver failure or failed verification.

pub mod fieldfile;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use abreu_core::abelian::{self, InvariantMetric};
use abreu_core::estimates::{self, MonitorConfig};
use abreu_core::fieldlang;
use abreu_core::grid::{self, PeriodicGrid, ScalarField};
use abreu_core::legendre::{self, GradientMapSolveConfig};
use abreu_core::potential::{self, Potential, QuadraticBase};
use abreu_core::solver::{self, SolverConfig};
use abreu_core::Error;
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use crate::fieldfile::{read_field, write_field, FieldFileError};
use crate::report::{GridInfo, RunReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_MEAN: i32 = 2;
pub const EXIT_FAILURE: i32 = 3;

/// Relative spectral tail above which an `--expr` field is reported as not
/// numerically periodic.
pub const PERIODICITY_WARNING_THRESHOLD: f64 = 1e-8;

/// Default residual tolerance of `verify` on `A` for solutions.
pub const DEFAULT_VERIFY_TOLERANCE: f64 = 1e-8;
/// Default tolerance of `verify` on the curvature `S` for metrics.
pub const DEFAULT_METRIC_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    File(#[from] FieldFileError),
    #[error("right-hand side has mean {mean:.6e}; pass --project-mean to subtract it")]
    Mean { mean: f64 },
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::File(_) => EXIT_INPUT,
            CliError::Mean { .. } => EXIT_MEAN,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::MeanNotZero { mean } => CliError::Mean { mean },
            Error::InvalidGrid(_) | Error::FieldMismatch(_) | Error::NonFinite { .. } | Error::InvalidConfig(_) => {
                CliError::Input(e.to_string())
            }
            other => CliError::Failure(error_chain(&other)),
        }
    }
}

impl From<fieldlang::ExprError> for CliError {
    fn from(e: fieldlang::ExprError) -> Self {
        CliError::Input(format!("--expr: {e}"))
    }
}

fn error_chain(e: &dyn std::error::Error) -> String {
    let mut out = e.to_string();
    let mut source = e.source();
    while let Some(s) = source {
        out.push_str(": ");
        out.push_str(&s.to_string());
        source = s.source();
    }
    out
}

#[derive(Debug, Parser)]
#[command(name = "abreu", version, about = "Periodic Abreu equation solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct GridArgs {
    /// Torus dimension (required with --expr unless another input fixes the grid).
    #[arg(long)]
    dim: Option<usize>,
    /// Nodes per axis: one value for all axes, or one per axis separated by commas.
    #[arg(long, value_delimiter = ',')]
    resolution: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
struct SolverArgs {
    /// Newton residual tolerance (sup norm).
    #[arg(long)]
    tol: Option<f64>,
    /// Initial continuation step.
    #[arg(long = "t-step")]
    t_step: Option<f64>,
    #[arg(long = "max-newton")]
    max_newton: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, CliError> {
        let mut cfg = SolverConfig::default();
        if let Some(tol) = self.tol {
            cfg.newton_tolerance = tol;
        }
        if let Some(step) = self.t_step {
            cfg.initial_t_step = step;
            cfg.min_t_step = cfg.min_t_step.min(step);
        }
        if let Some(n) = self.max_newton {
            cfg.max_newton_iters = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve Abreu's equation for a periodic right-hand side.
    Solve {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, conflicts_with = "expr", required_unless_present = "expr")]
        rhs: Option<PathBuf>,
        #[arg(long)]
        expr: Option<String>,
        /// Subtract the mean of the right-hand side instead of rejecting it.
        #[arg(long)]
        project_mean: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Apply the forward operator to a perturbation.
    Apply {
        #[arg(long)]
        phi: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Divergence-form residual of a perturbation against a right-hand side.
    Residual {
        #[arg(long)]
        phi: PathBuf,
        #[arg(long, conflicts_with = "expr", required_unless_present = "expr")]
        rhs: Option<PathBuf>,
        #[arg(long)]
        expr: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Legendre transform of a perturbation.
    Legendre {
        #[arg(long)]
        phi: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scalar curvature of an invariant metric, sampled in symplectic coordinates.
    Curvature {
        #[arg(long)]
        psi: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the sampling at the complex-coordinate nodes.
        #[arg(long)]
        complex_out: Option<PathBuf>,
    },
    /// Find the invariant metric with prescribed scalar curvature.
    Prescribe {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, conflicts_with = "expr", required_unless_present = "expr")]
        scalar: Option<PathBuf>,
        #[arg(long)]
        expr: Option<String>,
        #[arg(long)]
        project_mean: bool,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Check a solution against the residual, duality and estimate monitors.
    Verify {
        #[arg(long, conflicts_with = "psi", required_unless_present = "psi")]
        phi: Option<PathBuf>,
        /// Verify a metric produced by `prescribe` instead of a solution.
        #[arg(long)]
        psi: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["expr", "scalar", "psi"])]
        rhs: Option<PathBuf>,
        #[arg(long, conflicts_with_all = ["expr", "phi"])]
        scalar: Option<PathBuf>,
        /// Right-hand side with --phi, prescribed curvature with --psi.
        #[arg(long)]
        expr: Option<String>,
        #[arg(long)]
        project_mean: bool,
        #[arg(long)]
        report: PathBuf,
        /// Residual tolerance on A (with --phi, default 1e-8) or S (with --psi,
        /// default 1e-6); raised to the roundoff floor of the grid when needed.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Sample an expression on a grid.
    Synth {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        expr: String,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve { .. } => "solve",
            Command::Apply { .. } => "apply",
            Command::Residual { .. } => "residual",
            Command::Legendre { .. } => "legendre",
            Command::Curvature { .. } => "curvature",
            Command::Prescribe { .. } => "prescribe",
            Command::Verify { .. } => "verify",
            Command::Synth { .. } => "synth",
        }
    }

    fn report_path(&self) -> Option<&Path> {
        match self {
            Command::Solve { report, .. } | Command::Prescribe { report, .. } => report.as_deref(),
            Command::Verify { report, .. } => Some(report),
            _ => None,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ABREU_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("ABREU_THREADS must be a positive integer, got {raw:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn make_grid(args: &GridArgs) -> Result<Option<PeriodicGrid>, CliError> {
    match (args.dim, &args.resolution) {
        (None, None) => Ok(None),
        (Some(dim), Some(res)) => {
            let res = if res.len() == 1 { vec![res[0]; dim] } else { res.clone() };
            Ok(Some(PeriodicGrid::new(dim, &res)?))
        }
        (Some(_), None) => Err(CliError::Input("--dim needs --resolution".into())),
        (None, Some(_)) => Err(CliError::Input("--resolution needs --dim".into())),
    }
}

fn expr_field(text: &str, grid: &PeriodicGrid, warnings: &mut Vec<String>) -> Result<ScalarField, CliError> {
    let field = fieldlang::eval_field(&fieldlang::parse(text)?, grid)?;
    let tail = grid::spectral_tail(&field);
    if tail > PERIODICITY_WARNING_THRESHOLD {
        let message = format!("--expr {text:?} is not numerically periodic (relative spectral tail {tail:.3e})");
        eprintln!("warning: {message}");
        warnings.push(message);
    }
    Ok(field)
}

/// Reads a field from `file` or samples `expr` on `grid`; checks that the result
/// lives on `grid` when both are known.
fn load_input(
    file: Option<&Path>,
    expr: Option<&str>,
    grid: Option<&PeriodicGrid>,
    warnings: &mut Vec<String>,
) -> Result<ScalarField, CliError> {
    let field = match (file, expr) {
        (Some(path), _) => read_field(path)?,
        (None, Some(text)) => {
            let grid = grid.ok_or_else(|| CliError::Input("--expr needs --dim and --resolution".into()))?;
            expr_field(text, grid, warnings)?
        }
        (None, None) => return Err(CliError::Input("no input field given".into())),
    };
    if let Some(g) = grid {
        if field.grid() != g {
            return Err(CliError::Input(format!(
                "grid mismatch: input has resolution {:?}, expected {:?}",
                field.grid().shape(),
                g.shape()
            )));
        }
    }
    Ok(field)
}

fn gauge_mean(field: ScalarField, project: bool, warnings: &mut Vec<String>) -> Result<ScalarField, CliError> {
    let mean = grid::mean(&field);
    if mean.abs() <= solver::MEAN_TOLERANCE {
        return Ok(field);
    }
    if !project {
        return Err(CliError::Mean { mean });
    }
    warnings.push(format!("subtracted mean {mean:.6e} from the right-hand side"));
    Ok(grid::project_mean_zero(&field))
}

fn primal(phi: ScalarField) -> Result<Potential, CliError> {
    let dim = phi.grid().dim();
    Ok(Potential::new(QuadraticBase::identity(dim), phi)?)
}

fn grid_info(g: &PeriodicGrid) -> GridInfo {
    GridInfo {
        dim: g.dim(),
        resolution: g.shape().to_vec(),
    }
}

fn execute(command: &Command, report: &mut RunReport) -> Result<(), CliError> {
    match command {
        Command::Solve {
            grid,
            rhs,
            expr,
            project_mean,
            out,
            solver: solver_args,
            ..
        } => {
            let cfg = solver_args.config()?;
            report.config = json!({ "solver": cfg, "project_mean": project_mean });
            let g = make_grid(grid)?;
            let a = load_input(rhs.as_deref(), expr.as_deref(), g.as_ref(), &mut report.warnings)?;
            report.grid = Some(grid_info(a.grid()));
            let a = gauge_mean(a, *project_mean, &mut report.warnings)?;
            let (p, trace) = solver::continuity_solve(&a, QuadraticBase::identity(a.grid().dim()), &cfg)?;
            report.trace = Some(trace);
            let (residual, tolerance) = solver::solution_residual(&p, &a, cfg.newton_tolerance)?;
            report.residuals.insert("final".into(), residual);
            report.residuals.insert("final_tolerance".into(), tolerance);
            report.residuals.insert(
                "divergence_form".into(),
                potential::divergence_form_residual(&p, &a)?.sup_norm(),
            );
            write_field(out, p.perturbation())?;
            if report_requested(command) {
                match estimates::bounds_report(&p, &a, &MonitorConfig::default()) {
                    Ok(b) => report.bounds = Some(b),
                    Err(e) => report.warnings.push(format!("bounds not evaluated: {e}")),
                }
            }
            Ok(())
        }
        Command::Apply { phi, out } => {
            let p = primal(read_field(phi)?)?;
            report.grid = Some(grid_info(p.grid()));
            write_field(out, &potential::abreu_forward(&p)?)?;
            Ok(())
        }
        Command::Residual { phi, rhs, expr, out } => {
            let p = primal(read_field(phi)?)?;
            let a = load_input(rhs.as_deref(), expr.as_deref(), Some(p.grid()), &mut report.warnings)?;
            write_field(out, &potential::divergence_form_residual(&p, &a)?)?;
            Ok(())
        }
        Command::Legendre { phi, out } => {
            let p = primal(read_field(phi)?)?;
            write_field(out, legendre::legendre_transform(&p, &GradientMapSolveConfig::default())?.perturbation())?;
            Ok(())
        }
        Command::Curvature { psi, out, complex_out } => {
            let m = InvariantMetric::new(read_field(psi)?)?;
            let s = abelian::scalar_curvature(&m, &GradientMapSolveConfig::default())?;
            write_field(out, &s.symplectic)?;
            if let Some(path) = complex_out {
                write_field(path, &s.complex)?;
            }
            Ok(())
        }
        Command::Prescribe {
            grid,
            scalar,
            expr,
            project_mean,
            out,
            solver: solver_args,
            ..
        } => {
            let cfg = solver_args.config()?;
            report.config = json!({ "solver": cfg, "project_mean": project_mean });
            let g = make_grid(grid)?;
            let s = load_input(scalar.as_deref(), expr.as_deref(), g.as_ref(), &mut report.warnings)?;
            report.grid = Some(grid_info(s.grid()));
            let s = gauge_mean(s, *project_mean, &mut report.warnings)?;
            let (m, trace) = abelian::prescribe_curvature(&s, &cfg)?;
            report.trace = Some(trace);
            let measured = abelian::symplectic_curvature(&m, &GradientMapSolveConfig::default())?;
            report.residuals.insert("curvature".into(), (&measured - &s).sup_norm());
            write_field(out, m.psi())?;
            Ok(())
        }
        Command::Verify {
            phi,
            psi,
            rhs,
            scalar,
            expr,
            project_mean,
            tol,
            ..
        } => verify(
            VerifyInputs {
                phi: phi.as_deref(),
                psi: psi.as_deref(),
                rhs: rhs.as_deref().or(scalar.as_deref()),
                expr: expr.as_deref(),
                project_mean: *project_mean,
                tolerance: tol.unwrap_or(if psi.is_some() {
                    DEFAULT_METRIC_TOLERANCE
                } else {
                    DEFAULT_VERIFY_TOLERANCE
                }),
            },
            report,
        ),
        Command::Synth { grid, expr, out } => {
            let g = make_grid(grid)?.ok_or_else(|| CliError::Input("synth needs --dim and --resolution".into()))?;
            report.grid = Some(grid_info(&g));
            write_field(out, &expr_field(expr, &g, &mut report.warnings)?)?;
            Ok(())
        }
    }
}

fn report_requested(command: &Command) -> bool {
    command.report_path().is_some()
}

struct VerifyInputs<'a> {
    phi: Option<&'a Path>,
    psi: Option<&'a Path>,
    /// `A` with `phi`, `S` with `psi`.
    rhs: Option<&'a Path>,
    expr: Option<&'a str>,
    project_mean: bool,
    tolerance: f64,
}

/// With `--psi`, the metric `v` is paired with its symplectic potential `u` and the
/// curvature `S` becomes `A = -4 S`; residuals are then reported on the scale of `S`.
fn verify(inputs: VerifyInputs<'_>, report: &mut RunReport) -> Result<(), CliError> {
    let metric_mode = inputs.psi.is_some();
    let gradient_map = GradientMapSolveConfig::default();
    let (p, a, dual, scale) = if let Some(path) = inputs.psi {
        let m = InvariantMetric::new(read_field(path)?)?;
        let s = load_input(inputs.rhs, inputs.expr, Some(m.grid()), &mut report.warnings)?;
        let s = gauge_mean(s, inputs.project_mean, &mut report.warnings)?;
        let u = legendre::legendre_transform(m.potential(), &gradient_map)?;
        let dual = legendre::known_dual(m.potential())?;
        (u, &s * -4.0, dual, 0.25)
    } else {
        let path = inputs.phi.expect("clap requires --phi or --psi");
        let p = primal(read_field(path)?)?;
        let a = load_input(inputs.rhs, inputs.expr, Some(p.grid()), &mut report.warnings)?;
        let a = gauge_mean(a, inputs.project_mean, &mut report.warnings)?;
        potential::ensure_convex(&p, potential::DEFAULT_CONVEXITY_FLOOR)?;
        let dual = legendre::legendre_dual(&p, &gradient_map)?;
        (p, a, dual, 1.0)
    };
    report.grid = Some(grid_info(p.grid()));
    let monitors = MonitorConfig {
        dual_residual_tolerance: estimates::DEFAULT_DUAL_RESIDUAL_TOLERANCE / scale,
        ..MonitorConfig::default()
    };
    report.config = json!({
        "tolerance": inputs.tolerance,
        "project_mean": inputs.project_mean,
        "monitors": monitors,
        "mode": if metric_mode { "metric" } else { "solution" },
    });

    let (residual, floor) = solver::solution_residual(&p, &a, inputs.tolerance / scale)?;
    let (residual, tolerance) = (residual * scale, floor * scale);
    let divergence = potential::divergence_form_residual(&p, &a)?.sup_norm() * scale;
    let label = if metric_mode { "curvature" } else { "forward" };
    report.residuals.insert(label.into(), residual);
    report.residuals.insert("divergence_form".into(), divergence);
    report.residuals.insert("tolerance".into(), tolerance);

    let mut bounds = estimates::bounds_report_with_dual(&p, &a, &dual, &monitors)?;
    bounds
        .inequalities
        .insert(0, estimates::Inequality::new(&format!("{label}_residual"), residual, tolerance, 0.0));
    bounds
        .inequalities
        .insert(1, estimates::Inequality::new("divergence_form_residual", divergence, tolerance, 0.0));
    let failed = bounds.failed();
    report.bounds = Some(bounds);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failure(format!("monitors failed: {}", failed.join(", "))))
    }
}

/// Runs the tool on a full argument list (including the program name) and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let started = Instant::now();
    let arguments = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let mut report = RunReport::new(cli.command.name(), arguments);
    let outcome = execute(&cli.command, &mut report);
    let mut code = match &outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            report.status = "failed";
            report.error = Some(e.to_string());
            e.exit_code()
        }
    };
    report.exit_code = code;
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    if let Some(path) = cli.command.report_path() {
        if let Err(e) = report.write(path) {
            eprintln!("error: {e}");
            if code == EXIT_OK {
                code = EXIT_INPUT;
            }
        }
    }
    code
}
