//! Command-line orchestration: configuration parsing, data ingestion,
//! solve/sweep/diagnose commands, and trace and result emission.
//!
//! Commands exit 0 on success (for `solve`, only when the run ended in a
//! convergence status), 1 on non-convergence with partial outputs written,
//! 2 on I/O or file-format errors, and 3 on validation errors.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use crate::air::{air_solve, optimality_residual, render_trace_csv, support_size, SolveStatus};
use crate::config::{parse_config, render, ConstraintKind, LossKind, ParsedConfig};
use crate::error::{AirError, Result};
use crate::harness::{recovery_sweep, render_plot_script, render_sweep_csv, SweepConfig};
use crate::io;
use crate::model::{ConstraintSet, EpsilonVector, GroupStructure, ProblemSpec, SmoothLoss};
use crate::selftest;

/// Environment variable capping the worker threads used by `sweep`.
pub const THREADS_ENV: &str = "AIR_OPT_THREADS";

#[derive(Parser)]
#[command(
    name = "air-opt",
    version,
    about = "Adaptively reweighted sparse optimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Subcommand, Debug)]
pub enum CliCommand {
    /// Solve one instance from a configuration and data files.
    Solve {
        /// Configuration document.
        #[arg(long)]
        config: PathBuf,
        /// Matrix file, delimited text or MatrixMarket.
        #[arg(long)]
        matrix: PathBuf,
        /// Right-hand-side vector file.
        #[arg(long)]
        rhs: PathBuf,
        /// Destination for the iteration trace CSV.
        #[arg(long)]
        out: PathBuf,
        /// Override a configuration key, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run the seeded recovery experiment and write its result CSV.
    Sweep {
        /// Configuration document; the sweep section must set a seed.
        #[arg(long)]
        config: PathBuf,
        /// Destination for the result CSV; a plot script is written beside it.
        #[arg(long)]
        out: PathBuf,
        /// Override a configuration key, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print the first-order optimality residual at a candidate point.
    Residual {
        /// Configuration document.
        #[arg(long)]
        config: PathBuf,
        /// Matrix file, delimited text or MatrixMarket.
        #[arg(long)]
        matrix: PathBuf,
        /// Right-hand-side vector file.
        #[arg(long)]
        rhs: PathBuf,
        /// Candidate point vector file.
        #[arg(long)]
        point: PathBuf,
        /// Override a configuration key, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run the fast invariant suite.
    #[command(name = "selftest")]
    SelfTest,
}

/// Dispatch a parsed command and map any error onto its exit status.
pub fn run(command: CliCommand) -> i32 {
    match dispatch(command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(command: CliCommand) -> Result<i32> {
    match command {
        CliCommand::Solve {
            config,
            matrix,
            rhs,
            out,
            set,
        } => run_solve(&config, &matrix, &rhs, &out, &set),
        CliCommand::Sweep { config, out, set } => run_sweep(&config, &out, &set),
        CliCommand::Residual {
            config,
            matrix,
            rhs,
            point,
            set,
        } => run_residual(&config, &matrix, &rhs, &point, &set),
        CliCommand::SelfTest => Ok(if selftest::run() == 0 { 0 } else { 1 }),
    }
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>> {
    set.iter()
        .map(|entry| {
            entry
                .split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| AirError::Config {
                    message: format!("override `{entry}` is not of the form key=value"),
                })
        })
        .collect()
}

fn load_config(path: &Path, set: &[String]) -> Result<ParsedConfig> {
    let overrides = parse_overrides(set)?;
    let text = io::read_to_string(path)?;
    parse_config(&text, &io::display(path), &overrides)
}

/// Bind the matrix and rhs files to the problem: an equality constraint takes
/// them as `A` and `b` under a zero loss, every other constraint takes them as
/// the least-squares data `M` and `y`.
fn build_problem(
    parsed: &ParsedConfig,
    matrix: DMatrix<f64>,
    rhs: DVector<f64>,
) -> Result<ProblemSpec> {
    let n = matrix.ncols();
    let groups = GroupStructure::uniform(n, parsed.problem.group_size)?;
    let (loss, constraint) = match parsed.problem.constraint {
        ConstraintKind::Equality => {
            if parsed.problem.loss != LossKind::Zero {
                return Err(AirError::Config {
                    message: "key `loss`: an equality constraint binds the matrix and rhs \
                              files to the constraint, which requires loss=zero"
                        .into(),
                });
            }
            (
                SmoothLoss::Zero,
                ConstraintSet::LinearEquality { a: matrix, b: rhs },
            )
        }
        ref other => {
            if parsed.problem.loss != LossKind::LeastSquares {
                return Err(AirError::Config {
                    message: format!(
                        "key `loss`: constraint={} binds the matrix and rhs files to the \
                         data term, which requires loss=least-squares",
                        other.name()
                    ),
                });
            }
            let set = match *other {
                ConstraintKind::Free => ConstraintSet::Free,
                ConstraintKind::NonNegative => ConstraintSet::NonNegative,
                ConstraintKind::Box { lower, upper } => ConstraintSet::Box {
                    lo: DVector::from_element(n, lower),
                    hi: DVector::from_element(n, upper),
                },
                ConstraintKind::Equality => unreachable!(),
            };
            (SmoothLoss::LeastSquares { m: matrix, y: rhs }, set)
        }
    };
    ProblemSpec::new(
        loss,
        parsed.problem.penalty,
        parsed.problem.mode,
        groups,
        constraint,
    )
}

fn echo_config(parsed: &ParsedConfig) {
    println!("# effective configuration");
    print!("{}", render(parsed));
    println!();
}

fn run_solve(config: &Path, matrix: &Path, rhs: &Path, out: &Path, set: &[String]) -> Result<i32> {
    let parsed = load_config(config, set)?;
    let a = io::read_matrix(matrix)?;
    let b = io::read_vector(rhs)?;
    let problem = build_problem(&parsed, a, b)?;
    let report = air_solve(&problem, &parsed.air)?;
    io::write_text(out, &render_trace_csv(&report.trace))?;
    echo_config(&parsed);
    println!("status: {}", report.status.name());
    println!("j0: {:.12e}", report.j0);
    println!("sparsity: {}", support_size(&problem, &report.x));
    println!("residual: {:.6e}", report.optimality_residual);
    println!(
        "trace: wrote {} ({} outer iterations)",
        io::display(out),
        report.outer_iterations
    );
    let converged = matches!(
        report.status,
        SolveStatus::ConvergedObjective | SolveStatus::ConvergedResidual
    );
    Ok(if converged { 0 } else { 1 })
}

fn thread_cap_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(raw) => parse_thread_cap(&raw).map(Some),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => Err(AirError::Config {
            message: format!("{THREADS_ENV} is not valid unicode"),
        }),
    }
}

fn parse_thread_cap(raw: &str) -> Result<usize> {
    match raw.trim().parse::<usize>() {
        Ok(t) if t >= 1 => Ok(t),
        _ => Err(AirError::Config {
            message: format!("{THREADS_ENV}=`{raw}` must be an integer >= 1"),
        }),
    }
}

fn sweep_config(parsed: &ParsedConfig) -> Result<SweepConfig> {
    let settings = &parsed.sweep;
    let seed = settings.seed.ok_or_else(|| AirError::Config {
        message: "key `seed`: the sweep requires an explicit seed".into(),
    })?;
    let mut sweep = if settings.full_grid {
        SweepConfig::full_grid(seed)
    } else {
        SweepConfig::new(seed)
    };
    sweep.n = settings.n;
    sweep.m = settings.m;
    if !settings.full_grid {
        sweep.s_values = settings.s_values.clone();
        sweep.trials = settings.trials;
    }
    sweep.success_tol = settings.success_tol;
    sweep.algorithms = settings.algorithms.clone();
    sweep.group_size = settings.group_size;
    sweep.record_timing = settings.record_timing;
    sweep.penalty = parsed.problem.penalty;
    sweep.air = parsed.air.clone();
    sweep.threads = thread_cap_from_env()?;
    sweep.validate()?;
    Ok(sweep)
}

fn run_sweep(config: &Path, out: &Path, set: &[String]) -> Result<i32> {
    let parsed = load_config(config, set)?;
    let sweep = sweep_config(&parsed)?;
    let result = recovery_sweep(&sweep)?;
    io::write_text(out, &render_sweep_csv(&result))?;
    let script_path = out.with_extension("py");
    let csv_name = out
        .file_name()
        .map(|name| name.to_string_lossy().into_owned())
        .unwrap_or_else(|| io::display(out));
    io::write_text(&script_path, &render_plot_script(&csv_name))?;
    echo_config(&parsed);
    println!("rows: {}", result.rows.len());
    println!("solver_failures: {}", result.solver_failures);
    println!("results: wrote {}", io::display(out));
    println!("plot: wrote {}", io::display(&script_path));
    Ok(0)
}

fn run_residual(
    config: &Path,
    matrix: &Path,
    rhs: &Path,
    point: &Path,
    set: &[String],
) -> Result<i32> {
    let parsed = load_config(config, set)?;
    let a = io::read_matrix(matrix)?;
    let b = io::read_vector(rhs)?;
    let problem = build_problem(&parsed, a, b)?;
    let x = io::read_vector(point)?;
    if x.len() != problem.dim() {
        return Err(AirError::DimensionMismatch {
            context: "candidate point",
            expected: problem.dim(),
            found: x.len(),
        });
    }
    let eps = EpsilonVector::broadcast(parsed.air.floor, problem.num_groups())?;
    let residual = optimality_residual(&problem, &x, &eps)?;
    echo_config(&parsed);
    println!("residual: {residual:.9e}");
    Ok(0)
}
