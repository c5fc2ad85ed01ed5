//! The outer adaptive reweighting loop.
//!
//! Each iteration freezes the current iterate and smoothing offsets, builds
//! the weighted convex surrogate, solves it with a warm start, and then
//! shrinks the offsets toward their floor. The surrogate majorizes the
//! smoothed objective up to an additive constant, so the smoothed objective
//! is nonincreasing along accepted steps; the loop stops when the unrelaxed
//! objective stalls or when the first-order residual of the smoothed problem
//! drops below the outer tolerance.

use nalgebra::DVector;

use crate::error::{AirError, Result};
use crate::model::{ConstraintSet, EpsilonVector, ProblemSpec};
use crate::solvers::{self, EqualityGeometry, SolverOptions, SubproblemSolution, SubproblemSpec};

/// Groups with norm at or below this threshold count as zero in reports.
pub const SPARSITY_THRESHOLD: f64 = 1e-3;

const DESCENT_SLACK: f64 = 1e-8;
const SURROGATE_STALL_FACTOR: f64 = 10.0;
const MAX_CONSECUTIVE_INNER_FAILURES: usize = 2;

/// Outer loop configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AirConfig {
    /// Initial smoothing offset applied to every group.
    pub eps0: f64,
    /// Multiplicative offset decay per outer iteration, in `(0, 1]`.
    pub decay: f64,
    /// Smallest offset value reached by the decay.
    pub floor: f64,
    /// Stopping tolerance on the unrelaxed objective change and the residual.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Lower clamp applied to subproblem weights.
    pub weight_floor: f64,
    /// Abort with an error if a converged step increases the smoothed
    /// objective beyond numerical slack.
    pub assert_descent: bool,
    /// Treat an inconclusive level-set check as a rejection.
    pub strict_guard: bool,
    pub solver: SolverOptions,
}

impl Default for AirConfig {
    fn default() -> Self {
        AirConfig {
            eps0: 1.0,
            decay: 0.7,
            floor: 1e-6,
            outer_tol: 1e-5,
            max_outer: 500,
            weight_floor: 1e-12,
            assert_descent: true,
            strict_guard: false,
            solver: SolverOptions::default(),
        }
    }
}

impl AirConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value, ok, constraint) in [
            (
                "eps0",
                self.eps0,
                self.eps0 > 0.0 && self.eps0.is_finite(),
                "> 0 and finite",
            ),
            (
                "decay",
                self.decay,
                self.decay > 0.0 && self.decay <= 1.0,
                "in (0, 1]",
            ),
            (
                "floor",
                self.floor,
                self.floor >= 0.0 && self.floor.is_finite(),
                ">= 0 and finite",
            ),
            (
                "outer_tol",
                self.outer_tol,
                self.outer_tol > 0.0 && self.outer_tol.is_finite(),
                "> 0 and finite",
            ),
            (
                "weight_floor",
                self.weight_floor,
                self.weight_floor > 0.0 && self.weight_floor.is_finite(),
                "> 0 and finite",
            ),
        ] {
            if !ok {
                return Err(AirError::InvalidParameter {
                    name,
                    value,
                    constraint,
                });
            }
        }
        if self.max_outer == 0 {
            return Err(AirError::InvalidParameter {
                name: "max_outer",
                value: 0.0,
                constraint: ">= 1",
            });
        }
        self.solver.validate()
    }
}

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// The unrelaxed objective change fell below the tolerance while the
    /// surrogate had also stalled.
    ConvergedObjective,
    /// The first-order residual of the smoothed problem fell below the
    /// tolerance.
    ConvergedResidual,
    MaxIterations,
    /// The level-set check was inconclusive under the strict policy.
    GuardRejected,
    /// Two consecutive inner solves failed to converge.
    SubproblemFailure,
}

impl SolveStatus {
    pub fn name(&self) -> &'static str {
        match self {
            SolveStatus::ConvergedObjective => "converged-objective",
            SolveStatus::ConvergedResidual => "converged-residual",
            SolveStatus::MaxIterations => "max-iterations",
            SolveStatus::GuardRejected => "guard-rejected",
            SolveStatus::SubproblemFailure => "subproblem-failure",
        }
    }
}

/// Outcome of the level-set boundedness check at the starting point.
#[derive(Debug, Clone, PartialEq)]
pub enum GuardOutcome {
    Pass { reason: &'static str },
    Inconclusive { detail: String },
}

/// One outer iteration, in trace column order.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: usize,
    pub j: f64,
    pub j0: f64,
    pub delta_g: f64,
    pub eps: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub sparsity: usize,
    pub inner_iters: usize,
    pub kkt_residual: f64,
}

/// Final iterate with its diagnostics and per-iteration trace.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: DVector<f64>,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    pub j0: f64,
    pub j: f64,
    pub optimality_residual: f64,
    pub guard: GuardOutcome,
    pub trace: Vec<IterationRecord>,
}

/// Decay every offset and clamp it at the floor.
pub fn update_epsilon(eps: &EpsilonVector, decay: f64, floor: f64) -> Result<EpsilonVector> {
    EpsilonVector::from_values(eps.iter().map(|e| (e * decay).max(floor)).collect())
}

/// Number of groups with norm above [`SPARSITY_THRESHOLD`].
pub fn support_size(problem: &ProblemSpec, x: &DVector<f64>) -> usize {
    (0..problem.num_groups())
        .filter(|&i| problem.group_norm(x, i) > SPARSITY_THRESHOLD)
        .count()
}

fn residual_or_infinite(
    problem: &ProblemSpec,
    x: &DVector<f64>,
    eps: &EpsilonVector,
    geometry: Option<&EqualityGeometry>,
) -> Result<f64> {
    match solvers::optimality_system_residual(problem, x, eps, geometry) {
        Err(AirError::InfeasiblePoint { .. }) => Ok(f64::INFINITY),
        other => other,
    }
}

/// First-order residual of the smoothed problem at `x`.
pub fn optimality_residual(
    problem: &ProblemSpec,
    x: &DVector<f64>,
    eps: &EpsilonVector,
) -> Result<f64> {
    match &problem.constraint {
        ConstraintSet::LinearEquality { a, b } => {
            let geometry = EqualityGeometry::new(a, b)?;
            solvers::optimality_system_residual(problem, x, eps, Some(&geometry))
        }
        _ => solvers::optimality_system_residual(problem, x, eps, None),
    }
}

/// Sufficient conditions for the initial level set of the smoothed objective
/// to be bounded: a compact feasible set, a coercive loss, a coercive penalty
/// over a loss bounded below, or, for plateau penalties, an initial smoothed
/// penalty value within the plateau budget.
pub fn level_set_guard(
    problem: &ProblemSpec,
    x0: &DVector<f64>,
    eps: &EpsilonVector,
) -> GuardOutcome {
    if problem.constraint.is_compact() {
        return GuardOutcome::Pass {
            reason: "compact feasible set",
        };
    }
    if problem.loss.is_coercive() {
        return GuardOutcome::Pass {
            reason: "coercive loss",
        };
    }
    let lower = problem.loss.lower_bound();
    if problem.penalty.is_coercive() && lower.is_some() {
        return GuardOutcome::Pass {
            reason: "coercive penalty over a loss bounded below",
        };
    }
    match (problem.penalty.plateau(), lower) {
        (Some(plateau), Some(f_lower)) => {
            let budget = f_lower + plateau;
            let initial: f64 = (0..problem.num_groups())
                .map(|i| {
                    problem
                        .penalty
                        .mode_value(problem.mode, problem.c_value(x0, i) + eps.get(i))
                })
                .sum();
            if initial <= budget {
                GuardOutcome::Pass {
                    reason: "initial smoothed penalty within the plateau budget",
                }
            } else {
                GuardOutcome::Inconclusive {
                    detail: format!(
                        "initial smoothed penalty {initial:.6e} exceeds the plateau budget {budget:.6e}"
                    ),
                }
            }
        }
        (Some(_), None) => GuardOutcome::Inconclusive {
            detail: "plateau penalty with a loss lacking a known lower bound".into(),
        },
        (None, _) => GuardOutcome::Inconclusive {
            detail: "no sufficient boundedness condition applies".into(),
        },
    }
}

/// Run the outer loop from the projection of the origin.
pub fn air_solve(problem: &ProblemSpec, config: &AirConfig) -> Result<SolveReport> {
    air_solve_from(problem, None, config)
}

/// Run the outer loop from a chosen starting point, projected onto the
/// feasible set if it is not already inside it.
pub fn air_solve_from(
    problem: &ProblemSpec,
    start: Option<&DVector<f64>>,
    config: &AirConfig,
) -> Result<SolveReport> {
    config.validate()?;
    let n = problem.dim();
    let geometry = match &problem.constraint {
        ConstraintSet::LinearEquality { a, b } => Some(EqualityGeometry::new(a, b)?),
        _ => None,
    };
    let seed_point = match start {
        Some(v) => {
            if v.len() != n {
                return Err(AirError::DimensionMismatch {
                    context: "starting point",
                    expected: n,
                    found: v.len(),
                });
            }
            v.clone()
        }
        None => DVector::zeros(n),
    };
    let x0 = match &geometry {
        Some(geom) => geom.project_affine(&seed_point),
        None => solvers::project(&problem.constraint, &seed_point)?,
    };
    let mut eps = EpsilonVector::broadcast(config.eps0, problem.num_groups())?;

    let guard = level_set_guard(problem, &x0, &eps);
    if config.strict_guard && matches!(guard, GuardOutcome::Inconclusive { .. }) {
        let j0 = problem.objective_j0(&x0);
        let j = problem.objective_j(&x0, &eps);
        let optimality =
            solvers::optimality_system_residual(problem, &x0, &eps, geometry.as_ref())?;
        return Ok(SolveReport {
            x: x0,
            status: SolveStatus::GuardRejected,
            outer_iterations: 0,
            j0,
            j,
            optimality_residual: optimality,
            guard,
            trace: Vec::new(),
        });
    }

    let mut x = x0;
    let mut j_prev = problem.objective_j(&x, &eps);
    let mut j0_prev = problem.objective_j0(&x);
    let mut warm: Option<SubproblemSolution> = None;
    let mut consecutive_failures = 0usize;
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut status = SolveStatus::MaxIterations;
    let mut outer_iterations = config.max_outer;

    for k in 1..=config.max_outer {
        let weights = problem.compute_weights(&x, &eps, config.weight_floor)?;
        let spec = SubproblemSpec::new(
            &problem.loss,
            &weights,
            problem.mode,
            &problem.groups,
            &problem.constraint,
        )?;
        let g_before = spec.objective(&x);
        let sol = solvers::solve_subproblem_with(
            &spec,
            &config.solver,
            warm.as_ref(),
            geometry.as_ref(),
        )?;
        let delta_g = g_before - sol.objective;

        if sol.converged {
            consecutive_failures = 0;
        } else {
            consecutive_failures += 1;
        }

        let j_next = problem.objective_j(&sol.x, &eps);
        if config.assert_descent
            && sol.converged
            && j_next > j_prev + DESCENT_SLACK * (1.0 + j_prev.abs())
        {
            return Err(AirError::DescentViolation {
                iteration: k,
                previous: j_prev,
                current: j_next,
            });
        }
        let j0_next = problem.objective_j0(&sol.x);
        let delta_j0 = (j0_next - j0_prev).abs();

        let (w_min, w_max) = weights
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &w| {
                (lo.min(w), hi.max(w))
            });
        x = sol.x.clone();
        trace.push(IterationRecord {
            k,
            j: j_next,
            j0: j0_next,
            delta_g,
            eps: eps.iter().fold(0.0, f64::max),
            w_min,
            w_max,
            sparsity: support_size(problem, &x),
            inner_iters: sol.iterations,
            kkt_residual: sol.kkt_residual,
        });

        eps = update_epsilon(&eps, config.decay, config.floor)?;
        let surrogate_stalled = delta_g.abs() <= SURROGATE_STALL_FACTOR * config.outer_tol;

        if consecutive_failures >= MAX_CONSECUTIVE_INNER_FAILURES {
            status = SolveStatus::SubproblemFailure;
            outer_iterations = k;
            break;
        }
        if surrogate_stalled && delta_j0 <= config.outer_tol {
            let residual = residual_or_infinite(problem, &x, &eps, geometry.as_ref())?;
            status = if residual <= config.outer_tol {
                SolveStatus::ConvergedResidual
            } else {
                SolveStatus::ConvergedObjective
            };
            outer_iterations = k;
            break;
        }

        warm = Some(sol);
        j_prev = problem.objective_j(&x, &eps);
        j0_prev = j0_next;
    }

    let optimality = residual_or_infinite(problem, &x, &eps, geometry.as_ref())?;
    let j0 = problem.objective_j0(&x);
    let j = problem.objective_j(&x, &eps);
    Ok(SolveReport {
        x,
        status,
        outer_iterations,
        j0,
        j,
        optimality_residual: optimality,
        guard,
        trace,
    })
}

/// Render the per-iteration trace with its fixed header line.
pub fn render_trace_csv(trace: &[IterationRecord]) -> String {
    let mut out =
        String::from("k,J,J0,delta_G,eps,w_min,w_max,sparsity,inner_iters,kkt_residual\n");
    for r in trace {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{:.9e},{:.3e},{:.3e},{:.3e},{},{},{:.3e}\n",
            r.k,
            r.j,
            r.j0,
            r.delta_g,
            r.eps,
            r.w_min,
            r.w_max,
            r.sparsity,
            r.inner_iters,
            r.kkt_residual
        ));
    }
    out
}
