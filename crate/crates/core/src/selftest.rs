//! Fast invariant suite behind the `selftest` command.
//!
//! Every check is small enough to finish in well under a second, prints one
//! line, and exercises a different layer: penalty calculus, weight formulas,
//! the two equality solvers against closed-form answers, the outer loop on a
//! pinned example, the level-set guard, and the configuration round trip.

use nalgebra::{DMatrix, DVector};

use crate::air::{air_solve, level_set_guard, AirConfig, GuardOutcome, SolveStatus};
use crate::config::{parse_config, render, ParsedConfig};
use crate::model::{ConstraintSet, EpsilonVector, GroupStructure, ProblemSpec, SmoothLoss};
use crate::penalties::{Mode, PenaltyKind};
use crate::solvers::{solve_weighted_l1_equality, solve_weighted_l2_equality, SolverOptions};

const CATALOG: [PenaltyKind; 7] = [
    PenaltyKind::Exp { p: 0.7 },
    PenaltyKind::Lpn { p: 0.4 },
    PenaltyKind::Log { p: 1.3 },
    PenaltyKind::Fra { p: 0.9 },
    PenaltyKind::Tan { p: 1.1 },
    PenaltyKind::Scad {
        lambda: 0.8,
        a: 3.7,
    },
    PenaltyKind::Mcp {
        lambda: 0.8,
        a: 3.0,
    },
];

struct Outcome {
    name: &'static str,
    detail: Option<String>,
}

impl Outcome {
    fn pass(name: &'static str) -> Self {
        Outcome { name, detail: None }
    }

    fn fail(name: &'static str, detail: String) -> Self {
        Outcome {
            name,
            detail: Some(detail),
        }
    }

    fn from_result(name: &'static str, result: Result<(), String>) -> Self {
        match result {
            Ok(()) => Outcome::pass(name),
            Err(detail) => Outcome::fail(name, detail),
        }
    }
}

fn penalty_shape() -> Result<(), String> {
    let grid = [0.0, 0.05, 0.3, 1.0, 2.5, 8.0];
    for kind in CATALOG {
        if kind.r_value(0.0).abs() > 1e-15 {
            return Err(format!("{}: r(0) != 0", kind.name()));
        }
        for pair in grid.windows(2) {
            let (lo, hi) = (kind.r_value(pair[0]), kind.r_value(pair[1]));
            if hi.is_nan() || lo.is_nan() || hi < lo {
                return Err(format!(
                    "{}: r not nondecreasing on [{}, {}]",
                    kind.name(),
                    pair[0],
                    pair[1]
                ));
            }
        }
        for &c in &grid[1..] {
            let slope = kind.r_prime(c);
            if !(slope >= 0.0 && slope.is_finite()) {
                return Err(format!("{}: r'({c}) = {slope}", kind.name()));
            }
        }
    }
    Ok(())
}

fn weight_matches_difference_quotient() -> Result<(), String> {
    let h = 1e-6;
    for kind in CATALOG {
        for &(c, eps) in &[(0.0, 0.5), (0.3, 0.2), (1.4, 0.05), (4.0, 1.0)] {
            for mode in [Mode::AbsoluteValue, Mode::Square] {
                let smoothed = |t: f64| match mode {
                    Mode::AbsoluteValue => kind.r_value(t + eps),
                    Mode::Square => kind.r_value((t + eps).sqrt()),
                };
                let w = kind
                    .weight(mode, c, eps)
                    .map_err(|e| format!("{}: {e}", kind.name()))?;
                let fd =
                    (smoothed(c + h) - smoothed((c - h).max(0.0))) / (c + h - (c - h).max(0.0));
                let scale = 1.0 + w.abs();
                if (w - fd).abs() > 1e-4 * scale {
                    return Err(format!(
                        "{} {} at c={c}, eps={eps}: weight {w:.9} vs quotient {fd:.9}",
                        kind.name(),
                        mode.name()
                    ));
                }
            }
        }
    }
    Ok(())
}

fn tiny_problem(penalty: PenaltyKind, mode: Mode) -> Result<ProblemSpec, String> {
    let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    let b = DVector::from_column_slice(&[2.0]);
    ProblemSpec::new(
        SmoothLoss::Zero,
        penalty,
        mode,
        GroupStructure::singletons(2),
        ConstraintSet::LinearEquality { a, b },
    )
    .map_err(|e| e.to_string())
}

fn sandwich_holds() -> Result<(), String> {
    let problem = tiny_problem(PenaltyKind::Log { p: 1.3 }, Mode::AbsoluteValue)?;
    let x = DVector::from_column_slice(&[0.7, -0.4]);
    let j0 = problem.objective_j0(&x);
    let mut previous = f64::INFINITY;
    for j in 0..=8 {
        let eps = EpsilonVector::broadcast(10f64.powi(-j), 2).map_err(|e| e.to_string())?;
        let value = problem.objective_j(&x, &eps);
        let (lo, hi) = problem.sandwich_bounds(&x, &eps);
        if !(lo - 1e-12 <= value && value <= hi + 1e-12) {
            return Err(format!("bounds violated at eps=1e-{j}: {lo} {value} {hi}"));
        }
        if value > previous + 1e-12 || value < j0 - 1e-12 {
            return Err(format!("not monotone toward J0 at eps=1e-{j}"));
        }
        previous = value;
    }
    if (previous - j0).abs() > 1e-6 * (1.0 + j0.abs()) {
        return Err(format!("gap at eps=1e-8: {} vs {}", previous, j0));
    }
    Ok(())
}

fn l2_solver_matches_closed_form() -> Result<(), String> {
    let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    let b = DVector::from_column_slice(&[2.0]);
    let groups = GroupStructure::singletons(2);
    let sol =
        solve_weighted_l2_equality(&a, &b, &[1.0, 1.0], &groups).map_err(|e| e.to_string())?;
    let expected = [0.4, 0.8];
    for (i, &e) in expected.iter().enumerate() {
        if (sol.x[i] - e).abs() > 1e-10 {
            return Err(format!("x[{i}] = {} but expected {e}", sol.x[i]));
        }
    }
    Ok(())
}

fn l1_solver_finds_vertex() -> Result<(), String> {
    let a = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    let b = DVector::from_column_slice(&[2.0]);
    let groups = GroupStructure::singletons(2);
    let sol = solve_weighted_l1_equality(&a, &b, &[1.0, 1.0], &groups, &SolverOptions::default())
        .map_err(|e| e.to_string())?;
    if !sol.converged {
        return Err("inner solver did not converge".into());
    }
    let expected = [0.0, 1.0];
    for (i, &e) in expected.iter().enumerate() {
        if (sol.x[i] - e).abs() > 1e-5 {
            return Err(format!("x[{i}] = {} but expected {e}", sol.x[i]));
        }
    }
    Ok(())
}

fn outer_loop_recovers_sparse_point() -> Result<(), String> {
    let problem = tiny_problem(PenaltyKind::Lpn { p: 0.1 }, Mode::AbsoluteValue)?;
    let report = air_solve(&problem, &AirConfig::default()).map_err(|e| e.to_string())?;
    if !matches!(
        report.status,
        SolveStatus::ConvergedObjective | SolveStatus::ConvergedResidual
    ) {
        return Err(format!("status {}", report.status.name()));
    }
    let expected = [0.0, 1.0];
    for (i, &e) in expected.iter().enumerate() {
        if (report.x[i] - e).abs() > 1e-4 {
            return Err(format!("x[{i}] = {} but expected {e}", report.x[i]));
        }
    }
    for pair in report.trace.windows(2) {
        let slack = 1e-8 * (1.0 + pair[0].j.abs());
        if pair[1].j > pair[0].j + slack {
            return Err(format!(
                "smoothed objective rose from {} to {}",
                pair[0].j, pair[1].j
            ));
        }
    }
    Ok(())
}

fn guard_classifies_examples() -> Result<(), String> {
    let x0 = DVector::from_column_slice(&[0.0, 1.0]);
    let coercive = tiny_problem(PenaltyKind::Lpn { p: 0.1 }, Mode::AbsoluteValue)?;
    let eps = EpsilonVector::broadcast(1.0, 2).map_err(|e| e.to_string())?;
    match level_set_guard(&coercive, &x0, &eps) {
        GuardOutcome::Pass { .. } => {}
        GuardOutcome::Inconclusive { detail } => {
            return Err(format!("coercive case rejected: {detail}"));
        }
    }
    let plateau = tiny_problem(PenaltyKind::Fra { p: 1.0 }, Mode::AbsoluteValue)?;
    let small = EpsilonVector::broadcast(0.5, 2).map_err(|e| e.to_string())?;
    if !matches!(
        level_set_guard(&plateau, &x0, &small),
        GuardOutcome::Pass { .. }
    ) {
        return Err("plateau case with small offsets rejected".into());
    }
    let large = EpsilonVector::broadcast(100.0, 2).map_err(|e| e.to_string())?;
    if !matches!(
        level_set_guard(&plateau, &x0, &large),
        GuardOutcome::Inconclusive { .. }
    ) {
        return Err("plateau case with large offsets accepted".into());
    }
    Ok(())
}

fn config_round_trips() -> Result<(), String> {
    let original = ParsedConfig::default();
    let text = render(&original);
    let reparsed = parse_config(&text, "selftest", &[]).map_err(|e| e.to_string())?;
    if reparsed != original {
        return Err("rendered defaults did not reparse to the same settings".into());
    }
    Ok(())
}

/// Run every check, print one line per check, and return the failure count.
pub fn run() -> usize {
    let outcomes = vec![
        Outcome::from_result("penalty-catalog-shape", penalty_shape()),
        Outcome::from_result(
            "weights-match-difference-quotients",
            weight_matches_difference_quotient(),
        ),
        Outcome::from_result("smoothed-objective-sandwich", sandwich_holds()),
        Outcome::from_result("l2-equality-closed-form", l2_solver_matches_closed_form()),
        Outcome::from_result("l1-equality-vertex", l1_solver_finds_vertex()),
        Outcome::from_result(
            "outer-loop-sparse-recovery",
            outer_loop_recovers_sparse_point(),
        ),
        Outcome::from_result("level-set-guard", guard_classifies_examples()),
        Outcome::from_result("config-round-trip", config_round_trips()),
    ];
    let mut failures = 0;
    for outcome in &outcomes {
        match &outcome.detail {
            None => println!("ok   {}", outcome.name),
            Some(detail) => {
                failures += 1;
                println!("FAIL {}: {detail}", outcome.name);
            }
        }
    }
    println!(
        "selftest: {} passed, {} failed",
        outcomes.len() - failures,
        failures
    );
    failures
}
