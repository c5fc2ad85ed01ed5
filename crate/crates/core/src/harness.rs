//! Seeded sparse-recovery experiments: instance generation, trial scoring,
//! and success-rate sweeps over algorithms and sparsity levels.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::air::{air_solve, AirConfig, SolveStatus};
use crate::error::{AirError, Result};
use crate::model::{ConstraintSet, GroupStructure, ProblemSpec, SmoothLoss};
use crate::penalties::{Mode, PenaltyKind};
use crate::solvers::solve_weighted_l1_equality;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Recovery algorithms compared by the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    /// One weighted-l1 solve with every weight equal to one.
    UnweightedL1,
    /// Reweighted iterations in the absolute-value framing.
    AirL1,
    /// Reweighted iterations in the squared framing.
    AirL2,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::UnweightedL1, Algorithm::AirL1, Algorithm::AirL2];

    /// Stable identifier mixed into per-trial seeds.
    pub fn id(self) -> u64 {
        match self {
            Algorithm::UnweightedL1 => 0,
            Algorithm::AirL1 => 1,
            Algorithm::AirL2 => 2,
        }
    }

    /// Tag used in result rows and command-line arguments.
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::UnweightedL1 => "l1",
            Algorithm::AirL1 => "air-l1",
            Algorithm::AirL2 => "air-l2",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "l1" => Ok(Algorithm::UnweightedL1),
            "air-l1" => Ok(Algorithm::AirL1),
            "air-l2" => Ok(Algorithm::AirL2),
            other => Err(AirError::Config {
                message: format!("unknown algorithm `{other}`; expected one of l1, air-l1, air-l2"),
            }),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Settings for one success-rate sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub n: usize,
    pub m: usize,
    pub s_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub success_tol: f64,
    pub algorithms: Vec<Algorithm>,
    pub penalty: PenaltyKind,
    pub air: AirConfig,
    pub group_size: usize,
    /// When false, every reported wall time is exactly zero so that repeated
    /// runs produce byte-identical output.
    pub record_timing: bool,
    /// Optional cap on worker threads; `None` uses the global default.
    pub threads: Option<usize>,
}

impl SweepConfig {
    /// Default experiment sizes; the seed must always be chosen explicitly.
    pub fn new(seed: u64) -> Self {
        SweepConfig {
            n: 256,
            m: 100,
            s_values: vec![5, 10, 15, 20, 22, 25, 28, 30, 33, 37, 41, 45],
            trials: 25,
            seed,
            success_tol: 1e-3,
            algorithms: Algorithm::ALL.to_vec(),
            penalty: PenaltyKind::Lpn { p: 0.1 },
            air: AirConfig::default(),
            group_size: 1,
            record_timing: true,
            threads: None,
        }
    }

    /// The dense sparsity grid: every level from 1 to 100 at 100 trials each.
    pub fn full_grid(seed: u64) -> Self {
        let mut config = Self::new(seed);
        config.s_values = (1..=100).collect();
        config.trials = 100;
        config
    }

    pub fn num_groups(&self) -> usize {
        self.n / self.group_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(AirError::InvalidParameter {
                name: "n",
                value: self.n as f64,
                constraint: "positive",
            });
        }
        if self.m == 0 {
            return Err(AirError::InvalidParameter {
                name: "m",
                value: self.m as f64,
                constraint: "positive",
            });
        }
        if self.group_size == 0 || !self.n.is_multiple_of(self.group_size) {
            return Err(AirError::InvalidGroups {
                reason: format!(
                    "group size {} does not evenly divide dimension {}",
                    self.group_size, self.n
                ),
            });
        }
        if self.trials == 0 {
            return Err(AirError::InvalidParameter {
                name: "trials",
                value: self.trials as f64,
                constraint: "positive",
            });
        }
        if self.s_values.is_empty() {
            return Err(AirError::Config {
                message: "s_values must list at least one sparsity level".into(),
            });
        }
        for &s in &self.s_values {
            if s == 0 || s > self.num_groups() || s > self.m {
                return Err(AirError::Config {
                    message: format!(
                        "sparsity level {} must lie in 1..=min(num_groups={}, m={})",
                        s,
                        self.num_groups(),
                        self.m
                    ),
                });
            }
        }
        if !(self.success_tol.is_finite() && self.success_tol > 0.0) {
            return Err(AirError::InvalidParameter {
                name: "success_tol",
                value: self.success_tol,
                constraint: "finite and positive",
            });
        }
        if self.algorithms.is_empty() {
            return Err(AirError::Config {
                message: "algorithms must list at least one entry".into(),
            });
        }
        if let Some(threads) = self.threads {
            if threads == 0 {
                return Err(AirError::InvalidParameter {
                    name: "threads",
                    value: 0.0,
                    constraint: "positive when set",
                });
            }
        }
        self.penalty.validate()?;
        self.air.validate()?;
        Ok(())
    }
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derived stream seed for one (algorithm, sparsity, trial) cell.
///
/// Every cell gets an independent stream, so trials can run in any order or
/// in parallel without changing the data they see.
pub fn trial_seed(seed: u64, algorithm: Algorithm, s: usize, trial_index: usize) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ algorithm.id());
    h = splitmix64(h ^ s as u64);
    h = splitmix64(h ^ trial_index as u64);
    h
}

/// Draw a Gaussian measurement matrix, a vector with exactly `s` nonzero
/// groups chosen uniformly, and consistent measurements `b = A x0`.
pub fn generate_instance(
    n: usize,
    m: usize,
    s: usize,
    group_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    if group_size == 0 || !n.is_multiple_of(group_size) {
        return Err(AirError::InvalidGroups {
            reason: format!("group size {group_size} does not evenly divide dimension {n}"),
        });
    }
    let num_groups = n / group_size;
    if s > num_groups {
        return Err(AirError::Config {
            message: format!("sparsity {s} exceeds the number of groups {num_groups}"),
        });
    }

    let mut entries = Vec::with_capacity(m * n);
    for _ in 0..m * n {
        entries.push(rng.sample::<f64, _>(StandardNormal));
    }
    let a = DMatrix::from_row_slice(m, n, &entries);

    let mut support: Vec<usize> = Vec::with_capacity(s);
    while support.len() < s {
        let candidate = rng.gen_range(0..num_groups);
        if !support.contains(&candidate) {
            support.push(candidate);
        }
    }

    let mut x0 = DVector::zeros(n);
    for &group in &support {
        for j in group * group_size..(group + 1) * group_size {
            x0[j] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let b = &a * &x0;
    Ok((a, x0, b))
}

/// Closed max-norm recovery test: true iff the worst coordinate error is
/// at most `tol`.
pub fn success(x_hat: &DVector<f64>, x0: &DVector<f64>, tol: f64) -> Result<bool> {
    if x_hat.len() != x0.len() {
        return Err(AirError::DimensionMismatch {
            context: "success",
            expected: x0.len(),
            found: x_hat.len(),
        });
    }
    Ok((x_hat - x0).amax() <= tol)
}

/// Outcome of one seeded trial.
#[derive(Debug, Clone)]
pub struct TrialReport {
    pub algorithm: Algorithm,
    pub s: usize,
    pub trial_index: usize,
    pub success: bool,
    pub recovery_error: f64,
    pub outer_iterations: usize,
    /// True when the underlying solve ended without its own convergence
    /// certificate; such trials still score by recovery error unless the
    /// solve aborted outright.
    pub solver_failed: bool,
    pub wall_time_ms: f64,
}

/// Generate one instance and run one algorithm on it.
pub fn run_trial(
    config: &SweepConfig,
    algorithm: Algorithm,
    s: usize,
    trial_index: usize,
) -> Result<TrialReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, algorithm, s, trial_index));
    let (a, x0, b) = generate_instance(config.n, config.m, s, config.group_size, &mut rng)?;
    let groups = GroupStructure::uniform(config.n, config.group_size)?;

    let started = Instant::now();
    let (x_hat, outer_iterations, solver_failed, aborted) = match algorithm {
        Algorithm::UnweightedL1 => {
            let weights = vec![1.0; groups.num_groups()];
            let sol = solve_weighted_l1_equality(&a, &b, &weights, &groups, &config.air.solver)?;
            (sol.x, 1, !sol.converged, false)
        }
        Algorithm::AirL1 | Algorithm::AirL2 => {
            let mode = if algorithm == Algorithm::AirL1 {
                Mode::AbsoluteValue
            } else {
                Mode::Square
            };
            let problem = ProblemSpec::new(
                SmoothLoss::Zero,
                config.penalty,
                mode,
                groups,
                ConstraintSet::LinearEquality { a, b },
            )?;
            let report = air_solve(&problem, &config.air)?;
            let aborted = matches!(
                report.status,
                SolveStatus::SubproblemFailure | SolveStatus::GuardRejected
            );
            let failed = aborted || matches!(report.status, SolveStatus::MaxIterations);
            (report.x, report.outer_iterations, failed, aborted)
        }
    };
    let wall_time_ms = if config.record_timing {
        started.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };

    let recovery_error = (&x_hat - &x0).amax();
    let success = !aborted && recovery_error <= config.success_tol;
    Ok(TrialReport {
        algorithm,
        s,
        trial_index,
        success,
        recovery_error,
        outer_iterations,
        solver_failed,
        wall_time_ms,
    })
}

/// One aggregated sweep row.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub s: usize,
    pub successes: usize,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_outer_iters: f64,
    pub mean_wall_time_ms: f64,
}

/// Aggregated sweep outcome, rows ordered by (algorithm, s).
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Count of trials whose solve ended without a convergence certificate.
    pub solver_failures: usize,
}

/// Run every (algorithm, sparsity, trial) cell and aggregate success rates.
pub fn recovery_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let cells: Vec<(Algorithm, usize)> = config
        .algorithms
        .iter()
        .flat_map(|&algorithm| config.s_values.iter().map(move |&s| (algorithm, s)))
        .collect();
    let tasks: Vec<(Algorithm, usize, usize)> = cells
        .iter()
        .flat_map(|&(algorithm, s)| (0..config.trials).map(move |t| (algorithm, s, t)))
        .collect();

    let reports = run_tasks(config, &tasks)?;

    let mut rows = Vec::with_capacity(cells.len());
    let mut solver_failures = 0usize;
    for (cell_index, &(algorithm, s)) in cells.iter().enumerate() {
        let slice = &reports[cell_index * config.trials..(cell_index + 1) * config.trials];
        let successes = slice.iter().filter(|r| r.success).count();
        solver_failures += slice.iter().filter(|r| r.solver_failed).count();
        let mean_outer_iters =
            slice.iter().map(|r| r.outer_iterations as f64).sum::<f64>() / config.trials as f64;
        let mean_wall_time_ms = if config.record_timing {
            slice.iter().map(|r| r.wall_time_ms).sum::<f64>() / config.trials as f64
        } else {
            0.0
        };
        rows.push(SweepRow {
            algorithm,
            s,
            successes,
            trials: config.trials,
            success_rate: successes as f64 / config.trials as f64,
            mean_outer_iters,
            mean_wall_time_ms,
        });
    }
    Ok(SweepResult {
        rows,
        solver_failures,
    })
}

#[cfg(feature = "parallel")]
fn run_tasks(
    config: &SweepConfig,
    tasks: &[(Algorithm, usize, usize)],
) -> Result<Vec<TrialReport>> {
    let run = || {
        tasks
            .par_iter()
            .map(|&(algorithm, s, trial_index)| run_trial(config, algorithm, s, trial_index))
            .collect::<Result<Vec<_>>>()
    };
    match config.threads {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|err| AirError::Config {
                    message: format!("failed to build thread pool: {err}"),
                })?;
            pool.install(run)
        }
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run_tasks(
    config: &SweepConfig,
    tasks: &[(Algorithm, usize, usize)],
) -> Result<Vec<TrialReport>> {
    tasks
        .iter()
        .map(|&(algorithm, s, trial_index)| run_trial(config, algorithm, s, trial_index))
        .collect()
}

pub const SWEEP_CSV_HEADER: &str =
    "algorithm,s,successes,trials,success_rate,mean_outer_iters,mean_wall_time_ms";

/// Render the sweep as CSV under the pinned header.
pub fn render_sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{:.4},{:.3},{:.3}\n",
            row.algorithm.name(),
            row.s,
            row.successes,
            row.trials,
            row.success_rate,
            row.mean_outer_iters,
            row.mean_wall_time_ms
        ));
    }
    out
}

/// Python script that charts success rate against sparsity, one line per
/// algorithm, reading the CSV written next to it.
pub fn render_plot_script(csv_name: &str) -> String {
    let png_name = match csv_name.rsplit_once('.') {
        Some((stem, _)) => format!("{stem}.png"),
        None => format!("{csv_name}.png"),
    };
    format!(
        r#"#!/usr/bin/env python3
"""Plot empirical success recovery probability versus sparsity."""
import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV_PATH = "{csv_name}"
PNG_PATH = "{png_name}"

series = defaultdict(list)
with open(CSV_PATH, newline="") as handle:
    for row in csv.DictReader(handle):
        series[row["algorithm"]].append((int(row["s"]), float(row["success_rate"])))

fig, ax = plt.subplots(figsize=(6.0, 4.0))
for name in sorted(series):
    points = sorted(series[name])
    ax.plot([s for s, _ in points], [rate for _, rate in points], marker="o", label=name)
ax.set_xlabel("sparsity s")
ax.set_ylabel("empirical success recovery probability")
ax.set_ylim(-0.05, 1.05)
ax.grid(True, alpha=0.3)
ax.legend()
fig.tight_layout()
fig.savefig(PNG_PATH, dpi=150)
print(f"wrote {{PNG_PATH}}")
"#
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_seeds_separate_streams() {
        let base = trial_seed(42, Algorithm::UnweightedL1, 5, 0);
        assert_eq!(base, trial_seed(42, Algorithm::UnweightedL1, 5, 0));
        assert_ne!(base, trial_seed(42, Algorithm::AirL1, 5, 0));
        assert_ne!(base, trial_seed(42, Algorithm::AirL2, 5, 0));
        assert_ne!(base, trial_seed(42, Algorithm::UnweightedL1, 6, 0));
        assert_ne!(base, trial_seed(42, Algorithm::UnweightedL1, 5, 1));
        assert_ne!(base, trial_seed(43, Algorithm::UnweightedL1, 5, 0));
    }

    #[test]
    fn empty_support_gives_zero_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (_, x0, b) = generate_instance(8, 4, 0, 1, &mut rng).unwrap();
        assert_eq!(x0, DVector::zeros(8));
        assert_eq!(b, DVector::zeros(4));
    }

    #[test]
    fn full_support_fills_every_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (_, x0, _) = generate_instance(6, 3, 6, 1, &mut rng).unwrap();
        assert!(x0.iter().all(|&v| v != 0.0));
    }

    #[test]
    fn grouped_support_is_blockwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (_, x0, _) = generate_instance(8, 4, 2, 2, &mut rng).unwrap();
        let nonzero_groups = (0..4)
            .filter(|&g| x0[2 * g] != 0.0 || x0[2 * g + 1] != 0.0)
            .count();
        assert_eq!(nonzero_groups, 2);
        for g in 0..4 {
            let any = x0[2 * g] != 0.0 || x0[2 * g + 1] != 0.0;
            let all = x0[2 * g] != 0.0 && x0[2 * g + 1] != 0.0;
            assert_eq!(any, all);
        }
    }

    #[test]
    fn measurements_are_exactly_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (a, x0, b) = generate_instance(10, 5, 3, 1, &mut rng).unwrap();
        assert_eq!(b, &a * &x0);
    }

    #[test]
    fn success_uses_closed_max_norm_comparison() {
        let x0 = DVector::from_vec(vec![1.0, 0.0, -2.0]);
        assert!(success(&x0, &x0, 1e-3).unwrap());
        let off = DVector::from_vec(vec![1.0, 2e-3, -2.0]);
        assert!(!success(&off, &x0, 1e-3).unwrap());
        let boundary = DVector::from_vec(vec![1.0, 1e-3, -2.0]);
        assert!(success(&boundary, &x0, 1e-3).unwrap());
        let short = DVector::from_vec(vec![1.0]);
        assert!(success(&short, &x0, 1e-3).is_err());
    }

    fn tiny_config(seed: u64) -> SweepConfig {
        let mut config = SweepConfig::new(seed);
        config.n = 12;
        config.m = 8;
        config.s_values = vec![1, 2];
        config.trials = 2;
        config.record_timing = false;
        config
    }

    #[test]
    fn each_algorithm_recovers_a_single_spike() {
        let config = tiny_config(42);
        for algorithm in Algorithm::ALL {
            let report = run_trial(&config, algorithm, 1, 0).unwrap();
            assert!(
                report.success,
                "{} failed with error {:.3e}",
                algorithm.name(),
                report.recovery_error
            );
        }
    }

    #[test]
    fn square_system_recovers_exactly() {
        let mut config = tiny_config(5);
        config.n = 6;
        config.m = 6;
        for algorithm in Algorithm::ALL {
            let report = run_trial(&config, algorithm, 2, 0).unwrap();
            assert!(report.success, "{} failed", algorithm.name());
        }
    }

    #[test]
    fn single_trial_sweep_matches_run_trial() {
        let mut config = tiny_config(21);
        config.s_values = vec![1];
        config.trials = 1;
        config.algorithms = vec![Algorithm::AirL1];
        let result = recovery_sweep(&config).unwrap();
        assert_eq!(result.rows.len(), 1);
        let row = &result.rows[0];
        let trial = run_trial(&config, Algorithm::AirL1, 1, 0).unwrap();
        assert_eq!(row.successes, usize::from(trial.success));
        assert_eq!(row.trials, 1);
        assert_eq!(row.success_rate, if trial.success { 1.0 } else { 0.0 });
        assert_eq!(row.mean_outer_iters, trial.outer_iterations as f64);
        assert_eq!(row.mean_wall_time_ms, 0.0);
    }

    #[test]
    fn sweep_rows_are_ordered_and_repeatable() {
        let config = tiny_config(42);
        let first = recovery_sweep(&config).unwrap();
        let second = recovery_sweep(&config).unwrap();
        assert_eq!(render_sweep_csv(&first), render_sweep_csv(&second));
        let order: Vec<(&str, usize)> = first
            .rows
            .iter()
            .map(|row| (row.algorithm.name(), row.s))
            .collect();
        assert_eq!(
            order,
            vec![
                ("l1", 1),
                ("l1", 2),
                ("air-l1", 1),
                ("air-l1", 2),
                ("air-l2", 1),
                ("air-l2", 2),
            ]
        );
    }

    #[test]
    fn csv_header_and_shape_are_pinned() {
        let mut config = tiny_config(3);
        config.s_values = vec![1];
        config.algorithms = vec![Algorithm::UnweightedL1];
        let result = recovery_sweep(&config).unwrap();
        let csv = render_sweep_csv(&result);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "algorithm,s,successes,trials,success_rate,mean_outer_iters,mean_wall_time_ms"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("l1,1,"));
        assert_eq!(row.split(',').count(), 7);
        assert!(lines.next().is_none());
    }

    #[test]
    fn plot_script_reads_the_csv_it_sits_beside() {
        let script = render_plot_script("sweep.csv");
        assert!(script.contains("matplotlib"));
        assert!(script.contains("CSV_PATH = \"sweep.csv\""));
        assert!(script.contains("PNG_PATH = \"sweep.png\""));
        assert!(script.contains("success_rate"));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for algorithm in Algorithm::ALL {
            assert_eq!(Algorithm::parse(algorithm.name()).unwrap(), algorithm);
        }
        assert!(Algorithm::parse("ols").is_err());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let mut config = SweepConfig::new(1);
        config.s_values = vec![0];
        assert!(config.validate().is_err());

        let mut config = SweepConfig::new(1);
        config.s_values = vec![300];
        assert!(config.validate().is_err());

        let mut config = SweepConfig::new(1);
        config.group_size = 3;
        assert!(config.validate().is_err());

        let mut config = SweepConfig::new(1);
        config.algorithms.clear();
        assert!(config.validate().is_err());

        let mut config = SweepConfig::new(1);
        config.trials = 0;
        assert!(config.validate().is_err());

        assert!(SweepConfig::new(1).validate().is_ok());
        assert!(SweepConfig::full_grid(1).validate().is_ok());
    }

    #[test]
    fn golden_instance_is_pinned() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (a, x0, b) = generate_instance(8, 4, 2, 1, &mut rng).unwrap();
        let expected_row0 = [
            0.47798123835102174,
            1.3340706102318078,
            -0.21086668327103028,
            0.4763469238088213,
            -0.5120906220561634,
            -0.9339784493906981,
            -1.0023778441376028,
            0.9166635595931693,
        ];
        for (j, expected) in expected_row0.iter().enumerate() {
            assert_eq!(a[(0, j)], *expected);
        }
        let support: Vec<(usize, f64)> = x0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .collect();
        assert_eq!(
            support,
            vec![(3, 1.6449848220244285), (6, -0.4027918635356389)]
        );
        let expected_b = [
            1.187333099490559,
            1.4880907278857298,
            -0.6385958724943174,
            1.394127268517437,
        ];
        for (i, expected) in expected_b.iter().enumerate() {
            assert_eq!(b[i], *expected);
        }
    }
}
