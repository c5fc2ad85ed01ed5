//! Flat key=value configuration documents with bracketed sections.
//!
//! Sections group keys for readability; key names are unique across the
//! whole document, unknown keys and sections are rejected, and rendering a
//! parsed configuration echoes every effective value.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::air::AirConfig;
use crate::error::{AirError, Result};
use crate::harness::Algorithm;
use crate::penalties::{Mode, PenaltyKind};
use crate::solvers::{SolverOptions, StepRule};

pub const SECTIONS: [&str; 5] = ["problem", "penalty", "air", "solver", "sweep"];

/// Loss selected by the `[problem]` section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Zero,
    LeastSquares,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Zero => "zero",
            LossKind::LeastSquares => "least-squares",
        }
    }
}

/// Constraint selected by the `[problem]` section; data-dependent contents
/// (the equality system) are attached later from the matrix and rhs files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintKind {
    Free,
    Equality,
    NonNegative,
    Box { lower: f64, upper: f64 },
}

impl ConstraintKind {
    pub fn name(self) -> &'static str {
        match self {
            ConstraintKind::Free => "free",
            ConstraintKind::Equality => "equality",
            ConstraintKind::NonNegative => "nonneg",
            ConstraintKind::Box { .. } => "box",
        }
    }
}

/// Problem-shape settings independent of the data files.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSettings {
    pub loss: LossKind,
    pub constraint: ConstraintKind,
    pub group_size: usize,
    pub penalty: PenaltyKind,
    pub mode: Mode,
}

/// Sweep-section settings; the seed stays optional until a sweep actually
/// needs it.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub n: usize,
    pub m: usize,
    pub s_values: Vec<usize>,
    pub trials: usize,
    pub seed: Option<u64>,
    pub success_tol: f64,
    pub algorithms: Vec<Algorithm>,
    pub group_size: usize,
    pub record_timing: bool,
    pub full_grid: bool,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            n: 256,
            m: 100,
            s_values: vec![5, 10, 15, 20, 22, 25, 28, 30, 33, 37, 41, 45],
            trials: 25,
            seed: None,
            success_tol: 1e-3,
            algorithms: Algorithm::ALL.to_vec(),
            group_size: 1,
            record_timing: true,
            full_grid: false,
        }
    }
}

/// A fully resolved configuration document.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub problem: ProblemSettings,
    pub air: AirConfig,
    pub sweep: SweepSettings,
}

impl Default for ParsedConfig {
    fn default() -> Self {
        ParsedConfig {
            problem: ProblemSettings {
                loss: LossKind::Zero,
                constraint: ConstraintKind::Equality,
                group_size: 1,
                penalty: PenaltyKind::Lpn { p: 0.1 },
                mode: Mode::AbsoluteValue,
            },
            air: AirConfig::default(),
            sweep: SweepSettings::default(),
        }
    }
}

struct RawEntry {
    value: String,
    line: usize,
    used: bool,
}

struct Document {
    origin: String,
    entries: Vec<(String, RawEntry)>,
}

fn config_err(key: &str, line: usize, detail: &str) -> AirError {
    AirError::Config {
        message: format!("key `{key}` (line {line}): {detail}"),
    }
}

impl Document {
    fn parse(text: &str, origin: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut entries: Vec<(String, RawEntry)> = Vec::new();
        let mut section_seen: BTreeSet<String> = BTreeSet::new();
        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| AirError::Parse {
                    path: origin.to_string(),
                    line: line_no,
                    message: "section header is missing `]`".into(),
                })?;
                if !SECTIONS.contains(&name) {
                    return Err(AirError::Config {
                        message: format!(
                            "unknown section `[{name}]` (line {line_no}); expected one of \
                             [problem], [penalty], [air], [solver], [sweep]"
                        ),
                    });
                }
                section_seen.insert(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| AirError::Parse {
                path: origin.to_string(),
                line: line_no,
                message: "expected `key = value`".into(),
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(AirError::Parse {
                    path: origin.to_string(),
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(config_err(&key, line_no, "duplicate key"));
            }
            entries.push((
                key,
                RawEntry {
                    value,
                    line: line_no,
                    used: false,
                },
            ));
        }
        for (key, value) in overrides {
            if let Some((_, entry)) = entries.iter_mut().find(|(k, _)| k == key) {
                entry.value = value.clone();
                entry.line = 0;
            } else {
                entries.push((
                    key.clone(),
                    RawEntry {
                        value: value.clone(),
                        line: 0,
                        used: false,
                    },
                ));
            }
        }
        Ok(Document {
            origin: origin.to_string(),
            entries,
        })
    }

    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries
            .iter_mut()
            .find(|(k, _)| k == key)
            .map(|(_, entry)| {
                entry.used = true;
                (entry.value.clone(), entry.line)
            })
    }

    fn take_parsed<T: std::str::FromStr>(
        &mut self,
        key: &str,
        default: T,
        kind: &str,
    ) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((value, line)) => value
                .parse::<T>()
                .map_err(|_| config_err(key, line, &format!("`{value}` is not {kind}"))),
        }
    }

    fn take_f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.take_parsed(key, default, "a number")
    }

    fn take_usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.take_parsed(key, default, "a nonnegative integer")
    }

    fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some((value, line)) => match value.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                other => Err(config_err(
                    key,
                    line,
                    &format!("`{other}` is not true/false"),
                )),
            },
        }
    }

    fn finish(self) -> Result<()> {
        for (key, entry) in &self.entries {
            if !entry.used {
                return Err(config_err(
                    key,
                    entry.line,
                    "unknown key for this configuration",
                ));
            }
        }
        let _ = self.origin;
        Ok(())
    }
}

/// Parse a configuration document, apply `key=value` overrides, validate
/// every field, and fill defaults for absent keys.
pub fn parse_config(
    text: &str,
    origin: &str,
    overrides: &[(String, String)],
) -> Result<ParsedConfig> {
    let mut doc = Document::parse(text, origin, overrides)?;
    let defaults = ParsedConfig::default();

    let loss = match doc.take("loss") {
        None => defaults.problem.loss,
        Some((value, line)) => match value.as_str() {
            "zero" => LossKind::Zero,
            "least-squares" => LossKind::LeastSquares,
            other => {
                return Err(config_err(
                    "loss",
                    line,
                    &format!("`{other}` is not one of zero, least-squares"),
                ))
            }
        },
    };
    let constraint_name = match doc.take("constraint") {
        None => defaults.problem.constraint.name().to_string(),
        Some((value, _)) => value,
    };
    let lower = doc.take_f64("lower", 0.0)?;
    let upper = doc.take_f64("upper", 1.0)?;
    let constraint = match constraint_name.as_str() {
        "free" => ConstraintKind::Free,
        "equality" => ConstraintKind::Equality,
        "nonneg" => ConstraintKind::NonNegative,
        "box" => {
            if lower > upper {
                return Err(config_err(
                    "lower",
                    0,
                    &format!("box bounds need lower <= upper, got {lower} > {upper}"),
                ));
            }
            ConstraintKind::Box { lower, upper }
        }
        other => {
            return Err(config_err(
                "constraint",
                0,
                &format!("`{other}` is not one of free, equality, nonneg, box"),
            ))
        }
    };
    let group_size = doc.take_usize("group_size", defaults.problem.group_size)?;
    if group_size == 0 {
        return Err(config_err("group_size", 0, "must be positive"));
    }

    let penalty_name = match doc.take("penalty") {
        None => defaults.problem.penalty.name().to_string(),
        Some((value, _)) => value,
    };
    let p = doc.take("p");
    let lambda = doc.take("lambda");
    let a = doc.take("a");
    let parse_num = |slot: &Option<(String, usize)>, key: &str, default: f64| -> Result<f64> {
        match slot {
            None => Ok(default),
            Some((value, line)) => value
                .parse::<f64>()
                .map_err(|_| config_err(key, *line, &format!("`{value}` is not a number"))),
        }
    };
    let penalty = match penalty_name.as_str() {
        "exp" | "lpn" | "log" | "fra" | "tan" => {
            if let Some((_, line)) = lambda {
                return Err(config_err(
                    "lambda",
                    line,
                    "only applies to the scad and mcp penalties",
                ));
            }
            if let Some((_, line)) = a {
                return Err(config_err(
                    "a",
                    line,
                    "only applies to the scad and mcp penalties",
                ));
            }
            let p = parse_num(&p, "p", 0.1)?;
            match penalty_name.as_str() {
                "exp" => PenaltyKind::Exp { p },
                "lpn" => PenaltyKind::Lpn { p },
                "log" => PenaltyKind::Log { p },
                "fra" => PenaltyKind::Fra { p },
                _ => PenaltyKind::Tan { p },
            }
        }
        "scad" | "mcp" => {
            if let Some((_, line)) = p {
                return Err(config_err(
                    "p",
                    line,
                    "does not apply to the scad and mcp penalties",
                ));
            }
            let lambda = parse_num(&lambda, "lambda", 1.0)?;
            if penalty_name == "scad" {
                let a = parse_num(&a, "a", 3.7)?;
                PenaltyKind::Scad { lambda, a }
            } else {
                let a = parse_num(&a, "a", 3.0)?;
                PenaltyKind::Mcp { lambda, a }
            }
        }
        other => {
            return Err(config_err(
                "penalty",
                0,
                &format!("`{other}` is not one of exp, lpn, log, fra, tan, scad, mcp"),
            ))
        }
    };
    penalty.validate()?;

    let mode = match doc.take("mode") {
        None => defaults.problem.mode,
        Some((value, line)) => match value.as_str() {
            "l1" => Mode::AbsoluteValue,
            "l2" => Mode::Square,
            other => {
                return Err(config_err(
                    "mode",
                    line,
                    &format!("`{other}` is not one of l1, l2"),
                ))
            }
        },
    };

    let step_shrink = doc.take_f64("step_shrink", 0.5)?;
    let step_rule = match doc.take("step_rule") {
        None => StepRule::Backtracking {
            shrink: step_shrink,
        },
        Some((value, line)) => match value.as_str() {
            "backtracking" => StepRule::Backtracking {
                shrink: step_shrink,
            },
            "lipschitz" => StepRule::FixedFromLipschitz,
            other => {
                return Err(config_err(
                    "step_rule",
                    line,
                    &format!("`{other}` is not one of backtracking, lipschitz"),
                ))
            }
        },
    };
    let solver = SolverOptions {
        max_inner_iter: doc.take_usize("max_inner_iter", defaults.air.solver.max_inner_iter)?,
        primal_tol: doc.take_f64("primal_tol", defaults.air.solver.primal_tol)?,
        dual_tol: doc.take_f64("dual_tol", defaults.air.solver.dual_tol)?,
        admm_rho: doc.take_f64("admm_rho", defaults.air.solver.admm_rho)?,
        step_rule,
    };
    solver.validate()?;

    let air = AirConfig {
        eps0: doc.take_f64("eps0", defaults.air.eps0)?,
        decay: doc.take_f64("eps_decay", defaults.air.decay)?,
        floor: doc.take_f64("eps_floor", defaults.air.floor)?,
        outer_tol: doc.take_f64("outer_tol", defaults.air.outer_tol)?,
        max_outer: doc.take_usize("max_outer_iter", defaults.air.max_outer)?,
        weight_floor: doc.take_f64("weight_floor", defaults.air.weight_floor)?,
        assert_descent: doc.take_bool("assert_descent", defaults.air.assert_descent)?,
        strict_guard: doc.take_bool("strict_guard", defaults.air.strict_guard)?,
        solver,
    };
    air.validate()?;

    let s_values = match doc.take("s_values") {
        None => defaults.sweep.s_values.clone(),
        Some((value, line)) => value
            .split(',')
            .map(|t| {
                t.trim().parse::<usize>().map_err(|_| {
                    config_err(
                        "s_values",
                        line,
                        &format!("`{}` is not an integer", t.trim()),
                    )
                })
            })
            .collect::<Result<_>>()?,
    };
    let algorithms = match doc.take("algorithms") {
        None => defaults.sweep.algorithms.clone(),
        Some((value, line)) => value
            .split(',')
            .map(|t| {
                Algorithm::parse(t).map_err(|_| {
                    config_err(
                        "algorithms",
                        line,
                        &format!("`{}` is not one of l1, air-l1, air-l2", t.trim()),
                    )
                })
            })
            .collect::<Result<_>>()?,
    };
    let seed = match doc.take("seed") {
        None => None,
        Some((value, line)) => Some(value.parse::<u64>().map_err(|_| {
            config_err("seed", line, &format!("`{value}` is not a 64-bit integer"))
        })?),
    };
    let sweep = SweepSettings {
        n: doc.take_usize("n", defaults.sweep.n)?,
        m: doc.take_usize("m", defaults.sweep.m)?,
        s_values,
        trials: doc.take_usize("trials", defaults.sweep.trials)?,
        seed,
        success_tol: doc.take_f64("success_tol", defaults.sweep.success_tol)?,
        algorithms,
        group_size: doc.take_usize("sweep_group_size", defaults.sweep.group_size)?,
        record_timing: doc.take_bool("record_timing", defaults.sweep.record_timing)?,
        full_grid: doc.take_bool("full_grid", defaults.sweep.full_grid)?,
    };

    doc.finish()?;
    Ok(ParsedConfig {
        problem: ProblemSettings {
            loss,
            constraint,
            group_size,
            penalty,
            mode,
        },
        air,
        sweep,
    })
}

fn push_line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    writeln!(out, "{key} = {value}").unwrap();
}

/// Render every effective value, defaults included, as a parseable document.
pub fn render(config: &ParsedConfig) -> String {
    let mut out = String::new();
    out.push_str("[problem]\n");
    push_line(&mut out, "loss", config.problem.loss.name());
    push_line(&mut out, "constraint", config.problem.constraint.name());
    if let ConstraintKind::Box { lower, upper } = config.problem.constraint {
        push_line(&mut out, "lower", lower);
        push_line(&mut out, "upper", upper);
    }
    push_line(&mut out, "group_size", config.problem.group_size);

    out.push_str("\n[penalty]\n");
    push_line(&mut out, "penalty", config.problem.penalty.name());
    match config.problem.penalty {
        PenaltyKind::Exp { p }
        | PenaltyKind::Lpn { p }
        | PenaltyKind::Log { p }
        | PenaltyKind::Fra { p }
        | PenaltyKind::Tan { p } => push_line(&mut out, "p", p),
        PenaltyKind::Scad { lambda, a } | PenaltyKind::Mcp { lambda, a } => {
            push_line(&mut out, "lambda", lambda);
            push_line(&mut out, "a", a);
        }
    }
    push_line(
        &mut out,
        "mode",
        match config.problem.mode {
            Mode::AbsoluteValue => "l1",
            Mode::Square => "l2",
        },
    );

    out.push_str("\n[air]\n");
    push_line(&mut out, "eps0", config.air.eps0);
    push_line(&mut out, "eps_decay", config.air.decay);
    push_line(&mut out, "eps_floor", config.air.floor);
    push_line(&mut out, "outer_tol", config.air.outer_tol);
    push_line(&mut out, "max_outer_iter", config.air.max_outer);
    push_line(&mut out, "weight_floor", config.air.weight_floor);
    push_line(&mut out, "assert_descent", config.air.assert_descent);
    push_line(&mut out, "strict_guard", config.air.strict_guard);

    out.push_str("\n[solver]\n");
    push_line(&mut out, "max_inner_iter", config.air.solver.max_inner_iter);
    push_line(&mut out, "primal_tol", config.air.solver.primal_tol);
    push_line(&mut out, "dual_tol", config.air.solver.dual_tol);
    push_line(&mut out, "admm_rho", config.air.solver.admm_rho);
    match config.air.solver.step_rule {
        StepRule::Backtracking { shrink } => {
            push_line(&mut out, "step_rule", "backtracking");
            push_line(&mut out, "step_shrink", shrink);
        }
        StepRule::FixedFromLipschitz => push_line(&mut out, "step_rule", "lipschitz"),
    }

    out.push_str("\n[sweep]\n");
    push_line(&mut out, "n", config.sweep.n);
    push_line(&mut out, "m", config.sweep.m);
    let s_list: Vec<String> = config
        .sweep
        .s_values
        .iter()
        .map(|s| s.to_string())
        .collect();
    push_line(&mut out, "s_values", s_list.join(","));
    push_line(&mut out, "trials", config.sweep.trials);
    if let Some(seed) = config.sweep.seed {
        push_line(&mut out, "seed", seed);
    }
    push_line(&mut out, "success_tol", config.sweep.success_tol);
    let alg_list: Vec<&str> = config.sweep.algorithms.iter().map(|a| a.name()).collect();
    push_line(&mut out, "algorithms", alg_list.join(","));
    push_line(&mut out, "sweep_group_size", config.sweep.group_size);
    push_line(&mut out, "record_timing", config.sweep.record_timing);
    push_line(&mut out, "full_grid", config.sweep.full_grid);
    out
}
