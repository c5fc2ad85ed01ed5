//! Sparsity-inducing penalty catalog and the reweighting rule.
//!
//! Every penalty is a concave nondecreasing function `r` on the nonnegative
//! reals with `r(0) = 0`. The catalog covers `exp`, `lpn`, `log`, `fra`,
//! `tan`, `scad`, and `mcp`. A penalty is applied to a group magnitude
//! either directly (`Mode::AbsoluteValue`, magnitude is a 2-norm) or through
//! a square root (`Mode::Square`, magnitude is a squared 2-norm), and the
//! derivative of the smoothed composition supplies the subproblem weights.

use crate::error::{AirError, Result};

/// How a group magnitude enters the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Penalize `r(‖x_i‖₂)`; the convex subproblem carries weighted norms.
    AbsoluteValue,
    /// Penalize `r(√(‖x_i‖₂²))`; the convex subproblem carries weighted squares.
    Square,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::AbsoluteValue => "l1",
            Mode::Square => "l2",
        }
    }
}

/// A real value extended with positive infinity, for one-sided derivative limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    PosInfinity,
}

impl ExtendedReal {
    pub fn is_finite(&self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    /// Collapse to `f64`, mapping `PosInfinity` to `f64::INFINITY`.
    pub fn as_f64(&self) -> f64 {
        match self {
            ExtendedReal::Finite(v) => *v,
            ExtendedReal::PosInfinity => f64::INFINITY,
        }
    }
}

/// Penalty family together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyKind {
    /// `1 - exp(-p c)`, `p > 0`.
    Exp { p: f64 },
    /// `c^p`, `0 < p < 1`.
    Lpn { p: f64 },
    /// `log(1 + p c)`, `p > 0`.
    Log { p: f64 },
    /// `c / (c + p)`, `p > 0`.
    Fra { p: f64 },
    /// `atan(p c)`, `p > 0`.
    Tan { p: f64 },
    /// Smoothly clipped absolute deviation with slope `lambda` near zero, `a > 2`.
    Scad { lambda: f64, a: f64 },
    /// Minimax concave penalty with slope `lambda` near zero, `a >= 1`.
    Mcp { lambda: f64, a: f64 },
}

impl PenaltyKind {
    /// Catalog tag used by configuration files.
    pub fn name(&self) -> &'static str {
        match self {
            PenaltyKind::Exp { .. } => "exp",
            PenaltyKind::Lpn { .. } => "lpn",
            PenaltyKind::Log { .. } => "log",
            PenaltyKind::Fra { .. } => "fra",
            PenaltyKind::Tan { .. } => "tan",
            PenaltyKind::Scad { .. } => "scad",
            PenaltyKind::Mcp { .. } => "mcp",
        }
    }

    /// Check the parameter ranges.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(AirError::InvalidParameter {
                    name,
                    value,
                    constraint: "> 0",
                })
            }
        };
        match *self {
            PenaltyKind::Exp { p }
            | PenaltyKind::Log { p }
            | PenaltyKind::Fra { p }
            | PenaltyKind::Tan { p } => positive("p", p),
            PenaltyKind::Lpn { p } => {
                if p > 0.0 && p < 1.0 {
                    Ok(())
                } else {
                    Err(AirError::InvalidParameter {
                        name: "p",
                        value: p,
                        constraint: "0 < p < 1",
                    })
                }
            }
            PenaltyKind::Scad { lambda, a } => {
                positive("lambda", lambda)?;
                if a > 2.0 && a.is_finite() {
                    Ok(())
                } else {
                    Err(AirError::InvalidParameter {
                        name: "a",
                        value: a,
                        constraint: "> 2",
                    })
                }
            }
            PenaltyKind::Mcp { lambda, a } => {
                positive("lambda", lambda)?;
                if a >= 1.0 && a.is_finite() {
                    Ok(())
                } else {
                    Err(AirError::InvalidParameter {
                        name: "a",
                        value: a,
                        constraint: ">= 1",
                    })
                }
            }
        }
    }

    /// Penalty value `r(c)` for `c >= 0`.
    pub fn r_value(&self, c: f64) -> f64 {
        debug_assert!(c >= 0.0, "penalty argument must be nonnegative");
        match *self {
            PenaltyKind::Exp { p } => 1.0 - (-p * c).exp(),
            PenaltyKind::Lpn { p } => c.powf(p),
            PenaltyKind::Log { p } => (1.0 + p * c).ln(),
            PenaltyKind::Fra { p } => c / (c + p),
            PenaltyKind::Tan { p } => (p * c).atan(),
            PenaltyKind::Scad { lambda, a } => {
                if c <= lambda {
                    lambda * c
                } else if c <= a * lambda {
                    (2.0 * a * lambda * c - c * c - lambda * lambda) / (2.0 * (a - 1.0))
                } else {
                    lambda * lambda * (a + 1.0) / 2.0
                }
            }
            PenaltyKind::Mcp { lambda, a } => {
                if c <= a * lambda {
                    lambda * c - c * c / (2.0 * a)
                } else {
                    a * lambda * lambda / 2.0
                }
            }
        }
    }

    /// Right derivative `r'(c)` for `c >= 0`; `+inf` for `lpn` at `c = 0`.
    pub fn r_prime(&self, c: f64) -> f64 {
        debug_assert!(c >= 0.0, "penalty argument must be nonnegative");
        match *self {
            PenaltyKind::Exp { p } => p * (-p * c).exp(),
            PenaltyKind::Lpn { p } => {
                if c == 0.0 {
                    f64::INFINITY
                } else {
                    p * c.powf(p - 1.0)
                }
            }
            PenaltyKind::Log { p } => p / (1.0 + p * c),
            PenaltyKind::Fra { p } => p / ((c + p) * (c + p)),
            PenaltyKind::Tan { p } => p / (1.0 + p * p * c * c),
            PenaltyKind::Scad { lambda, a } => {
                if c <= lambda {
                    lambda
                } else {
                    (a * lambda - c).max(0.0) / (a - 1.0)
                }
            }
            PenaltyKind::Mcp { lambda, a } => (a * lambda - c).max(0.0) / a,
        }
    }

    /// One-sided derivative limit `r'(0+)`.
    pub fn r_prime_at_zero_limit(&self) -> ExtendedReal {
        match *self {
            PenaltyKind::Exp { p } => ExtendedReal::Finite(p),
            PenaltyKind::Lpn { .. } => ExtendedReal::PosInfinity,
            PenaltyKind::Log { p } => ExtendedReal::Finite(p),
            PenaltyKind::Fra { p } => ExtendedReal::Finite(1.0 / p),
            PenaltyKind::Tan { p } => ExtendedReal::Finite(p),
            PenaltyKind::Scad { lambda, .. } => ExtendedReal::Finite(lambda),
            PenaltyKind::Mcp { lambda, .. } => ExtendedReal::Finite(lambda),
        }
    }

    /// Finite limit of `r` at infinity when the penalty is bounded.
    pub fn plateau(&self) -> Option<f64> {
        match *self {
            PenaltyKind::Exp { .. } | PenaltyKind::Fra { .. } => Some(1.0),
            PenaltyKind::Tan { .. } => Some(std::f64::consts::FRAC_PI_2),
            PenaltyKind::Scad { lambda, a } => Some(lambda * lambda * (a + 1.0) / 2.0),
            PenaltyKind::Mcp { lambda, a } => Some(a * lambda * lambda / 2.0),
            PenaltyKind::Lpn { .. } | PenaltyKind::Log { .. } => None,
        }
    }

    /// Whether `r(c)` grows without bound as `c` grows.
    pub fn is_coercive(&self) -> bool {
        self.plateau().is_none()
    }

    /// Penalty value in the framing of `mode`: `r(c)` or `r(√c)`.
    pub fn mode_value(&self, mode: Mode, c: f64) -> f64 {
        debug_assert!(c >= 0.0, "penalty argument must be nonnegative");
        match mode {
            Mode::AbsoluteValue => self.r_value(c),
            Mode::Square => self.r_value(c.sqrt()),
        }
    }

    /// Subproblem weight at smoothed magnitude `c + eps` in the given `mode`.
    ///
    /// `AbsoluteValue` produces `r'(c + eps)`, `Square` produces
    /// `r'(√(c + eps)) / (2 √(c + eps))`. The smoothed magnitude must stay
    /// strictly positive whenever the derivative blows up at the origin.
    pub fn weight(&self, mode: Mode, c: f64, eps: f64) -> Result<f64> {
        if c < 0.0 || !c.is_finite() {
            return Err(AirError::InvalidParameter {
                name: "c",
                value: c,
                constraint: ">= 0 and finite",
            });
        }
        if eps < 0.0 || !eps.is_finite() {
            return Err(AirError::InvalidParameter {
                name: "eps",
                value: eps,
                constraint: ">= 0 and finite",
            });
        }
        if matches!(self, PenaltyKind::Lpn { .. }) && eps == 0.0 {
            return Err(AirError::EpsilonDomain {
                kind: self.name(),
                eps,
                reason: "the derivative is unbounded at zero, so eps must be positive",
            });
        }
        match mode {
            Mode::AbsoluteValue => Ok(self.r_prime(c + eps)),
            Mode::Square => {
                let t = (c + eps).sqrt();
                if t == 0.0 {
                    return Err(AirError::EpsilonDomain {
                        kind: self.name(),
                        eps,
                        reason: "square mode requires c + eps > 0 to keep the weight bounded",
                    });
                }
                Ok(self.r_prime(t) / (2.0 * t))
            }
        }
    }
}
