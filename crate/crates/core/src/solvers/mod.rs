//! Convex subproblem solvers and their optimality diagnostics.
//!
//! Every outer iteration minimizes a weighted surrogate
//! `G(x) = f(x) + Σᵢ wᵢ cᵢ(xᵢ)` over the constraint set. Three routes cover
//! the supported combinations:
//!
//! - a closed-form solve for weighted squared norms under linear equality,
//! - ADMM for weighted (group) norms under linear equality,
//! - proximal gradient for separable sets and the Euclidean ball.
//!
//! [`kkt_residual`] measures the distance from zero to the subgradient of `G`
//! plus the normal cone at a point, which is the exit certificate shared by
//! all routes.

mod admm;
mod equality;
mod prox;
mod stationarity;

pub use equality::solve_weighted_l2_equality;
pub(crate) use equality::EqualityGeometry;
pub use stationarity::kkt_residual;
pub(crate) use stationarity::optimality_system_residual;

use nalgebra::DVector;

use crate::error::{AirError, Result};
use crate::model::{ConstraintSet, GroupStructure, SmoothLoss};
use crate::penalties::Mode;

/// Step size policy for the proximal gradient route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Constant step `1 / L` from the gradient Lipschitz constant.
    FixedFromLipschitz,
    /// Halving line search enforcing the quadratic upper bound.
    Backtracking { shrink: f64 },
}

/// Tolerances and iteration limits shared by all subproblem routes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_inner_iter: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub admm_rho: f64,
    pub step_rule: StepRule,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_inner_iter: 5000,
            primal_tol: 1e-8,
            dual_tol: 1e-8,
            admm_rho: 1.0,
            step_rule: StepRule::Backtracking { shrink: 0.5 },
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_inner_iter == 0 {
            return Err(AirError::InvalidParameter {
                name: "max_inner_iter",
                value: 0.0,
                constraint: ">= 1",
            });
        }
        for (name, value) in [
            ("primal_tol", self.primal_tol),
            ("dual_tol", self.dual_tol),
            ("admm_rho", self.admm_rho),
        ] {
            if !value.is_finite() || value <= 0.0 {
                return Err(AirError::InvalidParameter {
                    name,
                    value,
                    constraint: "> 0",
                });
            }
        }
        if let StepRule::Backtracking { shrink } = self.step_rule {
            if !(shrink > 0.0 && shrink < 1.0) {
                return Err(AirError::InvalidParameter {
                    name: "backtrack_shrink",
                    value: shrink,
                    constraint: "in (0, 1)",
                });
            }
        }
        Ok(())
    }
}

/// One weighted convex subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemSpec<'a> {
    pub loss: &'a SmoothLoss,
    pub weights: &'a [f64],
    pub mode: Mode,
    pub groups: &'a GroupStructure,
    pub constraint: &'a ConstraintSet,
}

impl<'a> SubproblemSpec<'a> {
    pub fn new(
        loss: &'a SmoothLoss,
        weights: &'a [f64],
        mode: Mode,
        groups: &'a GroupStructure,
        constraint: &'a ConstraintSet,
    ) -> Result<Self> {
        if weights.len() != groups.num_groups() {
            return Err(AirError::DimensionMismatch {
                context: "subproblem weights",
                expected: groups.num_groups(),
                found: weights.len(),
            });
        }
        if let Some(&bad) = weights.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(AirError::InvalidParameter {
                name: "weights",
                value: bad,
                constraint: "> 0 and finite",
            });
        }
        Ok(SubproblemSpec {
            loss,
            weights,
            mode,
            groups,
            constraint,
        })
    }

    pub fn dim(&self) -> usize {
        self.groups.dim()
    }

    /// Surrogate value `f(x) + Σᵢ wᵢ cᵢ(x)` without the constraint indicator.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let mut total = self.loss.value(x);
        for (i, range) in self.groups.iter().enumerate() {
            let norm = x.rows(range.start, range.end - range.start).norm();
            total += self.weights[i]
                * match self.mode {
                    Mode::AbsoluteValue => norm,
                    Mode::Square => norm * norm,
                };
        }
        total
    }
}

/// Internal ADMM iterate carried across warm-started solves.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub(crate) z: DVector<f64>,
    pub(crate) u: DVector<f64>,
    pub(crate) rho: f64,
}

/// Solver output with the exit certificate.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub kkt_residual: f64,
    pub(crate) admm_state: Option<AdmmState>,
}

/// Dispatch a subproblem to the route matching its constraint and framing.
pub fn solve_subproblem(
    spec: &SubproblemSpec,
    opts: &SolverOptions,
    warm: Option<&SubproblemSolution>,
) -> Result<SubproblemSolution> {
    let geometry = match spec.constraint {
        ConstraintSet::LinearEquality { a, b } => Some(EqualityGeometry::new(a, b)?),
        _ => None,
    };
    solve_subproblem_with(spec, opts, warm, geometry.as_ref())
}

/// Dispatch with a prebuilt equality factorization, reused across iterations.
pub(crate) fn solve_subproblem_with(
    spec: &SubproblemSpec,
    opts: &SolverOptions,
    warm: Option<&SubproblemSolution>,
    geometry: Option<&EqualityGeometry>,
) -> Result<SubproblemSolution> {
    opts.validate()?;
    match spec.constraint {
        ConstraintSet::LinearEquality { .. } => {
            let geom = geometry.expect("equality geometry must be prepared");
            match spec.mode {
                Mode::Square => equality::solve_quadratic_equality(spec, opts, geom),
                Mode::AbsoluteValue => admm::solve(spec, opts, geom, warm),
            }
        }
        _ => prox::solve(spec, opts, warm.map(|w| &w.x)),
    }
}

/// Weighted (group) 1-norm minimization under `Ax = b` with zero loss.
pub fn solve_weighted_l1_equality(
    a: &nalgebra::DMatrix<f64>,
    b: &DVector<f64>,
    weights: &[f64],
    groups: &GroupStructure,
    opts: &SolverOptions,
) -> Result<SubproblemSolution> {
    let constraint = ConstraintSet::LinearEquality {
        a: a.clone(),
        b: b.clone(),
    };
    let loss = SmoothLoss::Zero;
    let spec = SubproblemSpec::new(&loss, weights, Mode::AbsoluteValue, groups, &constraint)?;
    solve_subproblem(&spec, opts, None)
}

/// Proximal gradient for separable constraint sets and the Euclidean ball.
pub fn solve_prox_subproblem(
    spec: &SubproblemSpec,
    opts: &SolverOptions,
    x0: Option<&DVector<f64>>,
) -> Result<SubproblemSolution> {
    opts.validate()?;
    if matches!(spec.constraint, ConstraintSet::LinearEquality { .. }) {
        return Err(AirError::Config {
            message: "proximal route does not handle linear equality constraints".into(),
        });
    }
    prox::solve(spec, opts, x0)
}

/// Euclidean projection onto the constraint set.
pub fn project(constraint: &ConstraintSet, v: &DVector<f64>) -> Result<DVector<f64>> {
    match constraint {
        ConstraintSet::Free => Ok(v.clone()),
        ConstraintSet::NonNegative => Ok(v.map(|t| t.max(0.0))),
        ConstraintSet::Box { lo, hi } => {
            if lo.len() != v.len() {
                return Err(AirError::DimensionMismatch {
                    context: "projection point",
                    expected: lo.len(),
                    found: v.len(),
                });
            }
            Ok(DVector::from_fn(v.len(), |j, _| v[j].clamp(lo[j], hi[j])))
        }
        ConstraintSet::LinearEquality { a, b } => {
            let geom = EqualityGeometry::new(a, b)?;
            Ok(geom.project_affine(v))
        }
        ConstraintSet::L2Ball { center, radius } => {
            if center.len() != v.len() {
                return Err(AirError::DimensionMismatch {
                    context: "projection point",
                    expected: center.len(),
                    found: v.len(),
                });
            }
            let d = v - center;
            let norm = d.norm();
            if norm <= *radius {
                Ok(v.clone())
            } else {
                Ok(center + d * (*radius / norm))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn projections_match_closed_forms() {
        let v = DVector::from_row_slice(&[3.0, -4.0]);

        let free = project(&ConstraintSet::Free, &v).unwrap();
        assert_eq!(free, v);

        let nonneg = project(&ConstraintSet::NonNegative, &v).unwrap();
        assert_eq!(nonneg, DVector::from_row_slice(&[3.0, 0.0]));

        let boxed = project(
            &ConstraintSet::Box {
                lo: DVector::from_row_slice(&[-1.0, -1.0]),
                hi: DVector::from_row_slice(&[1.0, 1.0]),
            },
            &v,
        )
        .unwrap();
        assert_eq!(boxed, DVector::from_row_slice(&[1.0, -1.0]));

        let ball = project(
            &ConstraintSet::L2Ball {
                center: DVector::zeros(2),
                radius: 1.0,
            },
            &v,
        )
        .unwrap();
        assert_relative_eq!(ball[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(ball[1], -0.8, epsilon = 1e-12);

        let affine = project(
            &ConstraintSet::LinearEquality {
                a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
                b: DVector::from_element(1, 1.0),
            },
            &v,
        )
        .unwrap();
        assert_relative_eq!(affine[0], 4.0, epsilon = 1e-10);
        assert_relative_eq!(affine[1], -3.0, epsilon = 1e-10);
    }

    #[test]
    fn dispatch_rejects_mismatched_weights() {
        let loss = SmoothLoss::Zero;
        let groups = GroupStructure::singletons(2);
        let constraint = ConstraintSet::Free;
        let err = SubproblemSpec::new(&loss, &[1.0], Mode::AbsoluteValue, &groups, &constraint)
            .unwrap_err();
        assert!(matches!(err, AirError::DimensionMismatch { .. }));
        let err2 = SubproblemSpec::new(
            &loss,
            &[1.0, -1.0],
            Mode::AbsoluteValue,
            &groups,
            &constraint,
        )
        .unwrap_err();
        assert!(matches!(err2, AirError::InvalidParameter { .. }));
    }

    #[test]
    fn prox_route_rejects_equality_sets() {
        let loss = SmoothLoss::Zero;
        let groups = GroupStructure::singletons(2);
        let constraint = ConstraintSet::LinearEquality {
            a: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            b: DVector::from_element(1, 1.0),
        };
        let spec = SubproblemSpec::new(
            &loss,
            &[1.0, 1.0],
            Mode::AbsoluteValue,
            &groups,
            &constraint,
        )
        .unwrap();
        let err = solve_prox_subproblem(&spec, &SolverOptions::default(), None).unwrap_err();
        assert!(matches!(err, AirError::Config { .. }));
    }

    #[test]
    fn options_validation_rejects_bad_values() {
        let opts = SolverOptions {
            primal_tol: 0.0,
            ..Default::default()
        };
        assert!(opts.validate().is_err());
        let opts2 = SolverOptions {
            step_rule: StepRule::Backtracking { shrink: 1.0 },
            ..Default::default()
        };
        assert!(opts2.validate().is_err());
        assert!(SolverOptions::default().validate().is_ok());
    }
}
