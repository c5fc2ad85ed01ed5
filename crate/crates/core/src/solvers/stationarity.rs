//! First-order optimality residuals.
//!
//! A point is stationary when zero lies in the sum of the smooth gradient,
//! the subdifferentials of the weighted norm terms, and the normal cone of
//! the constraint set. At groups where the iterate vanishes the norm
//! subdifferential is a Euclidean ball, so the residual is the distance
//!
//! `min ‖base + Σ zᵢ − ν‖  over  ‖zᵢ‖ ≤ ρᵢ, ν in the normal cone`,
//!
//! computed by projected gradient with momentum on the ball variables after
//! eliminating the normal cone in closed form.

use std::ops::Range;

use nalgebra::DVector;

use crate::error::{AirError, Result};
use crate::model::{ConstraintSet, EpsilonVector, ProblemSpec, FEASIBILITY_TOL};
use crate::penalties::{ExtendedReal, Mode};

use super::equality::EqualityGeometry;
use super::SubproblemSpec;

const DIST_MAX_ITER: usize = 2000;
const DIST_STEP_TOL: f64 = 1e-12;
const INFEASIBILITY_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
enum CoordCone {
    Inactive,
    AtLower,
    AtUpper,
    Pinned,
}

/// Normal cone of the constraint set at a fixed point, in a form that admits
/// a closed-form residual map `v ↦ min_{ν ∈ N} (v − ν)` restricted to the
/// minimizing `ν` for each coordinate of the search.
enum ConeAtPoint<'g> {
    Everything,
    Separable(Vec<CoordCone>),
    RowSpace(&'g EqualityGeometry),
    Ray(DVector<f64>),
    WholeSpace,
}

fn cone_at_point<'g>(
    constraint: &ConstraintSet,
    x: &DVector<f64>,
    geometry: Option<&'g EqualityGeometry>,
) -> ConeAtPoint<'g> {
    let atol = FEASIBILITY_TOL * (1.0 + x.norm());
    match constraint {
        ConstraintSet::Free => ConeAtPoint::Everything,
        ConstraintSet::NonNegative => {
            let kinds = x
                .iter()
                .map(|&v| {
                    if v <= atol {
                        CoordCone::AtLower
                    } else {
                        CoordCone::Inactive
                    }
                })
                .collect();
            ConeAtPoint::Separable(kinds)
        }
        ConstraintSet::Box { lo, hi } => {
            let kinds = (0..x.len())
                .map(|j| {
                    let at_lo = x[j] - lo[j] <= atol;
                    let at_hi = hi[j] - x[j] <= atol;
                    match (at_lo, at_hi) {
                        (true, true) => CoordCone::Pinned,
                        (true, false) => CoordCone::AtLower,
                        (false, true) => CoordCone::AtUpper,
                        (false, false) => CoordCone::Inactive,
                    }
                })
                .collect();
            ConeAtPoint::Separable(kinds)
        }
        ConstraintSet::LinearEquality { .. } => ConeAtPoint::RowSpace(
            geometry.expect("equality geometry must accompany equality constraints"),
        ),
        ConstraintSet::L2Ball { center, radius } => {
            let d = x - center;
            let norm = d.norm();
            if *radius <= atol {
                ConeAtPoint::WholeSpace
            } else if radius - norm <= atol {
                ConeAtPoint::Ray(d / norm)
            } else {
                ConeAtPoint::Everything
            }
        }
    }
}

/// Residual of `v` against the normal cone: the closest vector `v − ν` over
/// `ν ∈ N`, available in closed form for every supported set.
fn cone_reduce(cone: &ConeAtPoint, v: &DVector<f64>) -> DVector<f64> {
    match cone {
        ConeAtPoint::Everything => v.clone(),
        ConeAtPoint::Separable(kinds) => DVector::from_fn(v.len(), |j, _| match kinds[j] {
            CoordCone::Inactive => v[j],
            CoordCone::AtLower => v[j].min(0.0),
            CoordCone::AtUpper => v[j].max(0.0),
            CoordCone::Pinned => 0.0,
        }),
        ConeAtPoint::RowSpace(geometry) => geometry.project_nullspace(v),
        ConeAtPoint::Ray(d) => {
            let t = v.dot(d);
            if t < 0.0 {
                v - d * t
            } else {
                v.clone()
            }
        }
        ConeAtPoint::WholeSpace => DVector::zeros(v.len()),
    }
}

/// The distance minimization over ball-valued subgradients and the normal
/// cone. `base` collects all fixed terms; each entry of `balls` is a group
/// coordinate range with its ball radius (infinite radii collapse the
/// residual on those coordinates).
pub(crate) struct BallSystem<'g> {
    base: DVector<f64>,
    balls: Vec<(Range<usize>, f64)>,
    cone: ConeAtPoint<'g>,
}

impl<'g> BallSystem<'g> {
    fn scatter(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut v = self.base.clone();
        let mut offset = 0;
        for (range, _) in &self.balls {
            for j in range.clone() {
                v[j] += z[offset];
                offset += 1;
            }
        }
        v
    }

    fn gather(&self, v: &DVector<f64>) -> DVector<f64> {
        let len: usize = self.balls.iter().map(|(r, _)| r.end - r.start).sum();
        let mut z = DVector::zeros(len);
        let mut offset = 0;
        for (range, _) in &self.balls {
            for j in range.clone() {
                z[offset] = v[j];
                offset += 1;
            }
        }
        z
    }

    fn project_balls(&self, z: &mut DVector<f64>) {
        let mut offset = 0;
        for (range, radius) in &self.balls {
            let len = range.end - range.start;
            if radius.is_finite() {
                let norm = z.rows(offset, len).norm();
                if norm > *radius {
                    let scale = radius / norm;
                    for k in offset..offset + len {
                        z[k] *= scale;
                    }
                }
            }
            offset += len;
        }
    }

    fn residual_at(&self, z: &DVector<f64>) -> f64 {
        cone_reduce(&self.cone, &self.scatter(z)).norm()
    }

    /// Smallest attainable residual norm, by accelerated projected gradient
    /// on the ball variables with step one (the reduction map is firmly
    /// nonexpansive, so the objective gradient is 1-Lipschitz).
    pub(crate) fn residual(&self) -> f64 {
        if self.balls.is_empty() {
            return cone_reduce(&self.cone, &self.base).norm();
        }
        let mut z = -self.gather(&self.base);
        self.project_balls(&mut z);
        let mut z_prev = z.clone();
        let mut momentum = 1.0_f64;
        let mut best = self.residual_at(&z);
        let floor = 1e-14 * (1.0 + self.base.norm());

        for _ in 0..DIST_MAX_ITER {
            let momentum_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / momentum_next;
            let y = &z + (&z - &z_prev) * beta;
            let grad = self.gather(&cone_reduce(&self.cone, &self.scatter(&y)));
            let mut z_next = &y - &grad;
            self.project_balls(&mut z_next);
            let mut norm_next = self.residual_at(&z_next);
            if norm_next > best {
                let grad_plain = self.gather(&cone_reduce(&self.cone, &self.scatter(&z)));
                z_next = &z - &grad_plain;
                self.project_balls(&mut z_next);
                norm_next = self.residual_at(&z_next);
                momentum = 1.0;
            } else {
                momentum = momentum_next;
            }
            best = best.min(norm_next);
            let step = (&z_next - &z).norm();
            z_prev = std::mem::replace(&mut z, z_next);
            if step <= DIST_STEP_TOL * (1.0 + z.norm()) || best <= floor {
                break;
            }
        }
        best
    }
}

fn check_feasible(
    constraint: &ConstraintSet,
    x: &DVector<f64>,
    context: &'static str,
) -> Result<()> {
    let violation = constraint.violation(x);
    if violation > INFEASIBILITY_GUARD * (1.0 + x.norm()) {
        return Err(AirError::InfeasiblePoint { context, violation });
    }
    Ok(())
}

/// Distance from zero to `∂G(x) + N(x)` for the weighted surrogate.
pub fn kkt_residual(spec: &SubproblemSpec, x: &DVector<f64>) -> Result<f64> {
    if let ConstraintSet::LinearEquality { a, b } = spec.constraint {
        let geometry = EqualityGeometry::new(a, b)?;
        kkt_residual_with(spec, x, Some(&geometry))
    } else {
        kkt_residual_with(spec, x, None)
    }
}

/// Residual for a possibly unconverged iterate: a point outside the
/// feasibility guard carries no certificate, so it reports infinity
/// instead of an error.
pub(crate) fn kkt_residual_or_infinite(
    spec: &SubproblemSpec,
    x: &DVector<f64>,
    geometry: Option<&EqualityGeometry>,
) -> Result<f64> {
    match kkt_residual_with(spec, x, geometry) {
        Err(AirError::InfeasiblePoint { .. }) => Ok(f64::INFINITY),
        other => other,
    }
}

pub(crate) fn kkt_residual_with(
    spec: &SubproblemSpec,
    x: &DVector<f64>,
    geometry: Option<&EqualityGeometry>,
) -> Result<f64> {
    if x.len() != spec.dim() {
        return Err(AirError::DimensionMismatch {
            context: "kkt residual point",
            expected: spec.dim(),
            found: x.len(),
        });
    }
    check_feasible(spec.constraint, x, "subproblem optimality residual")?;

    let mut base = spec.loss.gradient(x);
    let mut balls = Vec::new();
    for (i, range) in spec.groups.iter().enumerate() {
        let len = range.end - range.start;
        let w = spec.weights[i];
        match spec.mode {
            Mode::Square => {
                for j in range {
                    base[j] += 2.0 * w * x[j];
                }
            }
            Mode::AbsoluteValue => {
                let norm = x.rows(range.start, len).norm();
                if norm > 0.0 {
                    for j in range {
                        base[j] += w * x[j] / norm;
                    }
                } else {
                    balls.push((range, w));
                }
            }
        }
    }

    let cone = cone_at_point(spec.constraint, x, geometry);
    let system = BallSystem { base, balls, cone };
    Ok(system.residual())
}

/// Distance from zero to the subdifferential of the original objective
/// `f + Σᵢ rᵢ(cᵢ(·) + εᵢ)` plus the normal cone. Groups with `cᵢ + εᵢ > 0`
/// contribute smooth or single-valued terms; groups at zero contribute the
/// limiting slope as a ball radius, infinite when the slope diverges.
pub(crate) fn optimality_system_residual(
    problem: &ProblemSpec,
    x: &DVector<f64>,
    eps: &EpsilonVector,
    geometry: Option<&EqualityGeometry>,
) -> Result<f64> {
    if x.len() != problem.dim() {
        return Err(AirError::DimensionMismatch {
            context: "optimality residual point",
            expected: problem.dim(),
            found: x.len(),
        });
    }
    if eps.len() != problem.num_groups() {
        return Err(AirError::DimensionMismatch {
            context: "optimality residual smoothing vector",
            expected: problem.num_groups(),
            found: eps.len(),
        });
    }
    check_feasible(&problem.constraint, x, "optimality residual")?;

    let mut base = problem.loss.gradient(x);
    let mut balls = Vec::new();
    for (i, range) in problem.groups.iter().enumerate() {
        let len = range.end - range.start;
        let norm = x.rows(range.start, len).norm();
        let ce = problem.c_value(x, i) + eps.get(i);
        if ce > 0.0 {
            match problem.mode {
                Mode::AbsoluteValue => {
                    let w = problem.penalty.r_prime(ce);
                    if norm > 0.0 {
                        for j in range {
                            base[j] += w * x[j] / norm;
                        }
                    } else {
                        balls.push((range, w));
                    }
                }
                Mode::Square => {
                    let root = ce.sqrt();
                    let w = problem.penalty.r_prime(root) / (2.0 * root);
                    for j in range {
                        base[j] += 2.0 * w * x[j];
                    }
                }
            }
        } else {
            let radius = match problem.penalty.r_prime_at_zero_limit() {
                ExtendedReal::Finite(y) => y,
                ExtendedReal::PosInfinity => f64::INFINITY,
            };
            balls.push((range, radius));
        }
    }

    let cone = cone_at_point(&problem.constraint, x, geometry);
    let system = BallSystem { base, balls, cone };
    Ok(system.residual())
}
