//! Problem data and the objectives driven by it.
//!
//! A [`ProblemSpec`] bundles a smooth convex loss, one penalty applied over a
//! contiguous group partition, the framing [`Mode`], and a convex constraint
//! set. It evaluates the unrelaxed objective `J0`, the smoothed objective `J`,
//! the sandwich bounds between them, the surrogate `G` for a fixed weight
//! vector, and the reweighting map itself.

use nalgebra::{DMatrix, DVector};

use crate::error::{AirError, Result};
use crate::penalties::{Mode, PenaltyKind};

/// Relative scale applied to the feasibility tolerance `tol * (1 + ‖x‖)`.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Contiguous partition of coordinates into groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupStructure {
    offsets: Vec<usize>,
}

impl GroupStructure {
    /// One group per coordinate.
    pub fn singletons(n: usize) -> Self {
        GroupStructure {
            offsets: (0..=n).collect(),
        }
    }

    /// Equal blocks of `block` coordinates; `block` must divide `n`.
    pub fn uniform(n: usize, block: usize) -> Result<Self> {
        if block == 0 || !n.is_multiple_of(block) {
            return Err(AirError::InvalidGroups {
                reason: format!("block size {block} does not evenly divide dimension {n}"),
            });
        }
        Self::from_block_lengths(&vec![block; n / block])
    }

    /// Build from explicit block lengths, each at least one.
    pub fn from_block_lengths(lengths: &[usize]) -> Result<Self> {
        if lengths.is_empty() {
            return Err(AirError::InvalidGroups {
                reason: "at least one group is required".into(),
            });
        }
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        for (i, &len) in lengths.iter().enumerate() {
            if len == 0 {
                return Err(AirError::InvalidGroups {
                    reason: format!("group {i} has length zero"),
                });
            }
            offsets.push(offsets[i] + len);
        }
        Ok(GroupStructure { offsets })
    }

    pub fn num_groups(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total number of coordinates covered.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        (0..self.num_groups()).map(|i| self.range(i))
    }
}

/// Smooth convex loss term.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothLoss {
    /// `f(x) = 0`.
    Zero,
    /// `f(x) = ½‖Mx − y‖²`.
    LeastSquares { m: DMatrix<f64>, y: DVector<f64> },
    /// `f(x) = ½ xᵀQx + lᵀx` with `Q` positive semidefinite.
    Quadratic {
        q: DMatrix<f64>,
        lin: DVector<f64>,
        lower: Option<f64>,
    },
}

impl SmoothLoss {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            SmoothLoss::Zero => 0.0,
            SmoothLoss::LeastSquares { m, y } => {
                let r = m * x - y;
                0.5 * r.norm_squared()
            }
            SmoothLoss::Quadratic { q, lin, .. } => 0.5 * x.dot(&(q * x)) + lin.dot(x),
        }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SmoothLoss::Zero => DVector::zeros(x.len()),
            SmoothLoss::LeastSquares { m, y } => m.transpose() * (m * x - y),
            SmoothLoss::Quadratic { q, lin, .. } => q * x + lin,
        }
    }

    /// Lower bound on the loss over the whole space, when one is known.
    pub fn lower_bound(&self) -> Option<f64> {
        match self {
            SmoothLoss::Zero | SmoothLoss::LeastSquares { .. } => Some(0.0),
            SmoothLoss::Quadratic { q, lin, lower } => lower.or_else(|| {
                q.clone().cholesky().map(|chol| {
                    let sol = chol.solve(lin);
                    -0.5 * lin.dot(&sol)
                })
            }),
        }
    }

    /// Lipschitz constant of the gradient.
    pub fn gradient_lipschitz(&self) -> f64 {
        match self {
            SmoothLoss::Zero => 0.0,
            SmoothLoss::LeastSquares { m, .. } => {
                power_iteration(m.ncols(), |v| m.transpose() * (m * v))
            }
            SmoothLoss::Quadratic { q, .. } => power_iteration(q.ncols(), |v| q * v),
        }
    }

    /// Whether the loss grows without bound along every ray.
    pub fn is_coercive(&self) -> bool {
        match self {
            SmoothLoss::Zero => false,
            SmoothLoss::LeastSquares { m, .. } => (m.transpose() * m).cholesky().is_some(),
            SmoothLoss::Quadratic { q, .. } => q.clone().cholesky().is_some(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            SmoothLoss::Zero => Ok(()),
            SmoothLoss::LeastSquares { m, y } => {
                if m.ncols() != n {
                    return Err(AirError::DimensionMismatch {
                        context: "least-squares matrix columns",
                        expected: n,
                        found: m.ncols(),
                    });
                }
                if y.len() != m.nrows() {
                    return Err(AirError::DimensionMismatch {
                        context: "least-squares right-hand side",
                        expected: m.nrows(),
                        found: y.len(),
                    });
                }
                Ok(())
            }
            SmoothLoss::Quadratic { q, lin, .. } => {
                if q.nrows() != n || q.ncols() != n {
                    return Err(AirError::DimensionMismatch {
                        context: "quadratic matrix",
                        expected: n,
                        found: q.nrows().max(q.ncols()),
                    });
                }
                if lin.len() != n {
                    return Err(AirError::DimensionMismatch {
                        context: "quadratic linear term",
                        expected: n,
                        found: lin.len(),
                    });
                }
                let scale = q.amax().max(1.0);
                let asym = (q - q.transpose()).amax();
                if asym > 1e-10 * scale {
                    return Err(AirError::InvalidParameter {
                        name: "Q",
                        value: asym,
                        constraint: "symmetric",
                    });
                }
                let eig = q.clone().symmetric_eigen().eigenvalues;
                let min_eig = eig.min();
                if min_eig < -1e-8 * scale {
                    return Err(AirError::NotPsd {
                        context: "quadratic loss",
                        eigenvalue: min_eig,
                    });
                }
                Ok(())
            }
        }
    }
}

/// Deterministic power iteration for the top eigenvalue of a PSD operator.
fn power_iteration(n: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 1e-3 * (i % 17) as f64);
    v /= v.norm();
    let mut lambda = 0.0_f64;
    for _ in 0..300 {
        let u = apply(&v);
        let norm = u.norm();
        if norm <= f64::MIN_POSITIVE {
            return 0.0;
        }
        let next = norm;
        v = u / norm;
        if (next - lambda).abs() <= 1e-12 * next.max(1.0) {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Convex constraint set.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    Free,
    NonNegative,
    Box { lo: DVector<f64>, hi: DVector<f64> },
    LinearEquality { a: DMatrix<f64>, b: DVector<f64> },
    L2Ball { center: DVector<f64>, radius: f64 },
}

impl ConstraintSet {
    /// Scalar infeasibility measure, zero on the set.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        match self {
            ConstraintSet::Free => 0.0,
            ConstraintSet::NonNegative => (-x.min()).max(0.0),
            ConstraintSet::Box { lo, hi } => {
                let mut worst = 0.0_f64;
                for j in 0..x.len() {
                    worst = worst.max(lo[j] - x[j]).max(x[j] - hi[j]);
                }
                worst.max(0.0)
            }
            ConstraintSet::LinearEquality { a, b } => (a * x - b).norm(),
            ConstraintSet::L2Ball { center, radius } => ((x - center).norm() - radius).max(0.0),
        }
    }

    /// Feasibility up to the relative tolerance `FEASIBILITY_TOL * (1 + ‖x‖)`.
    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        self.violation(x) <= FEASIBILITY_TOL * (1.0 + x.norm())
    }

    /// Whether the set is bounded.
    pub fn is_compact(&self) -> bool {
        match self {
            ConstraintSet::Box { lo, hi } => {
                lo.iter().all(|v| v.is_finite()) && hi.iter().all(|v| v.is_finite())
            }
            ConstraintSet::L2Ball { .. } => true,
            _ => false,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            ConstraintSet::Free | ConstraintSet::NonNegative => Ok(()),
            ConstraintSet::Box { lo, hi } => {
                if lo.len() != n || hi.len() != n {
                    return Err(AirError::DimensionMismatch {
                        context: "box bounds",
                        expected: n,
                        found: lo.len().min(hi.len()),
                    });
                }
                for j in 0..n {
                    if lo[j].is_nan()
                        || hi[j].is_nan()
                        || lo[j] > hi[j]
                        || lo[j] == f64::INFINITY
                        || hi[j] == f64::NEG_INFINITY
                    {
                        return Err(AirError::InvalidParameter {
                            name: "box bounds",
                            value: lo[j],
                            constraint: "lo <= hi with lo < +inf and hi > -inf",
                        });
                    }
                }
                Ok(())
            }
            ConstraintSet::LinearEquality { a, b } => {
                if a.ncols() != n {
                    return Err(AirError::DimensionMismatch {
                        context: "equality matrix columns",
                        expected: n,
                        found: a.ncols(),
                    });
                }
                if b.len() != a.nrows() {
                    return Err(AirError::DimensionMismatch {
                        context: "equality right-hand side",
                        expected: a.nrows(),
                        found: b.len(),
                    });
                }
                Ok(())
            }
            ConstraintSet::L2Ball { center, radius } => {
                if center.len() != n {
                    return Err(AirError::DimensionMismatch {
                        context: "ball center",
                        expected: n,
                        found: center.len(),
                    });
                }
                if !radius.is_finite() || *radius < 0.0 {
                    return Err(AirError::InvalidParameter {
                        name: "radius",
                        value: *radius,
                        constraint: ">= 0 and finite",
                    });
                }
                Ok(())
            }
        }
    }
}

/// Per-group smoothing values.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonVector(Vec<f64>);

impl EpsilonVector {
    /// Same smoothing value for every group.
    pub fn broadcast(value: f64, num_groups: usize) -> Result<Self> {
        Self::from_values(vec![value; num_groups])
    }

    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return Err(AirError::InvalidParameter {
                    name: "eps",
                    value: v,
                    constraint: ">= 0 and finite",
                });
            }
        }
        Ok(EpsilonVector(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Full problem description.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub loss: SmoothLoss,
    pub penalty: PenaltyKind,
    pub mode: Mode,
    pub groups: GroupStructure,
    pub constraint: ConstraintSet,
}

impl ProblemSpec {
    pub fn new(
        loss: SmoothLoss,
        penalty: PenaltyKind,
        mode: Mode,
        groups: GroupStructure,
        constraint: ConstraintSet,
    ) -> Result<Self> {
        penalty.validate()?;
        let n = groups.dim();
        loss.validate(n)?;
        constraint.validate(n)?;
        Ok(ProblemSpec {
            loss,
            penalty,
            mode,
            groups,
            constraint,
        })
    }

    pub fn dim(&self) -> usize {
        self.groups.dim()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.num_groups()
    }

    /// Euclidean norm of group `i`, independent of the framing.
    pub fn group_norm(&self, x: &DVector<f64>, i: usize) -> f64 {
        let r = self.groups.range(i);
        x.rows(r.start, r.end - r.start).norm()
    }

    /// Group magnitude in the framing of `mode`: `‖x_i‖` or `‖x_i‖²`.
    pub fn c_value(&self, x: &DVector<f64>, i: usize) -> f64 {
        let norm = self.group_norm(x, i);
        match self.mode {
            Mode::AbsoluteValue => norm,
            Mode::Square => norm * norm,
        }
    }

    pub fn c_values(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..self.num_groups()).map(|i| self.c_value(x, i)).collect()
    }

    /// Unrelaxed objective `J0(x) = f(x) + Σᵢ r(‖x_i‖)`; framing independent.
    pub fn objective_j0(&self, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.dim(), "objective_j0: dimension mismatch");
        let mut total = self.loss.value(x);
        for i in 0..self.num_groups() {
            total += self.penalty.r_value(self.group_norm(x, i));
        }
        total
    }

    /// Smoothed objective `J(x; eps) = f(x) + Σᵢ r_m(c_i(x) + eps_i)`.
    pub fn objective_j(&self, x: &DVector<f64>, eps: &EpsilonVector) -> f64 {
        assert_eq!(x.len(), self.dim(), "objective_j: dimension mismatch");
        assert_eq!(
            eps.len(),
            self.num_groups(),
            "objective_j: eps length mismatch"
        );
        let mut total = self.loss.value(x);
        for i in 0..self.num_groups() {
            total += self
                .penalty
                .mode_value(self.mode, self.c_value(x, i) + eps.get(i));
        }
        total
    }

    /// Derivative of the framed penalty at `c > 0`.
    fn mode_slope(&self, c: f64) -> f64 {
        match self.mode {
            Mode::AbsoluteValue => self.penalty.r_prime(c),
            Mode::Square => {
                let t = c.sqrt();
                self.penalty.r_prime(t) / (2.0 * t)
            }
        }
    }

    /// Bounds `J0(x) <= J(x; eps) <= hi` from the tangent inequality.
    pub fn sandwich_bounds(&self, x: &DVector<f64>, eps: &EpsilonVector) -> (f64, f64) {
        assert_eq!(
            eps.len(),
            self.num_groups(),
            "sandwich_bounds: eps length mismatch"
        );
        let lo = self.objective_j0(x);
        let mut slack = 0.0;
        for i in 0..self.num_groups() {
            let c = self.c_value(x, i);
            let e = eps.get(i);
            if c == 0.0 {
                slack += self.penalty.mode_value(self.mode, e);
            } else {
                slack += self.mode_slope(c) * e;
            }
        }
        (lo, lo + slack)
    }

    /// Subproblem weights `w_i = r_m'(c_i(x_ref) + eps_i)`, clamped below.
    pub fn compute_weights(
        &self,
        x_ref: &DVector<f64>,
        eps: &EpsilonVector,
        w_min: f64,
    ) -> Result<Vec<f64>> {
        if x_ref.len() != self.dim() {
            return Err(AirError::DimensionMismatch {
                context: "compute_weights point",
                expected: self.dim(),
                found: x_ref.len(),
            });
        }
        if eps.len() != self.num_groups() {
            return Err(AirError::DimensionMismatch {
                context: "compute_weights eps",
                expected: self.num_groups(),
                found: eps.len(),
            });
        }
        let mut w = Vec::with_capacity(self.num_groups());
        for i in 0..self.num_groups() {
            let raw = self
                .penalty
                .weight(self.mode, self.c_value(x_ref, i), eps.get(i))?;
            w.push(raw.max(w_min));
        }
        Ok(w)
    }

    /// Surrogate `G(x) = f(x) + Σᵢ w_i c_i(x)` plus the constraint indicator.
    pub fn surrogate_g(&self, weights: &[f64], x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.dim(), "surrogate_g: dimension mismatch");
        assert_eq!(
            weights.len(),
            self.num_groups(),
            "surrogate_g: weight length mismatch"
        );
        if !self.constraint.is_feasible(x) {
            return f64::INFINITY;
        }
        let mut total = self.loss.value(x);
        for (i, &w) in weights.iter().enumerate() {
            total += w * self.c_value(x, i);
        }
        total
    }
}
