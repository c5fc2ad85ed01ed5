//! Linear equality geometry and direct solves under `Ax = b`.

use nalgebra::{DMatrix, DVector};

use crate::error::{AirError, Result};
use crate::model::{ConstraintSet, SmoothLoss, FEASIBILITY_TOL};
use crate::penalties::Mode;

use super::{stationarity, SolverOptions, SubproblemSolution, SubproblemSpec};

/// Orthonormal range basis and a feasible point for an affine set `Ax = b`.
#[derive(Debug, Clone)]
pub(crate) struct EqualityGeometry {
    a: DMatrix<f64>,
    b: DVector<f64>,
    basis: DMatrix<f64>,
    x_feas: DVector<f64>,
}

impl EqualityGeometry {
    pub(crate) fn new(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        let (q_rows, n) = (a.nrows(), a.ncols());
        if b.len() != q_rows {
            return Err(AirError::DimensionMismatch {
                context: "equality right-hand side",
                expected: q_rows,
                found: b.len(),
            });
        }
        let mut fast: Option<(DMatrix<f64>, DVector<f64>)> = None;
        if q_rows <= n {
            let qr = a.transpose().qr();
            let (qmat, rmat) = (qr.q(), qr.r());
            let diag_max = (0..q_rows).map(|i| rmat[(i, i)].abs()).fold(0.0, f64::max);
            let diag_min = (0..q_rows)
                .map(|i| rmat[(i, i)].abs())
                .fold(f64::INFINITY, f64::min);
            if diag_max > 0.0 && diag_min > 1e-10 * diag_max {
                let y =
                    rmat.transpose()
                        .solve_lower_triangular(b)
                        .ok_or(AirError::SingularSystem {
                            context: "equality factorization",
                        })?;
                let x_feas = &qmat * y;
                fast = Some((qmat, x_feas));
            }
        }
        let (basis, x_feas) = match fast {
            Some(pair) => pair,
            None => {
                let svd = a.clone().svd(true, true);
                let u = svd.u.as_ref().expect("svd with u");
                let vt = svd.v_t.as_ref().expect("svd with v_t");
                let smax = svd.singular_values.max();
                let tol = 1e-10 * smax.max(1e-300);
                let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
                if rank == 0 {
                    if b.norm() > FEASIBILITY_TOL * (1.0 + b.norm()) && b.norm() > 0.0 {
                        return Err(AirError::Infeasible {
                            violation: b.norm(),
                            tolerance: 0.0,
                        });
                    }
                    (DMatrix::zeros(n, 0), DVector::zeros(n))
                } else {
                    let basis = vt.rows(0, rank).transpose();
                    let mut x_feas = DVector::zeros(n);
                    for i in 0..rank {
                        let coef = u.column(i).dot(b) / svd.singular_values[i];
                        x_feas += basis.column(i) * coef;
                    }
                    (basis, x_feas)
                }
            }
        };
        let violation = (a * &x_feas - b).norm();
        if violation > FEASIBILITY_TOL * (1.0 + b.norm()) {
            return Err(AirError::Infeasible {
                violation,
                tolerance: FEASIBILITY_TOL * (1.0 + b.norm()),
            });
        }
        Ok(EqualityGeometry {
            a: a.clone(),
            b: b.clone(),
            basis,
            x_feas,
        })
    }

    pub(crate) fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub(crate) fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    pub(crate) fn feasible_point(&self) -> &DVector<f64> {
        &self.x_feas
    }

    /// Euclidean projection onto `{x : Ax = b}`.
    pub(crate) fn project_affine(&self, v: &DVector<f64>) -> DVector<f64> {
        self.project_nullspace(v) + &self.x_feas
    }

    /// Orthogonal projection onto the nullspace of `A`.
    pub(crate) fn project_nullspace(&self, v: &DVector<f64>) -> DVector<f64> {
        v - &self.basis * (self.basis.transpose() * v)
    }

    pub(crate) fn residual_norm(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).norm()
    }
}

/// Closed-form minimizer of `Σᵢ wᵢ‖xᵢ‖²` subject to `Ax = b`.
///
/// With `D` the diagonal matrix carrying `1/wᵢ` on group `i`, the solution is
/// `x = D Aᵀ (A D Aᵀ)⁻¹ b`, computed through a QR factorization of
/// `D^{1/2} Aᵀ` so the product `A D Aᵀ` is never formed.
pub fn solve_weighted_l2_equality(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    weights: &[f64],
    groups: &crate::model::GroupStructure,
) -> Result<SubproblemSolution> {
    let constraint = ConstraintSet::LinearEquality {
        a: a.clone(),
        b: b.clone(),
    };
    let loss = SmoothLoss::Zero;
    let spec = SubproblemSpec::new(&loss, weights, Mode::Square, groups, &constraint)?;
    let geom = EqualityGeometry::new(a, b)?;
    solve_quadratic_equality(&spec, &SolverOptions::default(), &geom)
}

/// Direct solve of a smooth weighted subproblem under equality constraints.
pub(crate) fn solve_quadratic_equality(
    spec: &SubproblemSpec,
    _opts: &SolverOptions,
    geom: &EqualityGeometry,
) -> Result<SubproblemSolution> {
    debug_assert_eq!(spec.mode, Mode::Square);
    let a = geom.matrix();
    let b = geom.rhs();
    let (q_rows, n) = (a.nrows(), a.ncols());
    if n != spec.dim() {
        return Err(AirError::DimensionMismatch {
            context: "equality matrix columns",
            expected: spec.dim(),
            found: n,
        });
    }

    let coord_weight = coordinate_weights(spec);
    let x = match spec.loss {
        SmoothLoss::Zero => {
            let d_sqrt = DVector::from_fn(n, |j, _| 1.0 / coord_weight[j].sqrt());
            let mut bmat = a.transpose();
            for j in 0..n {
                let scale = d_sqrt[j];
                for r in 0..q_rows {
                    bmat[(j, r)] *= scale;
                }
            }
            let qr = bmat.qr();
            let (qmat, rmat) = (qr.q(), qr.r());
            let diag_max = (0..q_rows).map(|i| rmat[(i, i)].abs()).fold(0.0, f64::max);
            let diag_min = (0..q_rows)
                .map(|i| rmat[(i, i)].abs())
                .fold(f64::INFINITY, f64::min);
            if !diag_max.is_finite() || diag_max <= 0.0 || diag_min <= 1e-12 * diag_max {
                return Err(AirError::SingularSystem {
                    context: "weighted equality solve",
                });
            }
            let y = rmat
                .transpose()
                .solve_lower_triangular(b)
                .ok_or(AirError::SingularSystem {
                    context: "weighted equality solve",
                })?;
            let qy = &qmat * y;
            DVector::from_fn(n, |j, _| d_sqrt[j] * qy[j])
        }
        _ => {
            let (hess, rhs_top) = match spec.loss {
                SmoothLoss::LeastSquares { m, y } => (m.transpose() * m, m.transpose() * y),
                SmoothLoss::Quadratic { q, lin, .. } => (q.clone(), -lin),
                SmoothLoss::Zero => unreachable!(),
            };
            let dim = n + q_rows;
            let mut kkt = DMatrix::zeros(dim, dim);
            for r in 0..n {
                for c in 0..n {
                    kkt[(r, c)] = hess[(r, c)];
                }
                kkt[(r, r)] += 2.0 * coord_weight[r];
            }
            for r in 0..q_rows {
                for c in 0..n {
                    kkt[(n + r, c)] = a[(r, c)];
                    kkt[(c, n + r)] = a[(r, c)];
                }
            }
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&rhs_top);
            rhs.rows_mut(n, q_rows).copy_from(b);
            let sol = kkt.lu().solve(&rhs).ok_or(AirError::SingularSystem {
                context: "equality KKT system",
            })?;
            sol.rows(0, n).into_owned()
        }
    };

    let objective = spec.objective(&x);
    let kkt_residual = stationarity::kkt_residual_with(spec, &x, Some(geom))?;
    Ok(SubproblemSolution {
        x,
        iterations: 1,
        converged: true,
        objective,
        kkt_residual,
        admm_state: None,
    })
}

/// Per-coordinate weights broadcast from the group weights.
pub(crate) fn coordinate_weights(spec: &SubproblemSpec) -> DVector<f64> {
    let mut w = DVector::zeros(spec.dim());
    for (i, range) in spec.groups.iter().enumerate() {
        for j in range {
            w[j] = spec.weights[i];
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GroupStructure;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    /// Dense KKT solve of `min Σ wⱼxⱼ²  s.t. Ax = b` used as an oracle.
    fn dense_kkt_oracle(a: &DMatrix<f64>, b: &DVector<f64>, coord_w: &[f64]) -> DVector<f64> {
        let (q, n) = (a.nrows(), a.ncols());
        let dim = n + q;
        let mut kkt = DMatrix::zeros(dim, dim);
        for j in 0..n {
            kkt[(j, j)] = 2.0 * coord_w[j];
        }
        for r in 0..q {
            for c in 0..n {
                kkt[(n + r, c)] = a[(r, c)];
                kkt[(c, n + r)] = a[(r, c)];
            }
        }
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(n, q).copy_from(b);
        let sol = kkt.lu().solve(&rhs).expect("oracle KKT solvable");
        sol.rows(0, n).into_owned()
    }

    #[test]
    fn weighted_l2_closed_form_two_variables() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_element(1, 2.0);
        let groups = GroupStructure::singletons(2);
        let sol = solve_weighted_l2_equality(&a, &b, &[1.0, 3.0], &groups).unwrap();
        assert_relative_eq!(sol.x[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 0.5, epsilon = 1e-12);
        assert!(sol.converged);
        assert!(sol.kkt_residual <= 1e-10);
        assert_relative_eq!(
            sol.objective,
            1.0 * 1.5 * 1.5 + 3.0 * 0.5 * 0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn identity_system_returns_rhs() {
        let a = DMatrix::identity(3, 3);
        let b = DVector::from_row_slice(&[1.0, -2.0, 3.0]);
        let groups = GroupStructure::singletons(3);
        let sol = solve_weighted_l2_equality(&a, &b, &[5.0, 0.1, 2.0], &groups).unwrap();
        for j in 0..3 {
            assert_relative_eq!(sol.x[j], b[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn qr_solve_matches_dense_kkt_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 3, 7);
        let b = DVector::from_fn(3, |i, _| i as f64 - 1.0);
        let weights: Vec<f64> = (0..7).map(|_| rng.gen_range(0.2..3.0)).collect();
        let groups = GroupStructure::singletons(7);
        let sol = solve_weighted_l2_equality(&a, &b, &weights, &groups).unwrap();
        let oracle = dense_kkt_oracle(&a, &b, &weights);
        for j in 0..7 {
            assert_relative_eq!(sol.x[j], oracle[j], epsilon = 1e-9, max_relative = 1e-9);
        }
        assert!(sol.kkt_residual <= 1e-9);
    }

    #[test]
    fn grouped_weights_match_dense_kkt_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 2, 7);
        let b = DVector::from_row_slice(&[1.0, -0.5]);
        let groups = GroupStructure::from_block_lengths(&[2, 3, 2]).unwrap();
        let weights = [0.5, 2.0, 1.0];
        let coord_w = [0.5, 0.5, 2.0, 2.0, 2.0, 1.0, 1.0];
        let sol = solve_weighted_l2_equality(&a, &b, &weights, &groups).unwrap();
        let oracle = dense_kkt_oracle(&a, &b, &coord_w);
        for j in 0..7 {
            assert_relative_eq!(sol.x[j], oracle[j], epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn least_squares_loss_under_equality() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_matrix(&mut rng, 4, 5);
        let y = DVector::from_fn(4, |i, _| 0.5 * i as f64 - 1.0);
        let a = random_matrix(&mut rng, 2, 5);
        let b = DVector::from_row_slice(&[1.0, 2.0]);
        let loss = SmoothLoss::LeastSquares { m, y };
        let constraint = ConstraintSet::LinearEquality {
            a: a.clone(),
            b: b.clone(),
        };
        let groups = GroupStructure::singletons(5);
        let weights = [0.3, 1.0, 2.0, 0.7, 1.5];
        let spec =
            SubproblemSpec::new(&loss, &weights, Mode::Square, &groups, &constraint).unwrap();
        let geom = EqualityGeometry::new(&a, &b).unwrap();
        let sol = solve_quadratic_equality(&spec, &SolverOptions::default(), &geom).unwrap();

        assert!(geom.residual_norm(&sol.x) <= 1e-9 * (1.0 + b.norm()));
        let mut grad = loss.gradient(&sol.x);
        for j in 0..5 {
            grad[j] += 2.0 * weights[j] * sol.x[j];
        }
        assert!(geom.project_nullspace(&grad).norm() <= 1e-8);
        assert!(sol.kkt_residual <= 1e-8);
    }

    #[test]
    fn inconsistent_rows_are_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0]);
        let err = EqualityGeometry::new(&a, &b).unwrap_err();
        assert!(matches!(err, AirError::Infeasible { .. }));
    }

    #[test]
    fn redundant_rows_project_but_reject_direct_solve() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        let b = DVector::from_row_slice(&[2.0, 4.0]);
        let geom = EqualityGeometry::new(&a, &b).unwrap();
        assert_relative_eq!(geom.feasible_point()[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(geom.feasible_point()[1], 1.0, epsilon = 1e-10);
        let groups = GroupStructure::singletons(2);
        let err = solve_weighted_l2_equality(&a, &b, &[1.0, 1.0], &groups).unwrap_err();
        assert!(matches!(err, AirError::SingularSystem { .. }));
    }

    #[test]
    fn projection_is_feasible_orthogonal_and_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_matrix(&mut rng, 3, 6);
        let b = DVector::from_fn(3, |i, _| 1.0 + i as f64);
        let geom = EqualityGeometry::new(&a, &b).unwrap();
        let v = DVector::from_fn(6, |i, _| (i as f64).sin() * 2.0);
        let p = geom.project_affine(&v);
        assert!(geom.residual_norm(&p) <= 1e-10 * (1.0 + b.norm()));
        let w = geom.project_nullspace(&DVector::from_fn(6, |i, _| (i as f64).cos()));
        assert!((&v - &p).dot(&w).abs() <= 1e-10 * (1.0 + v.norm() * w.norm()));
        let p2 = geom.project_affine(&p);
        assert!((&p2 - &p).norm() <= 1e-12 * (1.0 + p.norm()));
    }
}
