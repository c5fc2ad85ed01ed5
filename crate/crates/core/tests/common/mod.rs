//! Independent oracles for the acceptance gate.
//!
//! Each oracle reaches the reference answer by a route disjoint from the
//! library code it checks: a dense saddle-point factorization for the
//! weighted minimum-norm problem, and exhaustive basic-solution enumeration
//! for the weighted 1-norm linear program.

use nalgebra::{DMatrix, DVector};

/// Solve `min Σᵢ wᵢ ‖x_{gᵢ}‖²  s.t.  Ax = b` through the dense block system
/// `[2W Aᵀ; A 0][x; ν] = [0; b]` with one LU factorization.
///
/// `group_of[j]` maps coordinate `j` to its weight index.
pub fn l2_equality_oracle(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    weights: &[f64],
    group_of: &[usize],
) -> Option<DVector<f64>> {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(group_of.len(), n);
    let mut system = DMatrix::<f64>::zeros(n + m, n + m);
    for j in 0..n {
        system[(j, j)] = 2.0 * weights[group_of[j]];
    }
    system.view_mut((0, n), (n, m)).copy_from(&a.transpose());
    system.view_mut((n, 0), (m, n)).copy_from(a);
    let mut rhs = DVector::<f64>::zeros(n + m);
    rhs.rows_mut(n, m).copy_from(b);
    let solution = system.lu().solve(&rhs)?;
    Some(DVector::from_column_slice(&solution.as_slice()[..n]))
}

fn subsets(total: usize, pick: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(pick);
    fn recurse(
        start: usize,
        total: usize,
        pick: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if current.len() == pick {
            out.push(current.clone());
            return;
        }
        for idx in start..total {
            if total - idx < pick - current.len() {
                break;
            }
            current.push(idx);
            recurse(idx + 1, total, pick, current, out);
            current.pop();
        }
    }
    recurse(0, total, pick, &mut current, &mut out);
    out
}

/// Minimum of `Σᵢ wᵢ |xᵢ|` over `Ax = b` by enumerating every basic solution
/// of the split-variable linear program `min wᵀp + wᵀq` over
/// `[A −A][p; q] = b, p ≥ 0, q ≥ 0`.
///
/// Returns `None` when no feasible basic solution exists.
pub fn l1_vertex_oracle(a: &DMatrix<f64>, b: &DVector<f64>, weights: &[f64]) -> Option<f64> {
    let m = a.nrows();
    let n = a.ncols();
    assert_eq!(weights.len(), n);
    let columns = 2 * n;
    let mut best: Option<f64> = None;
    for subset in subsets(columns, m) {
        let mut basis = DMatrix::<f64>::zeros(m, m);
        for (slot, &col) in subset.iter().enumerate() {
            for row in 0..m {
                let sign = if col < n { 1.0 } else { -1.0 };
                basis[(row, slot)] = sign * a[(row, col % n)];
            }
        }
        let Some(values) = basis.clone().lu().solve(b) else {
            continue;
        };
        if (&basis * &values - b).amax() > 1e-8 {
            continue;
        }
        if values.iter().any(|&v| v < -1e-9) {
            continue;
        }
        let objective: f64 = subset
            .iter()
            .zip(values.iter())
            .map(|(&col, &v)| weights[col % n] * v.max(0.0))
            .sum();
        best = Some(match best {
            Some(current) => current.min(objective),
            None => objective,
        });
    }
    best
}

/// Minimize a scalar function over `[lo, hi]` by iterated grid refinement.
pub fn grid_line_minimum(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut best_t = lo;
    for _ in 0..6 {
        let steps = 2000usize;
        let width = hi - lo;
        let mut best_value = f64::INFINITY;
        for i in 0..=steps {
            let t = lo + width * (i as f64) / (steps as f64);
            let value = f(t);
            if value < best_value {
                best_value = value;
                best_t = t;
            }
        }
        let pad = width / steps as f64 * 2.0;
        lo = best_t - pad;
        hi = best_t + pad;
    }
    best_t
}
