//! Proximal gradient for separable constraint sets and the Euclidean ball.
//!
//! The smooth part is the loss plus, in square framing, the weighted squared
//! norms; the nonsmooth part is the weighted group norms (absolute framing)
//! plus the constraint indicator. The proximal step is exact wherever a
//! closed form exists and is otherwise computed by Dykstra alternation.

use nalgebra::DVector;

use crate::error::Result;
use crate::model::ConstraintSet;
use crate::penalties::Mode;

use super::{project, stationarity, SolverOptions, StepRule, SubproblemSolution, SubproblemSpec};

const MAX_HALVINGS: usize = 60;
const DYKSTRA_MAX_ITER: usize = 2000;

fn smooth_value(spec: &SubproblemSpec, x: &DVector<f64>) -> f64 {
    let mut total = spec.loss.value(x);
    if spec.mode == Mode::Square {
        for (i, range) in spec.groups.iter().enumerate() {
            let block = x.rows(range.start, range.end - range.start);
            total += spec.weights[i] * block.norm_squared();
        }
    }
    total
}

fn smooth_gradient(spec: &SubproblemSpec, x: &DVector<f64>) -> DVector<f64> {
    let mut g = spec.loss.gradient(x);
    if spec.mode == Mode::Square {
        for (i, range) in spec.groups.iter().enumerate() {
            for j in range {
                g[j] += 2.0 * spec.weights[i] * x[j];
            }
        }
    }
    g
}

fn smooth_lipschitz(spec: &SubproblemSpec) -> f64 {
    let mut lip = spec.loss.gradient_lipschitz();
    if spec.mode == Mode::Square {
        let max_w = spec.weights.iter().cloned().fold(0.0, f64::max);
        lip += 2.0 * max_w;
    }
    lip
}

fn block_soft(spec: &SubproblemSpec, v: &DVector<f64>, t: f64) -> DVector<f64> {
    let mut out = v.clone();
    for (i, range) in spec.groups.iter().enumerate() {
        let len = range.end - range.start;
        let norm = v.rows(range.start, len).norm();
        let threshold = t * spec.weights[i];
        if norm <= threshold {
            out.rows_mut(range.start, len).fill(0.0);
        } else {
            let scale = 1.0 - threshold / norm;
            for j in range {
                out[j] = scale * v[j];
            }
        }
    }
    out
}

/// Exact prox of `t·Σ wᵢ‖·ᵢ‖ + δ_C` for sets where a closed form exists,
/// Dykstra alternation between the two prox maps otherwise.
fn prox_step(spec: &SubproblemSpec, v: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    if spec.mode == Mode::Square {
        return project(spec.constraint, v);
    }
    let singletons = spec.groups.num_groups() == spec.dim();
    match spec.constraint {
        ConstraintSet::Free => Ok(block_soft(spec, v, t)),
        ConstraintSet::NonNegative if singletons => Ok(DVector::from_fn(v.len(), |j, _| {
            (v[j] - t * spec.weights[j]).max(0.0)
        })),
        ConstraintSet::Box { lo, hi } if singletons => Ok(DVector::from_fn(v.len(), |j, _| {
            let s = v[j];
            let w = t * spec.weights[j];
            let soft = if s > w {
                s - w
            } else if s < -w {
                s + w
            } else {
                0.0
            };
            soft.clamp(lo[j], hi[j])
        })),
        _ => dykstra(spec, v, t),
    }
}

/// Dykstra alternation computing the prox of a sum of two prox-friendly terms.
fn dykstra(spec: &SubproblemSpec, v: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
    let n = v.len();
    let mut x = v.clone();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    let tol = 1e-13 * (1.0 + v.norm());
    for _ in 0..DYKSTRA_MAX_ITER {
        let y = block_soft(spec, &(&x + &p), t);
        p += &x - &y;
        let x_next = project(spec.constraint, &(&y + &q))?;
        q += &y - &x_next;
        let delta = (&x_next - &x).norm();
        x = x_next;
        if delta <= tol {
            break;
        }
    }
    Ok(x)
}

pub(crate) fn solve(
    spec: &SubproblemSpec,
    opts: &SolverOptions,
    x0: Option<&DVector<f64>>,
) -> Result<SubproblemSolution> {
    let n = spec.dim();
    let start = match x0 {
        Some(v) if v.len() == n => v.clone(),
        _ => DVector::zeros(n),
    };
    let mut x = project(spec.constraint, &start)?;

    let lip = smooth_lipschitz(spec);
    let step_cap = if lip > 0.0 { 1.0 / lip } else { 1.0 };
    let mut t = step_cap;
    let mut gm_gate_scale = 1.0_f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut kkt = f64::INFINITY;

    for iter in 1..=opts.max_inner_iter {
        iterations = iter;
        let g = smooth_gradient(spec, &x);
        let fx = smooth_value(spec, &x);
        let slack = 1e-12 * (1.0 + fx.abs());

        let mut x_next;
        let mut t_used = t;
        let mut halvings = 0;
        loop {
            x_next = prox_step(spec, &(&x - &g * t_used), t_used)?;
            match opts.step_rule {
                StepRule::FixedFromLipschitz => break,
                StepRule::Backtracking { shrink } => {
                    let d = &x_next - &x;
                    let quad = fx + g.dot(&d) + d.norm_squared() / (2.0 * t_used);
                    if smooth_value(spec, &x_next) <= quad + slack || halvings >= MAX_HALVINGS {
                        break;
                    }
                    t_used *= shrink;
                    halvings += 1;
                }
            }
        }

        let gm = (&x_next - &x).norm() / t_used;
        x = x_next;

        if gm <= gm_gate_scale * opts.dual_tol * (1.0 + x.norm()) {
            kkt = stationarity::kkt_residual_with(spec, &x, None)?;
            if kkt <= opts.dual_tol * (1.0 + g.norm()) {
                converged = true;
                break;
            }
            gm_gate_scale *= 0.25;
        }

        t = if lip > 0.0 {
            (t_used * 2.0).min(step_cap)
        } else {
            t_used * 2.0
        };
    }

    if kkt.is_infinite() {
        kkt = stationarity::kkt_residual_with(spec, &x, None)?;
        if kkt <= opts.dual_tol {
            converged = true;
        }
    }
    let objective = spec.objective(&x);
    Ok(SubproblemSolution {
        x,
        iterations,
        converged,
        objective,
        kkt_residual: kkt,
        admm_state: None,
    })
}
