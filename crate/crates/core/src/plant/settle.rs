//! Quasi-static equilibrium by damped, Hessian-preconditioned descent.
//!
//! Each iteration solves `(H + μI) δ = −∇E` with `H` the stretch Hessian
//! clamped to be positive semidefinite plus the constant bending Hessian,
//! then backtracks along `δ` until the energy satisfies an Armijo decrease.
//! Iteration stops once the accepted step moves no node by more than
//! [`SETTLE_TOLERANCE`].

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Point3, Vector3};

use super::PlantState;
use crate::error::{domain, Error, Result};

pub const SETTLE_TOLERANCE: f64 = 1e-7;
pub const SETTLE_MAX_ITERATIONS: usize = 10_000;

pub(crate) fn energy(state: &PlantState, x: &[Point3<f64>]) -> f64 {
    let ks = state.stiffness.stretch;
    let stretch: f64 = state
        .springs
        .iter()
        .map(|s| {
            let ext = (x[s.a] - x[s.b]).norm() - s.rest;
            0.5 * ks * ext * ext
        })
        .sum();
    let bend: f64 = state
        .bends
        .iter()
        .map(|&[a, b, c]| (x[a].coords - 2.0 * x[b].coords + x[c].coords).norm_squared())
        .sum();
    stretch + 0.5 * state.bend_coeff * bend
}

fn gradient(state: &PlantState, x: &[Point3<f64>]) -> Vec<Vector3<f64>> {
    let ks = state.stiffness.stretch;
    let mut g = vec![Vector3::zeros(); x.len()];
    for s in &state.springs {
        let d = x[s.a] - x[s.b];
        let l = d.norm();
        let f = d * (ks * (l - s.rest) / l);
        g[s.a] += f;
        g[s.b] -= f;
    }
    let cb = state.bend_coeff;
    for &[a, b, c] in &state.bends {
        let v = (x[a].coords - 2.0 * x[b].coords + x[c].coords) * cb;
        g[a] += v;
        g[b] -= 2.0 * v;
        g[c] += v;
    }
    g
}

/// Adds `block` at node pair `(i, j)` of the reduced Hessian, if both are free.
fn add_block(
    h: &mut DMatrix<f64>,
    free: &[Option<usize>],
    i: usize,
    j: usize,
    block: &Matrix3<f64>,
) {
    if let (Some(fi), Some(fj)) = (free[i], free[j]) {
        let mut view = h.fixed_view_mut::<3, 3>(3 * fi, 3 * fj);
        view += block;
    }
}

fn hessian(
    state: &PlantState,
    x: &[Point3<f64>],
    free: &[Option<usize>],
    dof: usize,
) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(dof, dof);
    let ks = state.stiffness.stretch;
    let eye = Matrix3::identity();
    for s in &state.springs {
        let d = x[s.a] - x[s.b];
        let l = d.norm();
        let n = d / l;
        let nn = n * n.transpose();
        // the transverse term is negative under compression; clamp it
        let transverse = (1.0 - s.rest / l).max(0.0);
        let k = (nn + (eye - nn) * transverse) * ks;
        add_block(&mut h, free, s.a, s.a, &k);
        add_block(&mut h, free, s.b, s.b, &k);
        add_block(&mut h, free, s.a, s.b, &-k);
        add_block(&mut h, free, s.b, s.a, &-k);
    }
    let cb = state.bend_coeff;
    let w = [1.0, -2.0, 1.0];
    for tri in &state.bends {
        for (p, &i) in tri.iter().enumerate() {
            for (q, &j) in tri.iter().enumerate() {
                add_block(&mut h, free, i, j, &(eye * (cb * w[p] * w[q])));
            }
        }
    }
    h
}

/// Returns the equilibrium configuration with the end-effector at `new_grasp`.
pub fn settle(state: &PlantState, new_grasp: Point3<f64>) -> Result<PlantState> {
    if !new_grasp.coords.iter().all(|c| c.is_finite()) {
        return Err(domain("grasp position must be finite"));
    }
    let mut next = state.clone();
    next.grasp = new_grasp;
    for &(i, off) in &state.grasped {
        next.nodes[i] = new_grasp + off;
    }
    let n = state.nodes.len();
    let mut free = vec![None; n];
    let mut free_nodes = Vec::new();
    for (i, slot) in free.iter_mut().enumerate() {
        if !state.fixed_indices.contains(&i) && !state.grasped.iter().any(|&(g, _)| g == i) {
            *slot = Some(free_nodes.len());
            free_nodes.push(i);
        }
    }
    let dof = 3 * free_nodes.len();
    if dof == 0 {
        return Ok(next);
    }

    let mut x = next.nodes.clone();
    let mut e = energy(state, &x);
    let mut last_disp = f64::INFINITY;
    for _ in 0..SETTLE_MAX_ITERATIONS {
        let g_full = gradient(state, &x);
        let g = DVector::from_iterator(
            dof,
            free_nodes
                .iter()
                .flat_map(|&i| [g_full[i].x, g_full[i].y, g_full[i].z]),
        );
        if g.amax() == 0.0 {
            break;
        }
        let mut h = hessian(state, &x, &free, dof);
        let scale = h.diagonal().amax().max(1e-300);
        let mut mu = 1e-12 * scale;
        let delta = loop {
            let mut reg = h.clone();
            for k in 0..dof {
                reg[(k, k)] += mu;
            }
            if let Some(chol) = Cholesky::new(reg) {
                break -chol.solve(&g);
            }
            mu *= 10.0;
            if mu > scale {
                // fall back to a scaled gradient step
                break -&g / scale;
            }
        };
        h.fill(0.0);

        let step_disp = |alpha: f64| {
            (0..free_nodes.len())
                .map(|k| {
                    (alpha * Vector3::new(delta[3 * k], delta[3 * k + 1], delta[3 * k + 2])).norm()
                })
                .fold(0.0, f64::max)
        };
        let full_disp = step_disp(1.0);
        let apply = |alpha: f64, x: &[Point3<f64>]| {
            let mut trial = x.to_vec();
            for (k, &i) in free_nodes.iter().enumerate() {
                trial[i] += alpha * Vector3::new(delta[3 * k], delta[3 * k + 1], delta[3 * k + 2]);
            }
            trial
        };
        if full_disp < SETTLE_TOLERANCE {
            // at this scale energy differences are below round-off
            x = apply(1.0, &x);
            next.nodes = x;
            return Ok(next);
        }
        let slope = g.dot(&delta);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = apply(alpha, &x);
            let et = energy(state, &trial);
            if et <= e + 1e-4 * alpha * slope {
                accepted = Some((trial, et));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, et)) => {
                x = trial;
                e = et;
                last_disp = step_disp(alpha);
                if last_disp < SETTLE_TOLERANCE {
                    next.nodes = x;
                    return Ok(next);
                }
            }
            None => {
                // no decrease representable: we are at the minimum to round-off
                next.nodes = x;
                return Ok(next);
            }
        }
    }
    Err(Error::SettleFailure {
        iterations: SETTLE_MAX_ITERATIONS,
        max_displacement: last_disp,
    })
}
