//! Receding-horizon shape controller.
//!
//! Over a horizon of `h` steps the features are predicted with a frozen
//! Jacobian, `s̄ = A s_k + Θ ū`, and the stacked command `ū` minimizes
//! tracking error plus effort subject to per-step saturation and a
//! workspace box on the cumulative end-effector position. Only the first
//! command of the plan is applied.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::COMMAND_SATURATION;

/// Relaxation applied to workspace bounds when the grasp sits on the box edge.
pub const BOUNDARY_RELAXATION: f64 = 1e-9;
pub const QP_MAX_ITERATIONS: usize = 10_000;
const ADMM_RHO: f64 = 1.0;
const ADMM_SIGMA: f64 = 1e-6;
const ADMM_ALPHA: f64 = 1.6;
const ADMM_EPS_ABS: f64 = 1e-8;
const ADMM_EPS_REL: f64 = 1e-6;

/// A per-step weight block: one value (scaled identity), the diagonal, or
/// the full row-major block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockWeight(pub Vec<f64>);

impl BlockWeight {
    pub fn scaled_identity(v: f64) -> Self {
        Self(vec![v])
    }

    pub fn block(&self, dim: usize) -> Result<DMatrix<f64>> {
        let v = &self.0;
        let m = if v.len() == 1 {
            DMatrix::identity(dim, dim) * v[0]
        } else if v.len() == dim {
            DMatrix::from_diagonal(&DVector::from_column_slice(v))
        } else if v.len() == dim * dim {
            DMatrix::from_row_slice(dim, dim, v)
        } else {
            return Err(Error::Config(format!(
                "weight block has {} values, expected 1, {dim} or {}",
                v.len(),
                dim * dim
            )));
        };
        if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
            return Err(Error::Config("weight block must be symmetric".into()));
        }
        if m.clone().cholesky().is_none() {
            return Err(Error::Config(
                "weight block must be positive definite".into(),
            ));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Tracking weight per horizon step (`p x p`).
    pub upsilon1: BlockWeight,
    /// Effort weight per horizon step (`3 x 3`).
    pub upsilon2: BlockWeight,
    pub u_min: [f64; 3],
    pub u_max: [f64; 3],
    pub r_min: [f64; 3],
    pub r_max: [f64; 3],
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            upsilon1: BlockWeight::scaled_identity(1.0),
            upsilon2: BlockWeight::scaled_identity(0.1),
            u_min: [-COMMAND_SATURATION; 3],
            u_max: [COMMAND_SATURATION; 3],
            r_min: [-10.0; 3],
            r_max: [10.0; 3],
        }
    }
}

impl MpcConfig {
    /// Centers the workspace box on `center`.
    pub fn with_workspace_around(mut self, center: Point3<f64>, half_extent: f64) -> Self {
        for c in 0..3 {
            self.r_min[c] = center[c] - half_extent;
            self.r_max[c] = center[c] + half_extent;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        for c in 0..3 {
            if !(self.u_min[c] < self.u_max[c]) || !(self.r_min[c] < self.r_max[c]) {
                return Err(Error::Config(
                    "command and workspace bounds need min < max".into(),
                ));
            }
            if !(self.u_min[c] <= 0.0 && self.u_max[c] >= 0.0) {
                return Err(Error::Config(
                    "command bounds must admit zero motion".into(),
                ));
            }
        }
        self.upsilon2.block(3)?;
        Ok(())
    }
}

/// `A = 1_h ⊗ E_p` and `Θ = L_h ⊗ Ĵ` with `L_h` lower-triangular ones.
pub fn build_prediction(j: &DMatrix<f64>, h: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let p = j.nrows();
    let mut a = DMatrix::zeros(p * h, p);
    let mut theta = DMatrix::zeros(p * h, 3 * h);
    for i in 0..h {
        a.view_mut((p * i, 0), (p, p)).fill_with_identity();
        for k in 0..=i {
            theta.view_mut((p * i, 3 * k), (p, 3)).copy_from(j);
        }
    }
    (a, theta)
}

/// `min ½ xᵀ H x + qᵀ x` subject to `l ≤ M x ≤ b`, `M = [I; C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub q: DVector<f64>,
    pub m: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.q.dot(x)
    }

    /// Largest bound violation of `x`.
    pub fn infeasibility(&self, x: &DVector<f64>) -> f64 {
        let mx = &self.m * x;
        (0..mx.len())
            .map(|i| (self.lower[i] - mx[i]).max(mx[i] - self.upper[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

pub fn build_qp(
    a: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    s_k: &DVector<f64>,
    s_star: &DVector<f64>,
    cfg: &MpcConfig,
    r_prev: &Point3<f64>,
) -> Result<QpProblem> {
    cfg.validate()?;
    let h = cfg.horizon;
    let p = s_k.len();
    if s_star.len() != p || a.nrows() != p * h || theta.ncols() != 3 * h {
        return Err(Error::Contract(
            "prediction matrices do not match feature length and horizon".into(),
        ));
    }
    let mut xi_min = [0.0; 3];
    let mut xi_max = [0.0; 3];
    for c in 0..3 {
        let lo = cfg.r_min[c] - r_prev[c];
        let hi = cfg.r_max[c] - r_prev[c];
        if lo > BOUNDARY_RELAXATION || hi < -BOUNDARY_RELAXATION {
            return Err(Error::InfeasibleStart {
                position: [r_prev.x, r_prev.y, r_prev.z],
            });
        }
        xi_min[c] = lo.min(-BOUNDARY_RELAXATION);
        xi_max[c] = hi.max(BOUNDARY_RELAXATION);
    }
    let w1 = cfg.upsilon1.block(p)?;
    let w2 = cfg.upsilon2.block(3)?;
    let mut ups1 = DMatrix::zeros(p * h, p * h);
    let mut ups2 = DMatrix::zeros(3 * h, 3 * h);
    for i in 0..h {
        ups1.view_mut((p * i, p * i), (p, p)).copy_from(&w1);
        ups2.view_mut((3 * i, 3 * i), (3, 3)).copy_from(&w2);
    }
    let target = DVector::from_iterator(p * h, (0..h).flat_map(|_| s_star.iter().copied()));
    let omega = a * s_k - target;
    let tw = theta.transpose() * &ups1;
    let mut hess = (&tw * theta + ups2) * 2.0;
    // symmetrize away round-off
    hess = (&hess + hess.transpose()) * 0.5;
    let q = tw * omega * 2.0;

    let n = 3 * h;
    let mut m = DMatrix::zeros(2 * n, n);
    m.view_mut((0, 0), (n, n)).fill_with_identity();
    for i in 0..h {
        for k in 0..=i {
            m.view_mut((n + 3 * i, 3 * k), (3, 3)).fill_with_identity();
        }
    }
    let mut lower = DVector::zeros(2 * n);
    let mut upper = DVector::zeros(2 * n);
    for i in 0..h {
        for c in 0..3 {
            lower[3 * i + c] = cfg.u_min[c];
            upper[3 * i + c] = cfg.u_max[c];
            lower[n + 3 * i + c] = xi_min[c];
            upper[n + 3 * i + c] = xi_max[c];
        }
    }
    Ok(QpProblem {
        h: hess,
        q,
        m,
        lower,
        upper,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `M x`: negative on active lower bounds, positive on
    /// active upper bounds.
    pub y: DVector<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    /// `‖Hx + q + Mᵀy‖_∞`.
    pub dual_residual: f64,
    pub active: usize,
    pub polished: bool,
}

fn project(v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].clamp(lo[i], hi[i]))
}

fn stationarity(prob: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (&prob.h * x + &prob.q + prob.m.transpose() * y).amax()
}

/// Solves the equality-constrained problem on a guessed active set and
/// accepts it if it is primal feasible with correctly signed multipliers.
fn polish(
    prob: &QpProblem,
    y_admm: &DVector<f64>,
    z: &DVector<f64>,
    tol: f64,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = prob.h.nrows();
    let rows = prob.m.nrows();
    // -1: lower active, +1: upper active
    let mut side = vec![0i8; rows];
    for i in 0..rows {
        if y_admm[i] < 0.0 && z[i] - prob.lower[i] < tol.max(1e-7 * (prob.upper[i] - prob.lower[i]))
        {
            side[i] = -1;
        } else if y_admm[i] > 0.0
            && prob.upper[i] - z[i] < tol.max(1e-7 * (prob.upper[i] - prob.lower[i]))
        {
            side[i] = 1;
        }
    }
    for _ in 0..2 * rows + 1 {
        let act: Vec<usize> = (0..rows).filter(|&i| side[i] != 0).collect();
        let k = act.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&prob.h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&prob.q));
        for (r, &i) in act.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = prob.m[(i, c)];
                kkt[(c, n + r)] = prob.m[(i, c)];
            }
            rhs[n + r] = if side[i] < 0 {
                prob.lower[i]
            } else {
                prob.upper[i]
            };
        }
        let sol = kkt
            .clone()
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .or_else(|| {
                // duplicate active rows make the KKT matrix singular
                kkt.svd(true, true).solve(&rhs, 1e-12).ok()
            })?;
        let x = sol.rows(0, n).into_owned();
        let mut y = DVector::zeros(rows);
        for (r, &i) in act.iter().enumerate() {
            y[i] = sol[n + r];
        }
        // drop the active constraint with the most wrongly signed multiplier
        let worst_sign = act
            .iter()
            .map(|&i| (i, -(side[i] as f64) * y[i]))
            .filter(|&(_, v)| v > tol)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = worst_sign {
            side[i] = 0;
            continue;
        }
        // add the most violated inactive constraint
        let mx = &prob.m * &x;
        let worst_viol = (0..rows)
            .filter(|&i| side[i] == 0)
            .map(|i| {
                let lo = prob.lower[i] - mx[i];
                let hi = mx[i] - prob.upper[i];
                if lo > hi {
                    (i, -1i8, lo)
                } else {
                    (i, 1i8, hi)
                }
            })
            .filter(|&(_, _, v)| v > tol * 1e-3)
            .max_by(|a, b| a.2.total_cmp(&b.2));
        match worst_viol {
            Some((i, s, _)) => side[i] = s,
            None => return Some((x, y)),
        }
    }
    None
}

/// Solves `[H Mₐᵀ; Mₐ 0] [p; λ] = [−g; 0]` for the rows in `act`.
fn working_set_step(
    prob: &QpProblem,
    act: &[usize],
    g: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = prob.h.nrows();
    let k = act.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.h);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-g));
    for (r, &i) in act.iter().enumerate() {
        for c in 0..n {
            kkt[(n + r, c)] = prob.m[(i, c)];
            kkt[(c, n + r)] = prob.m[(i, c)];
        }
    }
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .or_else(|| kkt.svd(true, true).solve(&rhs, 1e-12).ok())?;
    Some((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
}

/// Primal active-set method started from the feasible point `x = 0`.
/// Used when the polished ADMM guess fails on degenerate active sets.
fn primal_active_set(prob: &QpProblem, tol: f64) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = prob.h.nrows();
    let rows = prob.m.nrows();
    let mut x = DVector::zeros(n);
    let mut side = vec![0i8; rows];
    let mut at_minimizer = false;
    for _ in 0..20 * (n + rows) {
        let act: Vec<usize> = (0..rows).filter(|&i| side[i] != 0).collect();
        let g = &prob.h * &x + &prob.q;
        let (p, lambda) = working_set_step(prob, &act, &g)?;
        if at_minimizer || p.amax() <= 1e-15 * x.amax().max(1e-300) {
            let mut y = DVector::zeros(rows);
            for (r, &i) in act.iter().enumerate() {
                y[i] = lambda[r];
            }
            let scale = g.amax().max(1.0);
            let worst = act
                .iter()
                .map(|&i| (i, -(side[i] as f64) * y[i]))
                .filter(|&(_, v)| v > tol * 1e-3 * scale)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((i, _)) => {
                    side[i] = 0;
                    at_minimizer = false;
                    continue;
                }
                None => return Some((x, y)),
            }
        }
        let mx = &prob.m * &x;
        let mp = &prob.m * &p;
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in (0..rows).filter(|&i| side[i] == 0) {
            // rows parallel to the working set see only round-off
            if mp[i].abs() <= 1e-12 * p.amax() * prob.m.row(i).amax() {
                continue;
            }
            let (room, s) = if mp[i] > 0.0 {
                (prob.upper[i] - mx[i], 1i8)
            } else if mp[i] < 0.0 {
                (prob.lower[i] - mx[i], -1i8)
            } else {
                continue;
            };
            let a = (room / mp[i]).max(0.0);
            if a < alpha {
                alpha = a;
                blocking = Some((i, s));
            }
        }
        x += &p * alpha;
        match blocking {
            Some((i, s)) => side[i] = s,
            None => at_minimizer = true,
        }
    }
    None
}

/// Diagonal equilibration of the QP data: `x = D x̄`, rows of `M` scaled by
/// `E`, cost scaled by `c`.
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn ruiz(prob: &QpProblem) -> Scaling {
    let n = prob.h.nrows();
    let rows = prob.m.nrows();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(rows, 1.0);
    let mut h = prob.h.clone();
    let mut m = prob.m.clone();
    for _ in 0..25 {
        let mut dd = DVector::zeros(n);
        for j in 0..n {
            let col = h.column(j).amax().max(m.column(j).amax());
            dd[j] = if col > 0.0 { 1.0 / col.sqrt() } else { 1.0 };
        }
        let ee = DVector::from_fn(rows, |i, _| {
            let r = m.row(i).amax();
            if r > 0.0 {
                1.0 / r.sqrt()
            } else {
                1.0
            }
        });
        for j in 0..n {
            for i in 0..n {
                h[(i, j)] *= dd[i] * dd[j];
            }
            for i in 0..rows {
                m[(i, j)] *= ee[i] * dd[j];
            }
        }
        d.component_mul_assign(&dd);
        e.component_mul_assign(&ee);
    }
    let qs = prob.q.component_mul(&d).amax();
    let mean_col = (0..n).map(|j| h.column(j).amax()).sum::<f64>() / n as f64;
    let c = 1.0 / mean_col.max(qs).clamp(1e-4, 1e4);
    Scaling { d, e, c }
}

/// Operator-splitting QP solve followed by active-set polishing.
///
/// The iterations run on a Ruiz-equilibrated copy of the problem; residuals
/// and the returned solution are in the original units.
pub fn solve_qp(prob: &QpProblem, tol: f64) -> Result<QpSolution> {
    let n = prob.h.nrows();
    let rows = prob.m.nrows();
    if prob.h.ncols() != n
        || prob.q.len() != n
        || prob.m.ncols() != n
        || prob.lower.len() != rows
        || prob.upper.len() != rows
    {
        return Err(Error::Contract("QP dimensions are inconsistent".into()));
    }
    let sc = ruiz(prob);
    let hs = DMatrix::from_fn(n, n, |i, j| sc.c * sc.d[i] * prob.h[(i, j)] * sc.d[j]);
    let qs = prob.q.component_mul(&sc.d) * sc.c;
    let ms = DMatrix::from_fn(rows, n, |i, j| sc.e[i] * prob.m[(i, j)] * sc.d[j]);
    let ls = prob.lower.component_mul(&sc.e);
    let us = prob.upper.component_mul(&sc.e);

    let mt = ms.transpose();
    let mut kkt = &hs + &mt * &ms * ADMM_RHO;
    for i in 0..n {
        kkt[(i, i)] += ADMM_SIGMA;
    }
    let chol = kkt
        .cholesky()
        .ok_or_else(|| Error::Contract("QP Hessian is not positive definite".into()))?;

    let unscale = |xs: &DVector<f64>, ys: &DVector<f64>, zs: &DVector<f64>| {
        (
            xs.component_mul(&sc.d),
            ys.component_mul(&sc.e) / sc.c,
            zs.component_div(&sc.e),
        )
    };
    let mut xs = DVector::zeros(n);
    let mut zs = project(&DVector::zeros(rows), &ls, &us);
    let mut ys = DVector::zeros(rows);
    let mut iterations = 0;
    let (mut r_prim, mut r_dual) = (f64::INFINITY, f64::INFINITY);
    let mut converged = false;
    let mt_orig = prob.m.transpose();
    while iterations < QP_MAX_ITERATIONS {
        iterations += 1;
        let rhs = &xs * ADMM_SIGMA - &qs + &mt * (&zs * ADMM_RHO - &ys);
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &ms * &x_tilde;
        xs = &x_tilde * ADMM_ALPHA + &xs * (1.0 - ADMM_ALPHA);
        let z_relaxed = &z_tilde * ADMM_ALPHA + &zs * (1.0 - ADMM_ALPHA);
        let z_next = project(&(&z_relaxed + &ys / ADMM_RHO), &ls, &us);
        ys += (&z_relaxed - &z_next) * ADMM_RHO;
        zs = z_next;

        if iterations % 10 == 0 || iterations == QP_MAX_ITERATIONS {
            let (x, y, z) = unscale(&xs, &ys, &zs);
            let mx = &prob.m * &x;
            let hx = &prob.h * &x;
            let mty = &mt_orig * &y;
            r_prim = (&mx - &z).amax();
            r_dual = (&hx + &prob.q + &mty).amax();
            let eps_prim = ADMM_EPS_ABS + ADMM_EPS_REL * mx.amax().max(z.amax());
            let eps_dual =
                ADMM_EPS_ABS + ADMM_EPS_REL * hx.amax().max(mty.amax()).max(prob.q.amax());
            if r_prim <= eps_prim && r_dual <= eps_dual {
                converged = true;
                break;
            }
        }
    }
    let (x, y, z) = unscale(&xs, &ys, &zs);

    // a feasible KKT point with correctly signed multipliers is the optimum
    if let Some((xp, yp)) = polish(prob, &y, &z, tol.max(1e-12)) {
        let infeas = prob.infeasibility(&xp);
        let stat = stationarity(prob, &xp, &yp);
        let magnitude = prob.q.amax().max((&prob.h * &xp).amax()).max(1.0);
        if infeas <= tol && stat <= tol * magnitude {
            let active = yp.iter().filter(|v| **v != 0.0).count();
            return Ok(QpSolution {
                x: xp,
                y: yp,
                iterations,
                primal_residual: infeas,
                dual_residual: stat,
                active,
                polished: true,
            });
        }
    }
    if prob.infeasibility(&DVector::zeros(n)) <= 0.0 {
        if let Some((xa, ya)) = primal_active_set(prob, tol.max(1e-12)) {
            let infeas = prob.infeasibility(&xa);
            let stat = stationarity(prob, &xa, &ya);
            let magnitude = prob.q.amax().max((&prob.h * &xa).amax()).max(1.0);
            if infeas <= tol && stat <= tol * magnitude {
                let active = ya.iter().filter(|v| **v != 0.0).count();
                return Ok(QpSolution {
                    x: xa,
                    y: ya,
                    iterations,
                    primal_residual: infeas,
                    dual_residual: stat,
                    active,
                    polished: true,
                });
            }
        }
    }
    if !converged {
        return Err(Error::SolverFailure {
            iterations,
            primal: r_prim,
            dual: r_dual,
        });
    }
    let mx = &prob.m * &x;
    let active = (0..rows)
        .filter(|&i| {
            mx[i] - prob.lower[i] <= ADMM_EPS_ABS.max(tol)
                || prob.upper[i] - mx[i] <= ADMM_EPS_ABS.max(tol)
        })
        .count();
    Ok(QpSolution {
        primal_residual: prob.infeasibility(&x),
        dual_residual: stationarity(prob, &x, &y),
        x,
        y,
        iterations,
        active,
        polished: false,
    })
}

/// The first command of a stacked plan.
pub fn step_command(solution: &DVector<f64>) -> Result<Vector3<f64>> {
    if solution.len() < 3 || !solution.len().is_multiple_of(3) {
        return Err(Error::Contract(format!(
            "plan length {} is not a positive multiple of 3",
            solution.len()
        )));
    }
    Ok(Vector3::new(solution[0], solution[1], solution[2]))
}

/// Result of one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    pub command: Vector3<f64>,
    pub solution: QpSolution,
}

/// Builds and solves the QP for the current state and returns the first
/// command, clamped onto its hard bounds to remove solver round-off.
pub fn control(
    j: &DMatrix<f64>,
    s_k: &DVector<f64>,
    s_star: &DVector<f64>,
    cfg: &MpcConfig,
    r_prev: &Point3<f64>,
) -> Result<ControlStep> {
    let (a, theta) = build_prediction(j, cfg.horizon);
    let prob = build_qp(&a, &theta, s_k, s_star, cfg, r_prev)?;
    let solution = solve_qp(&prob, 1e-9)?;
    let mut command = step_command(&solution.x)?;
    for c in 0..3 {
        let lo = cfg.u_min[c].max(cfg.r_min[c] - r_prev[c]).min(0.0);
        let hi = cfg.u_max[c].min(cfg.r_max[c] - r_prev[c]).max(0.0);
        command[c] = command[c].clamp(lo, hi);
    }
    Ok(ControlStep { command, solution })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerTraceRow {
    pub step: usize,
    pub err_norm: f64,
    pub ux: f64,
    pub uy: f64,
    pub uz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub active_constraints: usize,
    pub qp_iters: usize,
    pub qp_residual: f64,
}

pub fn write_controller_trace(path: &Path, rows: &[ControllerTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
