//! Online estimation of the deformation Jacobian `Δs ≈ Ĵ u`.
//!
//! The receding-time estimator picks the increment `ΔĴ` that minimizes a
//! weighted sum of
//! - `Q1`: discounted prediction error over the last `η` transitions,
//! - `Q2`: `‖ΔĴ‖_F²`, keeping the estimate smooth in time,
//! - `Q3`: the squared eigenvalue ratio of `ĴᵀĴ`, penalizing directions in
//!   which the shape can barely be moved.
//!
//! A Broyden rank-one update is provided as a baseline.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::sym_eigenvalues;

/// Commands shorter than this are treated as no motion.
pub const MIN_MOTION: f64 = 1e-9;
/// Stand-in for an infinite `Q3` inside the optimizer.
pub const SINGULAR_PENALTY: f64 = 1e12;
const Q3_EIG_FLOOR: f64 = 1e-12;
const FD_STEP: f64 = 1e-6;
const REFINE_ITERATIONS: usize = 100;

/// One observed transition: feature change and the command that caused it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub ds: DVector<f64>,
    pub u: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    pub j_hat: DMatrix<f64>,
    history: VecDeque<Transition>,
    eta_max: usize,
    unit_scale: f64,
}

impl JacobianEstimate {
    pub fn new(j_hat: DMatrix<f64>, eta_max: usize) -> Result<Self> {
        if j_hat.ncols() != 3 || j_hat.nrows() == 0 {
            return Err(domain("Jacobian estimate must be p x 3"));
        }
        if !crate::linalg::all_finite(j_hat.as_slice()) {
            return Err(domain("Jacobian estimate must be finite"));
        }
        if eta_max == 0 {
            return Err(domain("history capacity must be at least 1"));
        }
        Ok(Self {
            j_hat,
            history: VecDeque::with_capacity(eta_max),
            eta_max,
            unit_scale: 1.0,
        })
    }

    pub fn zeros(p: usize, eta_max: usize) -> Result<Self> {
        Self::new(DMatrix::zeros(p, 3), eta_max)
    }

    /// Stores transitions multiplied by `scale`. `Ĵ` is unaffected (both
    /// sides of `Δs = Ĵu` scale alike) but `Q1` is measured in the scaled
    /// units, which sets its balance against `Q2` and `Q3`.
    pub fn with_unit_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(domain("unit scale must be positive"));
        }
        for t in &mut self.history {
            t.ds *= scale / self.unit_scale;
            t.u *= scale / self.unit_scale;
        }
        self.unit_scale = scale;
        Ok(self)
    }

    pub fn unit_scale(&self) -> f64 {
        self.unit_scale
    }

    pub fn p(&self) -> usize {
        self.j_hat.nrows()
    }

    pub fn eta_max(&self) -> usize {
        self.eta_max
    }

    /// Changes the history capacity, dropping the oldest transitions if it shrinks.
    pub fn with_window(mut self, eta_max: usize) -> Result<Self> {
        if eta_max == 0 {
            return Err(domain("window length must be at least 1"));
        }
        self.history.truncate(eta_max);
        self.eta_max = eta_max;
        Ok(self)
    }

    /// Stored transitions, most recent first (in scaled units).
    pub fn history(&self) -> &VecDeque<Transition> {
        &self.history
    }

    pub fn push(&mut self, ds: &DVector<f64>, u: &Vector3<f64>) -> Result<()> {
        if ds.len() != self.p() {
            return Err(Error::Contract(format!(
                "feature change has length {}, estimate expects {}",
                ds.len(),
                self.p()
            )));
        }
        if !crate::linalg::all_finite(ds.as_slice()) || !crate::linalg::all_finite(u.as_slice()) {
            return Err(domain("transition must be finite"));
        }
        if self.history.len() == self.eta_max {
            self.history.pop_back();
        }
        self.history.push_front(Transition {
            ds: ds * self.unit_scale,
            u: u * self.unit_scale,
        });
        Ok(())
    }

    /// `Ĵu`.
    pub fn predict(&self, u: &Vector3<f64>) -> DVector<f64> {
        &self.j_hat * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtmWeights {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub eta: usize,
    pub gamma: f64,
}

impl Default for RtmWeights {
    fn default() -> Self {
        Self {
            mu1: 0.8,
            mu2: 0.1,
            mu3: 0.1,
            eta: 10,
            gamma: 0.9,
        }
    }
}

impl RtmWeights {
    pub fn validate(&self) -> Result<()> {
        let mus = [self.mu1, self.mu2, self.mu3];
        if mus.iter().any(|m| !(*m >= 0.0))
            || ((self.mu1 + self.mu2 + self.mu3) - 1.0).abs() > 1e-12
        {
            return Err(Error::Config(
                "RTM weights must be nonnegative and sum to 1".into(),
            ));
        }
        if self.eta == 0 {
            return Err(Error::Config(
                "RTM window must hold at least one transition".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("forgetting factor must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

pub fn q1_receding_error(
    j_prev: &DMatrix<f64>,
    dj: &DMatrix<f64>,
    hist: &VecDeque<Transition>,
    gamma: f64,
    eta: usize,
) -> Result<f64> {
    if hist.is_empty() {
        return Err(domain("receding error needs at least one transition"));
    }
    let j = j_prev + dj;
    let mut weight = 1.0;
    let mut total = 0.0;
    for t in hist.iter().take(eta) {
        weight *= gamma;
        total += weight * (&t.ds - &j * t.u).norm_squared();
    }
    Ok(total)
}

pub fn q2_smoothness(dj: &DMatrix<f64>) -> f64 {
    dj.norm_squared()
}

/// `(λ_max / λ_min)²` of `JᵀJ`, or `+∞` when `λ_min ≤ 1e-12`.
pub fn q3_manipulability(j: &DMatrix<f64>) -> f64 {
    let gram: Matrix3<f64> = {
        let g = j.transpose() * j;
        Matrix3::from_fn(|r, c| g[(r, c)])
    };
    let eig = sym_eigenvalues(&DMatrix::from_column_slice(3, 3, gram.as_slice()));
    let (lo, hi) = (eig[0], eig[eig.len() - 1]);
    if !(lo > Q3_EIG_FLOOR) {
        return f64::INFINITY;
    }
    (hi / lo).powi(2)
}

/// Values of the three terms and the weighted total at an accepted update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub objective: f64,
}

struct Objective<'a> {
    j_prev: &'a DMatrix<f64>,
    hist: &'a VecDeque<Transition>,
    w: RtmWeights,
}

impl Objective<'_> {
    fn terms(&self, dj: &DMatrix<f64>) -> ObjectiveTerms {
        let q1 =
            q1_receding_error(self.j_prev, dj, self.hist, self.w.gamma, self.w.eta).unwrap_or(0.0);
        let q2 = q2_smoothness(dj);
        let q3 = q3_manipulability(&(self.j_prev + dj));
        let objective = self.w.mu1 * q1 + self.w.mu2 * q2 + self.w.mu3 * q3.min(SINGULAR_PENALTY);
        ObjectiveTerms {
            q1,
            q2,
            q3,
            objective,
        }
    }

    fn value(&self, dj: &DMatrix<f64>) -> f64 {
        self.terms(dj).objective
    }

    /// Analytic gradient of the quadratic part plus a central-difference
    /// gradient of the manipulability term.
    fn gradient(&self, dj: &DMatrix<f64>) -> DMatrix<f64> {
        let j = self.j_prev + dj;
        let mut g = dj * (2.0 * self.w.mu2);
        let mut weight = 1.0;
        for t in self.hist.iter().take(self.w.eta) {
            weight *= self.w.gamma;
            let r = &t.ds - &j * t.u;
            g -= (r * t.u.transpose()) * (2.0 * self.w.mu1 * weight);
        }
        if self.w.mu3 > 0.0 {
            let q3 = |m: &DMatrix<f64>| q3_manipulability(m).min(SINGULAR_PENALTY);
            let mut probe = j.clone();
            for idx in 0..probe.len() {
                let orig = probe[idx];
                probe[idx] = orig + FD_STEP;
                let up = q3(&probe);
                probe[idx] = orig - FD_STEP;
                let down = q3(&probe);
                probe[idx] = orig;
                g[idx] += self.w.mu3 * (up - down) / (2.0 * FD_STEP);
            }
        }
        g
    }
}

/// Minimizer of `μ1 Q1 + μ2 Q2`: one ridge regression per feature row, all
/// sharing the same 3x3 normal matrix.
pub fn ridge_increment(
    j_prev: &DMatrix<f64>,
    hist: &VecDeque<Transition>,
    w: &RtmWeights,
) -> DMatrix<f64> {
    let p = j_prev.nrows();
    let mut normal = Matrix3::identity() * w.mu2;
    let mut rhs = DMatrix::zeros(3, p);
    let mut weight = 1.0;
    for t in hist.iter().take(w.eta) {
        weight *= w.gamma;
        let r = &t.ds - j_prev * t.u;
        normal += t.u * t.u.transpose() * (w.mu1 * weight);
        rhs += DMatrix::from_column_slice(3, 1, t.u.as_slice()) * r.transpose() * (w.mu1 * weight);
    }
    let normal = DMatrix::from_column_slice(3, 3, normal.as_slice());
    let solved = match normal.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            normal
                .pseudo_inverse(1e-14)
                .expect("SVD of a 3x3 matrix succeeds")
                * rhs
        }
    };
    solved.transpose()
}

/// Receding-time update. Returns the new estimate and the objective terms
/// at the accepted increment. Zero motion leaves the estimate untouched.
pub fn rtm_update(
    est: &JacobianEstimate,
    w: &RtmWeights,
    ds: &DVector<f64>,
    u: &Vector3<f64>,
) -> Result<(JacobianEstimate, Option<ObjectiveTerms>)> {
    w.validate()?;
    if ds.len() != est.p() {
        return Err(Error::Contract(format!(
            "feature change has length {}, estimate expects {}",
            ds.len(),
            est.p()
        )));
    }
    if u.norm() <= MIN_MOTION {
        return Ok((est.clone(), None));
    }
    let mut next = est.clone();
    next.push(ds, u)?;
    let obj = Objective {
        j_prev: &est.j_hat,
        hist: &next.history,
        w: *w,
    };
    let zero = DMatrix::zeros(est.p(), 3);
    let f_zero = obj.value(&zero);

    let ridge = ridge_increment(&est.j_hat, &next.history, w);
    let f_ridge = obj.value(&ridge);
    let (mut dj, mut f) = if f_ridge <= f_zero || !f_zero.is_finite() {
        (ridge, f_ridge)
    } else {
        (zero, f_zero)
    };

    if w.mu3 > 0.0 {
        let mut step = 1.0;
        for _ in 0..REFINE_ITERATIONS {
            let g = obj.gradient(&dj);
            let gg = g.norm_squared();
            if !(gg > 0.0) || !gg.is_finite() {
                break;
            }
            let mut improved = false;
            for _ in 0..60 {
                let trial = &dj - &g * step;
                let ft = obj.value(&trial);
                if ft <= f - 1e-4 * step * gg {
                    dj = trial;
                    f = ft;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
            step *= 2.0;
        }
    }

    if !(f <= f_zero) && f_zero.is_finite() {
        return Err(Error::Estimator(format!(
            "update raised the objective from {f_zero} to {f}"
        )));
    }
    next.j_hat = &est.j_hat + &dj;
    if !crate::linalg::all_finite(next.j_hat.as_slice()) {
        return Err(Error::Estimator(
            "Jacobian update produced non-finite entries".into(),
        ));
    }
    let terms = obj.terms(&dj);
    Ok((next, Some(terms)))
}

/// Objective terms of the current estimate (zero increment) over its window.
pub fn current_terms(est: &JacobianEstimate, w: &RtmWeights) -> ObjectiveTerms {
    let zero = DMatrix::zeros(est.p(), 3);
    Objective {
        j_prev: &est.j_hat,
        hist: &est.history,
        w: *w,
    }
    .terms(&zero)
}

/// `J + λ (Δs − J u) uᵀ / (uᵀu)`.
pub fn broyden_update(
    j: &DMatrix<f64>,
    ds: &DVector<f64>,
    u: &Vector3<f64>,
    gain: f64,
) -> Result<DMatrix<f64>> {
    let uu = u.norm_squared();
    if u.norm() <= MIN_MOTION {
        return Err(domain("Broyden update needs a nonzero command"));
    }
    if ds.len() != j.nrows() {
        return Err(Error::Contract(
            "feature change does not match Jacobian rows".into(),
        ));
    }
    let innovation = ds - j * u;
    let delta = innovation * u.transpose() * (gain / uu);
    Ok(DMatrix::from_fn(j.nrows(), 3, |r, c| {
        j[(r, c)] + delta[(r, c)]
    }))
}

/// Default gain of the Broyden baseline.
pub const BROYDEN_GAIN: f64 = 0.5;

/// Anything that can be nudged along an axis and report its features.
pub trait ProbePlant {
    fn features(&mut self) -> Result<DVector<f64>>;
    fn apply(&mut self, u: &Vector3<f64>) -> Result<()>;
}

/// Finite-difference Jacobian from sequential `+x`, `+y`, `+z` probes of
/// `amplitude` metres. The three probes also seed the history.
pub fn calibrate_initial<P: ProbePlant + ?Sized>(
    plant: &mut P,
    amplitude: f64,
    eta_max: usize,
) -> Result<JacobianEstimate> {
    if !(amplitude > 0.0 && amplitude.is_finite()) {
        return Err(domain("probe amplitude must be positive"));
    }
    let mut before = plant.features()?;
    let mut j = DMatrix::zeros(before.len(), 3);
    let mut pairs = Vec::with_capacity(3);
    for axis in 0..3 {
        let mut u = Vector3::zeros();
        u[axis] = amplitude;
        plant.apply(&u)?;
        let after = plant.features()?;
        if after.len() != before.len() {
            return Err(Error::Contract(
                "feature length changed during calibration".into(),
            ));
        }
        let ds = &after - &before;
        j.set_column(axis, &(&ds / amplitude));
        pairs.push((ds, u));
        before = after;
    }
    let mut est = JacobianEstimate::new(j, eta_max)?;
    for (ds, u) in &pairs {
        est.push(ds, u)?;
    }
    Ok(est)
}

/// `(T1, T2, ŝ_{k+1})` where `ŝ_{k+1} = ŝ_k + Ĵu` is the open-loop prediction,
/// `T1 = ‖ŝ_{k+1} − s_{k+1}‖` and `T2 = ‖Δs − Ĵu‖`.
pub fn metrics_t1_t2(
    j: &DMatrix<f64>,
    s_hat_prev: &DVector<f64>,
    s_now: &DVector<f64>,
    ds: &DVector<f64>,
    u: &Vector3<f64>,
) -> (f64, f64, DVector<f64>) {
    let pred = j * u;
    let s_hat = s_hat_prev + &pred;
    ((&s_hat - s_now).norm(), (ds - pred).norm(), s_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorTraceRow {
    pub step: usize,
    #[serde(rename = "T1")]
    pub t1: f64,
    #[serde(rename = "T2")]
    pub t2: f64,
    #[serde(rename = "Q1")]
    pub q1: f64,
    #[serde(rename = "Q2")]
    pub q2: f64,
    #[serde(rename = "Q3")]
    pub q3: f64,
    pub objective: f64,
    pub eta: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
}

pub fn write_estimator_trace(path: &Path, rows: &[EstimatorTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hist(pairs: &[(Vec<f64>, [f64; 3])]) -> VecDeque<Transition> {
        pairs
            .iter()
            .map(|(ds, u)| Transition {
                ds: DVector::from_vec(ds.clone()),
                u: Vector3::from(*u),
            })
            .collect()
    }

    #[test]
    fn q1_examples() {
        let z = DMatrix::zeros(2, 3);
        let h = hist(&[(vec![1.0, 0.0], [1.0, 0.0, 0.0])]);
        assert_eq!(q1_receding_error(&z, &z, &h, 1.0, 1).unwrap(), 1.0);
        let h2 = hist(&[
            (vec![1.0, 0.0], [1.0, 0.0, 0.0]),
            (vec![0.0, 1.0], [0.0, 1.0, 0.0]),
        ]);
        assert!((q1_receding_error(&z, &z, &h2, 0.5, 2).unwrap() - 0.75).abs() < 1e-15);
        let exact = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(q1_receding_error(&z, &exact, &h2, 0.5, 2).unwrap(), 0.0);
        assert!(q1_receding_error(&z, &z, &VecDeque::new(), 0.5, 2).is_err());
    }

    #[test]
    fn q2_examples() {
        let mut d = DMatrix::zeros(4, 3);
        assert_eq!(q2_smoothness(&d), 0.0);
        d[(2, 1)] = 2.0;
        assert_eq!(q2_smoothness(&d), 4.0);
    }

    #[test]
    fn q3_examples() {
        assert!((q3_manipulability(&DMatrix::identity(3, 3)) - 1.0).abs() < 1e-12);
        let mut j = DMatrix::zeros(5, 3);
        j[(0, 0)] = 2.0;
        j[(1, 1)] = 1.0;
        j[(2, 2)] = 1.0;
        assert!((q3_manipulability(&j) - 16.0).abs() < 1e-10);
        let mut rank2 = DMatrix::zeros(4, 3);
        rank2[(0, 0)] = 1.0;
        rank2[(1, 1)] = 1.0;
        assert_eq!(q3_manipulability(&rank2), f64::INFINITY);
    }

    #[test]
    fn ridge_example_from_contract() {
        let w = RtmWeights {
            mu1: 0.99,
            mu2: 0.01,
            mu3: 0.0,
            eta: 1,
            gamma: 1.0,
        };
        let est = JacobianEstimate::zeros(2, 1).unwrap();
        let (next, terms) = rtm_update(
            &est,
            &w,
            &DVector::from_vec(vec![1.0, 0.0]),
            &Vector3::new(1.0, 0.0, 0.0),
        )
        .unwrap();
        assert!(terms.is_some());
        let mut expected = DMatrix::zeros(2, 3);
        expected[(0, 0)] = 0.99;
        assert!((next.j_hat - expected).amax() < 1e-14);
    }

    #[test]
    fn zero_motion_skips() {
        let est = JacobianEstimate::zeros(2, 3).unwrap();
        let (next, terms) = rtm_update(
            &est,
            &RtmWeights::default(),
            &DVector::from_vec(vec![1.0, 0.0]),
            &Vector3::zeros(),
        )
        .unwrap();
        assert!(terms.is_none());
        assert_eq!(next, est);
    }

    #[test]
    fn forgetting_favours_recent() {
        let z = DMatrix::zeros(1, 3);
        let base = hist(&[
            (vec![1.0], [0.0; 3]),
            (vec![1.0], [0.0; 3]),
            (vec![1.0], [0.0; 3]),
        ]);
        let q = |h: &VecDeque<Transition>| q1_receding_error(&z, &z, h, 0.8, 3).unwrap();
        let mut newest = base.clone();
        newest[0].ds *= 10.0;
        let mut oldest = base.clone();
        oldest[2].ds *= 10.0;
        assert!(q(&oldest) - q(&base) < q(&newest) - q(&base));
    }

    #[test]
    fn broyden_examples() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let u = Vector3::new(0.1, -0.2, 0.3);
        let same = broyden_update(&j, &(&j * u), &u, 0.7).unwrap();
        assert!((same - &j).amax() < 1e-15);
        let z = DMatrix::zeros(2, 3);
        let one = broyden_update(
            &z,
            &DVector::from_vec(vec![1.0, 0.0]),
            &Vector3::new(1.0, 0.0, 0.0),
            1.0,
        )
        .unwrap();
        assert_eq!(one[(0, 0)], 1.0);
        assert!(broyden_update(&z, &DVector::zeros(2), &Vector3::zeros(), 1.0).is_err());
    }

    #[test]
    fn broyden_converges_on_linear_data() {
        let a = DMatrix::from_row_slice(
            4,
            3,
            &[
                1.0, -0.5, 0.2, 0.3, 2.0, 0.0, -1.0, 0.4, 0.9, 0.0, 0.1, -0.7,
            ],
        );
        let mut j = DMatrix::zeros(4, 3);
        let mut last = f64::INFINITY;
        for k in 0..200 {
            let t = k as f64;
            let u = Vector3::new(
                (0.7 * t).sin(),
                (1.3 * t + 0.5).cos(),
                (0.37 * t).sin() + 0.2,
            );
            let ds = &a * u;
            last = (&ds - &j * u).norm();
            j = broyden_update(&j, &ds, &u, BROYDEN_GAIN).unwrap();
        }
        assert!(last < 1e-6, "residual {last}");
    }

    struct Linear {
        a: DMatrix<f64>,
        r: Vector3<f64>,
    }

    impl ProbePlant for Linear {
        fn features(&mut self) -> Result<DVector<f64>> {
            Ok(&self.a * self.r)
        }
        fn apply(&mut self, u: &Vector3<f64>) -> Result<()> {
            self.r += u;
            Ok(())
        }
    }

    #[test]
    fn calibration_recovers_linear_map() {
        let a = DMatrix::from_fn(6, 3, |r, c| ((r * 3 + c) as f64 * 0.7).sin());
        let mut plant = Linear {
            a: a.clone(),
            r: Vector3::new(0.1, 0.2, 0.3),
        };
        let est = calibrate_initial(&mut plant, 0.004, 10).unwrap();
        assert!((&est.j_hat - a).amax() < 1e-6);
        assert_eq!(est.history().len(), 3);
        assert_eq!(est.history()[0].u, Vector3::new(0.0, 0.0, 0.004));
        assert!(calibrate_initial(&mut plant, 0.0, 10).is_err());
    }

    #[test]
    fn t1_t2_examples() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let u = Vector3::new(0.1, 0.2, 0.0);
        let s0 = DVector::from_vec(vec![1.0, 1.0]);
        let ds = &j * u;
        let s1 = &s0 + &ds;
        let (t1, t2, _) = metrics_t1_t2(&j, &s0, &s1, &ds, &u);
        assert!(t1 < 1e-15 && t2 < 1e-15);
        let (_, t2, _) = metrics_t1_t2(&DMatrix::zeros(2, 3), &s0, &s1, &ds, &u);
        assert!((t2 - ds.norm()).abs() < 1e-15);
    }

    #[test]
    fn unit_scale_leaves_ridge_jacobian_unchanged_with_no_regularization() {
        let w = RtmWeights {
            mu1: 1.0,
            mu2: 0.0,
            mu3: 0.0,
            eta: 5,
            gamma: 0.9,
        };
        let a = DMatrix::from_fn(4, 3, |r, c| (r as f64 - c as f64) * 0.3 + 0.1);
        let run = |scale: f64| {
            let mut est = JacobianEstimate::zeros(4, 5)
                .unwrap()
                .with_unit_scale(scale)
                .unwrap();
            for k in 0..5 {
                let u = Vector3::new(
                    (k as f64).sin(),
                    (2.0 * k as f64).cos(),
                    0.3 + k as f64 * 0.1,
                ) * 0.003;
                est = rtm_update(&est, &w, &(&a * u), &u).unwrap().0;
            }
            est.j_hat
        };
        assert!((run(1.0) - run(1000.0)).amax() < 1e-8);
    }

    /// Independent oracle for `μ3 = 0`: stack every weighted residual of every
    /// feature row into one least-squares system over `vec(ΔĴ)`.
    fn stacked_oracle(
        j_prev: &DMatrix<f64>,
        hist: &VecDeque<Transition>,
        w: &RtmWeights,
    ) -> DMatrix<f64> {
        let p = j_prev.nrows();
        let window: Vec<_> = hist.iter().take(w.eta).collect();
        let rows = window.len() * p + 3 * p;
        let mut a = DMatrix::zeros(rows, 3 * p);
        let mut b = DVector::zeros(rows);
        let mut row = 0;
        for (k, t) in window.iter().enumerate() {
            let s = (w.mu1 * w.gamma.powi(k as i32 + 1)).sqrt();
            let r = &t.ds - j_prev * t.u;
            for i in 0..p {
                for c in 0..3 {
                    a[(row, 3 * i + c)] = s * t.u[c];
                }
                b[row] = s * r[i];
                row += 1;
            }
        }
        for k in 0..3 * p {
            a[(row, k)] = w.mu2.sqrt();
            row += 1;
        }
        let x = a.svd(true, true).solve(&b, 1e-15).unwrap();
        DMatrix::from_row_slice(p, 3, x.as_slice())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn quadratic_stage_matches_stacked_oracle(
            seed in any::<u64>(),
            p in 1usize..8,
            eta in 1usize..12,
            mu1 in 0.05f64..0.95,
            gamma in 0.1f64..=1.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = RtmWeights { mu1, mu2: 1.0 - mu1, mu3: 0.0, eta, gamma };
            let j_prev = DMatrix::from_fn(p, 3, |_, _| rng.gen_range(-1.0..1.0));
            let mut est = JacobianEstimate::new(j_prev.clone(), eta).unwrap();
            for _ in 0..eta.saturating_sub(1) {
                let u = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                let ds = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
                est.push(&ds, &u).unwrap();
            }
            let u = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let ds = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
            let (next, _) = rtm_update(&est, &w, &ds, &u).unwrap();
            let mut hist = est.history().clone();
            hist.push_front(Transition { ds, u });
            let oracle = stacked_oracle(&j_prev, &hist, &w);
            prop_assert!((&next.j_hat - &j_prev - oracle).amax() < 1e-8);
        }

        #[test]
        fn objective_never_increases(seed in any::<u64>(), p in 2usize..10) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let w = RtmWeights::default();
            let mut est = JacobianEstimate::new(DMatrix::from_fn(p, 3, |_, _| rng.gen_range(-1.0..1.0)), w.eta).unwrap();
            for _ in 0..4 {
                let u = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                let ds = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
                let mut probe = est.clone();
                probe.push(&ds, &u).unwrap();
                let before = current_terms(&probe, &w).objective;
                let (next, terms) = rtm_update(&est, &w, &ds, &u).unwrap();
                prop_assert!(terms.unwrap().objective <= before);
                est = next;
            }
        }

        #[test]
        fn q3_at_least_one(seed in any::<u64>(), p in 3usize..12) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let j = DMatrix::from_fn(p, 3, |_, _| rng.gen_range(-1.0..1.0));
            let q = q3_manipulability(&j);
            prop_assert!(q >= 1.0 - 1e-9);
        }

        #[test]
        fn q2_is_entry_sum(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = DMatrix::from_fn(7, 3, |_, _| rng.gen_range(-3.0..3.0));
            let direct: f64 = d.iter().map(|v| v * v).sum();
            prop_assert!((q2_smoothness(&d) - direct).abs() < 1e-12);
        }

        #[test]
        fn broyden_secant_condition(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let j = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(-1.0..1.0));
            let u = Vector3::from_fn(|_, _| rng.gen_range(0.1..1.0));
            let ds = DVector::from_fn(5, |_, _| rng.gen_range(-1.0..1.0));
            let jn = broyden_update(&j, &ds, &u, 1.0).unwrap();
            prop_assert!((jn * u - ds).amax() < 1e-12);
        }
    }
}
