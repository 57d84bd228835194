//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to the
//! real stderr (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shape_servo::mpc::{build_prediction, build_qp, solve_qp, BlockWeight, MpcConfig, QpProblem};
use shape_servo::plant::{babble, BabbleConfig, MaskKind, OcclusionSchedule};
use shape_servo::rtm::{calibrate_initial, rtm_update, JacobianEstimate, RtmWeights};
use shape_servo::servo::{
    demonstration_script, fit_grid, record_target, run_estimator_compare, run_fit_benchmark,
    run_servo_to, simulated_corpus, write_run, EstimatorKind, FeatureLog, FittedPlant, ObjectKind,
    RunMetrics, RunStatus, ServoConfig,
};
use shape_servo::shape::{
    basis_eval, curve_local_weights, fit_curve_lsm, fit_surface_lsm, reconstruction_error,
    BasisFamily, BasisSpec, ShapeKind, ShapeSample,
};
use shape_servo::COMMAND_SATURATION;

fn report(id: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance {id:>2}] {verdict} {name}: {detail}");
}

fn check(id: usize, name: &str, failures: &[String], detail: &str) {
    let pass = failures.is_empty();
    let detail = if pass {
        detail.to_string()
    } else {
        format!("{detail}; {}", failures.join("; "))
    };
    report(id, name, pass, &detail);
    assert!(pass, "criterion {id} failed: {detail}");
}

// Basis, LSM and MLS ---------------------------------------------------------

fn curve_at(family: BasisFamily, n: usize, weights: &DMatrix<f64>, rho: f64) -> Point3<f64> {
    let spec = BasisSpec::curve(family, n);
    let mut p = Vector3::zeros();
    for j in 0..=n {
        let b = basis_eval(&spec, j, rho).unwrap();
        p += weights.column(j).into_owned() * b;
    }
    Point3::from(p)
}

/// `Σ_i ‖c_i − f(ρ_i)‖²` evaluated point by point from basis values.
fn direct_cost(sample: &ShapeSample, family: BasisFamily, n: usize, weights: &DMatrix<f64>) -> f64 {
    sample
        .points
        .iter()
        .zip(&sample.arc_params)
        .map(|(c, &rho)| (c - curve_at(family, n, weights, rho)).norm_squared())
        .sum()
}

fn weights_of(values: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(3, n + 1, |c, j| values[3 * j + c])
}

fn wiggly_curve(rng: &mut ChaCha8Rng, n_points: usize) -> ShapeSample {
    let a: Vec<f64> = (0..9).map(|_| rng.gen_range(-0.3..0.3)).collect();
    let pts = (0..n_points)
        .map(|i| {
            let t = i as f64 / (n_points - 1) as f64;
            Point3::new(
                t + a[0] * (2.0 * t).sin() + a[1] * (5.0 * t).cos(),
                a[2] * (3.0 * t).sin() + a[3] * t * t + a[4] * (7.0 * t).cos() * 0.2,
                a[5] * t + a[6] * (4.0 * t).sin() + a[7] * t.powi(3) + a[8],
            )
        })
        .collect();
    ShapeSample::new(pts, ShapeKind::Centerline).unwrap()
}

#[test]
fn c01_basis_and_fit_correctness() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    // partition of unity; the truncated-power B-spline form cancels large
    // terms and is held to a looser bound
    let mut pou = 0.0f64;
    let mut pou_spline = 0.0f64;
    for (family, max_n) in [(BasisFamily::Bernstein, 10), (BasisFamily::CoxDeBoor, 8)] {
        for n in 1..=max_n {
            let spec = BasisSpec::curve(family, n);
            for i in 0..=200 {
                let rho = i as f64 / 200.0;
                let sum: f64 = (0..=n).map(|j| basis_eval(&spec, j, rho).unwrap()).sum();
                let worst = if family == BasisFamily::Bernstein {
                    &mut pou
                } else {
                    &mut pou_spline
                };
                *worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    if pou > 1e-12 {
        failures.push(format!("Bernstein partition of unity off by {pou:.2e}"));
    }
    if pou_spline > 1e-10 {
        failures.push(format!(
            "B-spline partition of unity off by {pou_spline:.2e}"
        ));
    }

    // exact representation: points on a basis curve are reproduced, and the
    // weights are recovered where the design is well conditioned
    let mut worst_points = 0.0f64;
    let mut worst_weights = 0.0f64;
    for family in BasisFamily::ALL {
        for n in 2..=4 {
            let weights = DMatrix::from_fn(3, n + 1, |_, _| rng.gen_range(-1.0..1.0));
            let rhos: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
            let pts = rhos
                .iter()
                .map(|&r| curve_at(family, n, &weights, r))
                .collect();
            let sample = ShapeSample::with_params(pts, ShapeKind::Centerline, rhos).unwrap();
            let f = fit_curve_lsm(&sample, &BasisSpec::curve(family, n)).unwrap();
            worst_points = worst_points.max(reconstruction_error(&f, &sample).unwrap());
            if family != BasisFamily::Trigonometric {
                worst_weights = worst_weights.max((weights_of(&f.values, n) - &weights).amax());
            }
        }
    }
    let basis = BasisSpec::surface(BasisFamily::Polynomial, 2, 2);
    let q: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let pts: Vec<Point3<f64>> = (0..64)
        .map(|i| {
            let (x, y) = ((i % 8) as f64 * 0.04, (i / 8) as f64 * 0.03);
            let mut z = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    z += q[3 * a + b] * x.powi(a as i32) * y.powi(b as i32);
                }
            }
            Point3::new(x, y, z)
        })
        .collect();
    let surface = ShapeSample::new(pts, ShapeKind::Surface).unwrap();
    let fs = fit_surface_lsm(&surface, &basis).unwrap();
    let surf_err = reconstruction_error(&fs, &surface).unwrap();
    worst_points = worst_points.max(surf_err);
    if worst_points > 1e-9 {
        failures.push(format!("round-trip point error {worst_points:.2e}"));
    }
    if worst_weights > 1e-8 {
        failures.push(format!("round-trip weight error {worst_weights:.2e}"));
    }

    // no perturbation of the LSM weights lowers the fitting cost
    let mut worst_gain = f64::NEG_INFINITY;
    for k in 0..100 {
        let family = BasisFamily::ALL[k % 4];
        let n = 2 + k % 4;
        let sample = wiggly_curve(&mut rng, 48);
        let f = fit_curve_lsm(&sample, &BasisSpec::curve(family, n)).unwrap();
        let w = weights_of(&f.values, n);
        let best = direct_cost(&sample, family, n, &w);
        let scale = 10f64.powf(rng.gen_range(-6.0..-1.0));
        let delta = DMatrix::from_fn(3, n + 1, |_, _| rng.gen_range(-scale..scale));
        let perturbed = direct_cost(&sample, family, n, &(&w + delta));
        worst_gain = worst_gain.max((best - perturbed) / best.max(1e-300));
    }
    if worst_gain > 1e-9 {
        failures.push(format!(
            "a perturbation lowered the cost by a relative {worst_gain:.2e}"
        ));
    }

    let secs = start.elapsed().as_secs_f64();
    if secs >= 10.0 {
        failures.push(format!("took {secs:.1} s"));
    }
    check(
        1,
        "basis/fit correctness",
        &failures,
        &format!(
            "partition of unity {pou:.1e} (B-spline {pou_spline:.1e}), round-trip points {worst_points:.1e} weights {worst_weights:.1e}, \
             100 perturbations never improve (max relative gain {worst_gain:.1e}), {secs:.2} s"
        ),
    );
}

/// Unweighted least squares by normal equations, independent of the crate's solver.
fn normal_equation_weights(sample: &ShapeSample, family: BasisFamily, n: usize) -> DVector<f64> {
    let spec = BasisSpec::curve(family, n);
    let b = DMatrix::from_fn(sample.len(), n + 1, |i, j| {
        basis_eval(&spec, j, sample.arc_params[i]).unwrap()
    });
    let c = DMatrix::from_fn(sample.len(), 3, |i, k| sample.points[i][k]);
    let w = (b.transpose() * &b)
        .lu()
        .solve(&(b.transpose() * c))
        .unwrap();
    DVector::from_fn(3 * (n + 1), |r, _| w[(r / 3, r % 3)])
}

#[test]
fn c02_mls_reduces_to_lsm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let families = [
        BasisFamily::Polynomial,
        BasisFamily::Bernstein,
        BasisFamily::CoxDeBoor,
    ];
    let (mut worst, mut worst_ne) = (0.0f64, 0.0f64);
    for k in 0..50 {
        let family = families[k % 3];
        let n = rng.gen_range(2..=5);
        let n_points = rng.gen_range(30..=80);
        let sample = wiggly_curve(&mut rng, n_points);
        let basis = BasisSpec::curve(family, n);
        let lsm = fit_curve_lsm(&sample, &basis).unwrap().values;
        worst_ne = worst_ne.max((&lsm - normal_equation_weights(&sample, family, n)).amax());
        let pi = curve_local_weights(&sample, &basis, 1e6).unwrap();
        for col in pi.column_iter() {
            worst = worst.max((col - &lsm).amax());
        }
    }
    let mut failures = Vec::new();
    if worst > 1e-6 {
        failures.push(format!("node deviation {worst:.2e}"));
    }
    if worst_ne > 1e-6 {
        failures.push(format!(
            "LSM differs from normal equations by {worst_ne:.2e}"
        ));
    }
    check(
        2,
        "MLS with constant weights equals LSM",
        &failures,
        &format!("50 curves, max per-node deviation {worst:.2e} (LSM vs normal equations {worst_ne:.2e})"),
    );
}

#[test]
fn c03_mls_beats_lsm_on_corpus() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for (object, orders) in [
        (ObjectKind::Contour, vec![2, 3, 4]),
        (ObjectKind::Sheet, vec![1, 2]),
    ] {
        let cfg = ServoConfig::for_object(object);
        let corpus = simulated_corpus(&cfg.plant, 10_000, 0).unwrap();
        assert_eq!(corpus.len(), 10_000);
        let kind = object.shape_kind();
        let n_points = corpus[0].len();
        let d = cfg.fit.mls.unwrap().support_radius_d;
        let family = cfg.fit.basis.family;
        let rows = run_fit_benchmark(
            &corpus,
            &fit_grid(kind, &[family], &orders, d, &[1, n_points]),
        )
        .unwrap();
        for chunk in rows.chunks(3) {
            let (lsm, mls1, mls_full) = (&chunk[0], &chunk[1], &chunk[2]);
            let ok = lsm.failures == 0
                && mls_full.failures == 0
                && mls_full.mean_error <= lsm.mean_error;
            if !ok {
                failures.push(format!(
                    "{kind:?} order {} MLS {:.3e} vs LSM {:.3e}",
                    lsm.order, mls_full.mean_error, lsm.mean_error
                ));
            }
            lines.push(format!(
                "{kind:?} {} n={}: LSM {:.3e}, MLS(m={n_points}) {:.3e}, MLS(m=1) {:.3e}",
                family.name(),
                lsm.order,
                lsm.mean_error,
                mls_full.mean_error,
                mls1.mean_error
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 300.0 {
        failures.push(format!("took {secs:.0} s"));
    }
    check(
        3,
        "MLS <= LSM on a 10k-sample corpus",
        &failures,
        &format!("{}; {secs:.0} s", lines.join(", ")),
    );
}

// Jacobian estimation --------------------------------------------------------

#[test]
fn c04_rtm_quadratic_stage_is_ridge() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = rng.gen_range(1..8);
        let eta = rng.gen_range(1..12);
        let mu1 = rng.gen_range(0.05..0.95);
        let w = RtmWeights {
            mu1,
            mu2: 1.0 - mu1,
            mu3: 0.0,
            eta,
            gamma: rng.gen_range(0.1..=1.0),
        };
        let j_prev = DMatrix::from_fn(p, 3, |_, _| rng.gen_range(-1.0..1.0));
        let mut est = JacobianEstimate::new(j_prev.clone(), eta).unwrap();
        let mut window = Vec::new();
        for _ in 0..eta {
            let u = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let ds = DVector::from_fn(p, |_, _| rng.gen_range(-1.0..1.0));
            window.insert(0, (ds, u));
        }
        for (ds, u) in window.iter().skip(1).rev() {
            est.push(ds, u).unwrap();
        }
        let (ds, u) = &window[0];
        let (next, _) = rtm_update(&est, &w, ds, u).unwrap();

        // ΔĴ = (Σ w_k r_k u_kᵀ)(Σ w_k u_k u_kᵀ + μ2 I)⁻¹ with w_k = μ1 γ^(k+1)
        let mut cross = DMatrix::zeros(p, 3);
        let mut gram = DMatrix::identity(3, 3) * w.mu2;
        for (k, (ds, u)) in window.iter().enumerate() {
            let wk = w.mu1 * w.gamma.powi(k as i32 + 1);
            let r = ds - &j_prev * u;
            cross += (r * u.transpose()) * wk;
            gram += (u * u.transpose()) * wk;
        }
        let ridge = cross * gram.try_inverse().unwrap();
        worst = worst.max((&next.j_hat - &j_prev - ridge).amax());
    }
    let failures = if worst > 1e-8 {
        vec![format!("deviation {worst:.2e}")]
    } else {
        vec![]
    };
    check(
        4,
        "RTM with zero manipulability weight is ridge regression",
        &failures,
        &format!("100 windows, max deviation {worst:.2e}"),
    );
}

#[test]
fn c05_rtm_vs_broyden() {
    let start = Instant::now();
    let cfg = ServoConfig::for_object(ObjectKind::Cable);
    let mut probe = FittedPlant {
        plant: cfg.plant.build().unwrap(),
        fit: &cfg.fit,
    };
    let j0 = calibrate_initial(&mut probe, cfg.probe_amplitude, cfg.rtm.eta)
        .unwrap()
        .with_unit_scale(cfg.estimator_unit_scale)
        .unwrap();
    let (data, _) = babble(
        &probe.plant,
        &BabbleConfig {
            n_steps: 500,
            seed: cfg.seed,
            ..BabbleConfig::default()
        },
    )
    .unwrap();
    let log = FeatureLog::from_dataset(&data, ShapeKind::Centerline, &cfg.fit).unwrap();
    assert_eq!(log.commands.len(), 500);
    let reports = run_estimator_compare(
        &log,
        &j0,
        &[
            EstimatorKind::Rtm { eta: 20 },
            EstimatorKind::Broyden { gain: 0.5 },
        ],
        &cfg.rtm,
    )
    .unwrap();
    let (rtm, broyden) = (&reports[0], &reports[1]);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let t1 = |r: &shape_servo::servo::EstimatorReport| {
        mean(&r.rows.iter().map(|row| row.t1).collect::<Vec<_>>())
    };
    let p95 = |r: &shape_servo::servo::EstimatorReport| {
        let mut q: Vec<f64> = r.rows.iter().map(|row| row.q3).collect();
        q.sort_by(f64::total_cmp);
        q[((0.95 * q.len() as f64).ceil() as usize).max(1) - 1]
    };
    let (rt1, bt1, rq, bq) = (t1(rtm), t1(broyden), p95(rtm), p95(broyden));
    let mut failures = Vec::new();
    if (rt1 - rtm.mean_t1).abs() > 1e-12 * rt1 || (rq - rtm.q3_p95).abs() > 1e-12 * rq {
        failures.push("reported summary disagrees with the trace".into());
    }
    if rt1 > bt1 {
        failures.push("RTM mean T1 above Broyden".into());
    }
    if rq > bq {
        failures.push("RTM Q3 p95 above Broyden".into());
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 120.0 {
        failures.push(format!("took {secs:.0} s"));
    }
    check(
        5,
        "RTM(eta=20) vs Broyden on a 500-step cable log",
        &failures,
        &format!("mean T1 {rt1:.4e} vs {bt1:.4e}, Q3 p95 {rq:.3} vs {bq:.3}, {secs:.1} s"),
    );
}

// QP -------------------------------------------------------------------------

fn fuzzed_qp(rng: &mut ChaCha8Rng, h: usize) -> QpProblem {
    let p = rng.gen_range(3..8);
    let j = DMatrix::from_fn(p, 3, |_, _| rng.gen_range(-2.0..2.0));
    let s = DVector::from_fn(p, |_, _| rng.gen_range(-0.1..0.1));
    let target = DVector::from_fn(p, |_, _| rng.gen_range(-0.1..0.1));
    let r = Point3::new(
        rng.gen_range(-0.02..0.02),
        rng.gen_range(-0.02..0.02),
        rng.gen_range(-0.02..0.02),
    );
    let cfg = MpcConfig {
        horizon: h,
        upsilon2: BlockWeight::scaled_identity(rng.gen_range(0.01..1.0)),
        r_min: [-0.03; 3],
        r_max: [0.03; 3],
        ..MpcConfig::default()
    };
    let (a, t) = build_prediction(&j, h);
    build_qp(&a, &t, &s, &target, &cfg, &r).unwrap()
}

/// Accelerated projected gradient on the dual of `Gx ≤ g`, `G = [M; −M]`.
/// Returns the dual value, a lower bound on the optimum.
fn dual_value_by_projected_gradient(prob: &QpProblem, iterations: usize) -> f64 {
    let r = prob.m.nrows();
    let n = prob.h.nrows();
    let mut g = DMatrix::zeros(2 * r, n);
    g.view_mut((0, 0), (r, n)).copy_from(&prob.m);
    g.view_mut((r, 0), (r, n)).copy_from(&(-&prob.m));
    let rhs = DVector::from_fn(2 * r, |i, _| {
        if i < r {
            prob.upper[i]
        } else {
            -prob.lower[i - r]
        }
    });
    let h_inv = prob.h.clone().try_inverse().unwrap();
    let quad = &g * &h_inv * g.transpose();
    let lin = &g * &h_inv * &prob.q + &rhs;
    let offset = 0.5 * prob.q.dot(&(&h_inv * &prob.q));
    let step = 1.0 / quad.clone().symmetric_eigenvalues().max();
    let value = |lam: &DVector<f64>| -0.5 * lam.dot(&(&quad * lam)) - lin.dot(lam) - offset;
    let mut lam = DVector::zeros(2 * r);
    let mut y = lam.clone();
    let mut t = 1.0f64;
    for _ in 0..iterations {
        let grad = -(&quad * &y) - &lin;
        let next = (&y + grad * step).map(|v| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &lam) * ((t - 1.0) / t_next);
        lam = next;
        t = t_next;
    }
    value(&lam)
}

#[test]
fn c06_qp_kkt_certification() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_gap, mut worst_stat, mut worst_feas, mut worst_sign) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for k in 0..100 {
        let h = [1, 3, 5][k % 3];
        let prob = fuzzed_qp(&mut rng, h);
        let sol = solve_qp(&prob, 1e-9).unwrap();
        let (x, y) = (&sol.x, &sol.y);
        let f = 0.5 * x.dot(&(&prob.h * x)) + prob.q.dot(x);
        let dual = dual_value_by_projected_gradient(&prob, 200_000);
        worst_gap = worst_gap.max((f - dual).abs());
        worst_stat = worst_stat.max((&prob.h * x + &prob.q + prob.m.transpose() * y).amax());
        let mx = &prob.m * x;
        for i in 0..mx.len() {
            worst_feas = worst_feas
                .max(prob.lower[i] - mx[i])
                .max(mx[i] - prob.upper[i]);
            // a multiplier may only be nonzero on the bound it pushes against
            let slack = if y[i] > 0.0 {
                prob.upper[i] - mx[i]
            } else {
                mx[i] - prob.lower[i]
            };
            worst_sign = worst_sign.max(y[i].abs() * slack);
        }
    }
    let mut failures = Vec::new();
    for (what, v) in [
        ("objective gap", worst_gap),
        ("stationarity", worst_stat),
        ("infeasibility", worst_feas),
        ("complementarity", worst_sign),
    ] {
        if v > 1e-6 {
            failures.push(format!("{what} {v:.2e}"));
        }
    }
    check(
        6,
        "QP solutions are KKT points matching the dual oracle",
        &failures,
        &format!(
            "100 QPs at h in {{1,3,5}}: objective gap {worst_gap:.1e}, stationarity {worst_stat:.1e}, \
             infeasibility {:.1e}, complementarity {worst_sign:.1e}",
            worst_feas.max(0.0)
        ),
    );
}

// Closed loop ----------------------------------------------------------------

fn servo(cfg: &ServoConfig) -> RunMetrics {
    let target = record_target(cfg, &demonstration_script(cfg)).unwrap();
    run_servo_to(cfg, &target).unwrap()
}

/// Bound violations recounted from the per-step log.
fn audit(cfg: &ServoConfig, m: &RunMetrics) -> (usize, usize) {
    let center = cfg.plant.build().unwrap().grasp;
    let half = cfg.workspace_half_extent;
    let (mut sat, mut ws) = (0, 0);
    for s in &m.steps {
        let (u, r) = ([s.ux, s.uy, s.uz], [s.rx, s.ry, s.rz]);
        for c in 0..3 {
            if u[c].abs() > COMMAND_SATURATION {
                sat += 1;
            }
            if (r[c] - center[c]).abs() > half + 1e-12 {
                ws += 1;
            }
        }
    }
    (sat, ws)
}

fn converged_within(m: &RunMetrics, budget: usize) -> bool {
    let e0 = m.error_series[0];
    m.status == RunStatus::Converged
        && m.t_max <= budget
        && m.error_series.len() == m.t_max + 1
        && *m.error_series.last().unwrap() < 0.01 * e0
}

#[test]
fn c07_closed_loop_convergence() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for object in [ObjectKind::Cable, ObjectKind::Contour, ObjectKind::Sheet] {
        let cfg = ServoConfig::for_object(object);
        let m = servo(&cfg);
        let (sat, ws) = audit(&cfg, &m);
        let e_ratio = m.final_error / m.initial_error;
        lines.push(format!(
            "{object:?} T={} final/initial {e_ratio:.2e} violations {sat}/{ws}",
            m.t_max
        ));
        if !converged_within(&m, 600) {
            failures.push(format!("{object:?} {:?} after {} steps", m.status, m.t_max));
        }
        if sat + ws + m.saturation_violations + m.workspace_violations > 0 {
            failures.push(format!("{object:?} bound violations"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    if secs >= 300.0 {
        failures.push(format!("took {secs:.0} s"));
    }
    check(
        7,
        "closed-loop convergence for cable, contour and sheet",
        &failures,
        &format!("{}; {secs:.1} s", lines.join(", ")),
    );
}

#[test]
fn c08_occlusion_robustness() {
    let clear = ServoConfig::for_object(ObjectKind::Cable);
    let mut occluded = clear.clone();
    occluded.occlusion = OcclusionSchedule::always(MaskKind::Fraction { f: 0.3, seed: 7 }).unwrap();
    let a = servo(&clear);
    let b = servo(&occluded);
    let hidden_each_step = b
        .steps
        .iter()
        .all(|s| s.hidden == (0.3 * 64.0f64).round() as usize);
    let mut failures = Vec::new();
    if !converged_within(&a, 600) || !converged_within(&b, 600) {
        failures.push(format!("statuses {:?}/{:?}", a.status, b.status));
    }
    if b.t_max > 2 * a.t_max {
        failures.push("occluded run more than twice as long".into());
    }
    if !hidden_each_step {
        failures.push("occlusion was not active on every step".into());
    }
    check(
        8,
        "cable servo under persistent 30% occlusion",
        &failures,
        &format!("T_max {} occluded vs {} clear", b.t_max, a.t_max),
    );
}

#[test]
fn c09_horizon_study() {
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("horizon_study");
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for object in [ObjectKind::Cable, ObjectKind::Contour, ObjectKind::Sheet] {
        for h in [5, 15] {
            let mut cfg = ServoConfig::for_object(object);
            cfg.mpc.horizon = h;
            let m = servo(&cfg);
            let out = dir.join(format!("{object:?}_h{h}").to_lowercase());
            write_run(&out, &m, &cfg).unwrap();
            let traced = [
                "trace.csv",
                "controller.csv",
                "estimator.csv",
                "metrics.json",
            ]
            .iter()
            .all(|f| out.join(f).is_file());
            if !converged_within(&m, 600) || !traced {
                failures.push(format!(
                    "{object:?} h={h}: {:?}, traces written {traced}",
                    m.status
                ));
            }
            lines.push(format!("{object:?} h={h} T={}", m.t_max));
        }
    }
    check(
        9,
        "horizon 5 and 15 both converge",
        &failures,
        &format!("{}; traces in {}", lines.join(", "), dir.display()),
    );
}

#[test]
fn c10_loop_budget() {
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for object in [ObjectKind::Cable, ObjectKind::Contour] {
        let cfg = ServoConfig::for_object(object);
        assert_eq!((cfg.plant.n, cfg.mpc.horizon), (64, 5));
        let m = servo(&cfg);
        let mean = m.steps.iter().map(|s| s.compute_ms).sum::<f64>() / m.steps.len() as f64;
        if mean.is_nan() || mean > 100.0 {
            failures.push(format!("{object:?} mean {mean:.1} ms"));
        }
        lines.push(format!(
            "{object:?} mean {mean:.1} ms max {:.1} ms over {} steps",
            m.max_step_ms,
            m.steps.len()
        ));
    }
    check(
        10,
        "mean per-step compute <= 100 ms at N=64, h=5",
        &failures,
        &lines.join(", "),
    );
}
