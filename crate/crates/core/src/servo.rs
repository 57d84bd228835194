//! Closed-loop experiments: plant, camera, compensator, fitting, Jacobian
//! estimation and MPC wired into one loop, plus the offline studies.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DVector, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::mpc::{control, BlockWeight, ControllerTraceRow, MpcConfig};
use crate::occlusion::{compensate, CompensatorState};
use crate::plant::{babble, BabbleConfig};
use crate::plant::{Camera, MaskKind, OcclusionInterval, OcclusionSchedule, PlantState, Stiffness};
use crate::rtm::{
    broyden_update, calibrate_initial, current_terms, metrics_t1_t2, q3_manipulability, rtm_update,
    EstimatorTraceRow, JacobianEstimate, ProbePlant, RtmWeights, BROYDEN_GAIN,
};
use crate::shape::corpus::{read_corpus, write_corpus};
use crate::shape::{
    reconstruction_error, BasisFamily, BasisSpec, FitSpec, MlsConfig, ShapeKind, ShapeSample,
};
use crate::COMMAND_SATURATION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Cable,
    Contour,
    Sheet,
}

impl ObjectKind {
    pub fn shape_kind(self) -> ShapeKind {
        match self {
            Self::Cable => ShapeKind::Centerline,
            Self::Contour => ShapeKind::Contour,
            Self::Sheet => ShapeKind::Surface,
        }
    }
}

impl std::str::FromStr for ObjectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cable" => Ok(Self::Cable),
            "contour" => Ok(Self::Contour),
            "sheet" => Ok(Self::Sheet),
            other => Err(Error::Config(format!(
                "unknown object `{other}` (expected cable, contour or sheet)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub object: ObjectKind,
    /// Node count of a cable or contour.
    pub n: usize,
    /// Grid size of a sheet.
    pub rows: usize,
    pub cols: usize,
    pub stiffness: Stiffness,
}

impl PlantSpec {
    pub fn default_for(object: ObjectKind) -> Self {
        let stiffness = match object {
            ObjectKind::Sheet => Stiffness {
                stretch: 2000.0,
                bend: 2e-3,
            },
            _ => Stiffness {
                stretch: 2000.0,
                bend: 1e-3,
            },
        };
        Self {
            object,
            n: 64,
            rows: 4,
            cols: 8,
            stiffness,
        }
    }

    pub fn build(&self) -> Result<PlantState> {
        match self.object {
            ObjectKind::Cable => PlantState::cable(self.n, self.stiffness),
            ObjectKind::Contour => PlantState::contour(self.n, self.stiffness),
            ObjectKind::Sheet => PlantState::sheet(self.rows, self.cols, self.stiffness),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Termination {
    /// Convergence threshold as a fraction of the initial feature error.
    pub threshold_fraction: f64,
    /// Absolute threshold; overrides the fraction when set.
    pub threshold: Option<f64>,
    pub max_steps: usize,
    /// Steps without a new best error after which the run is declared stalled.
    pub stall_steps: usize,
}

impl Default for Termination {
    fn default() -> Self {
        Self {
            threshold_fraction: 0.01,
            threshold: None,
            max_steps: 600,
            stall_steps: 200,
        }
    }
}

/// Open-loop drift used to record reachable targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub steps: usize,
    /// Length of every demonstration command (m).
    pub step_length: f64,
    /// Relative size of the per-step random wobble around the drift direction.
    pub wobble: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            steps: 150,
            step_length: 2e-4,
            wobble: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServoConfig {
    pub plant: PlantSpec,
    pub fit: FitSpec,
    pub rtm: RtmWeights,
    /// Horizon, weights and command bounds. The workspace box is replaced by
    /// one of `workspace_half_extent` around the initial grasp.
    pub mpc: MpcConfig,
    pub workspace_half_extent: f64,
    /// Axis probe length of the initial finite-difference Jacobian (m).
    pub probe_amplitude: f64,
    /// Transitions are stored in these units per metre inside the estimator.
    pub estimator_unit_scale: f64,
    pub occlusion: OcclusionSchedule,
    /// Fill hidden points with the model prediction; otherwise the stale
    /// camera reading is fitted directly.
    pub compensate: bool,
    pub target: Option<PathBuf>,
    pub demo: DemoConfig,
    pub termination: Termination,
    pub seed: u64,
}

/// Effort weight per object. MLS features of contours and sheets change by
/// thousands of units per metre of grasp motion, so their commands need far
/// more damping than the centerline's.
pub fn default_effort_weight(object: ObjectKind) -> f64 {
    match object {
        ObjectKind::Cable => 0.1,
        ObjectKind::Contour => 1e7,
        ObjectKind::Sheet => 1e6,
    }
}

impl Default for ServoConfig {
    fn default() -> Self {
        Self::for_object(ObjectKind::Cable)
    }
}

impl ServoConfig {
    pub fn for_object(object: ObjectKind) -> Self {
        Self {
            plant: PlantSpec::default_for(object),
            fit: FitSpec::default_for(object.shape_kind()),
            rtm: RtmWeights::default(),
            mpc: MpcConfig {
                upsilon2: BlockWeight::scaled_identity(default_effort_weight(object)),
                ..MpcConfig::default()
            },
            workspace_half_extent: 0.05,
            probe_amplitude: 0.002,
            estimator_unit_scale: 1000.0,
            occlusion: OcclusionSchedule::empty(),
            compensate: true,
            target: None,
            demo: DemoConfig::default(),
            termination: Termination::default(),
            seed: 0,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.rtm
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.mpc.validate()?;
        self.fit.basis.validate()?;
        let t = &self.termination;
        if !(t.threshold_fraction > 0.0) || t.threshold.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::Config(
                "convergence threshold must be positive".into(),
            ));
        }
        if !(self.workspace_half_extent > 0.0)
            || !(self.probe_amplitude > 0.0)
            || !(self.estimator_unit_scale > 0.0)
        {
            return Err(Error::Config(
                "workspace extent, probe amplitude and unit scale must be positive".into(),
            ));
        }
        if self
            .mpc
            .u_min
            .iter()
            .chain(&self.mpc.u_max)
            .any(|v| v.abs() > COMMAND_SATURATION)
        {
            return Err(Error::Config(format!(
                "command bounds exceed the {COMMAND_SATURATION} m saturation"
            )));
        }
        Ok(())
    }
}

/// Parses an occlusion schedule from `mask[@start-end]` items separated by
/// `;`, where `mask` is one of `fraction:F[:SEED]`, `range:A-B` or
/// `halfspace:NX,NY,NZ,OFFSET`. Without `@` an item covers every step.
pub fn parse_occlusion(spec: &str) -> Result<OcclusionSchedule> {
    let bad = |msg: &str| Error::Config(format!("occlusion spec `{spec}`: {msg}"));
    let num = |v: &str| {
        v.trim()
            .parse::<f64>()
            .map_err(|_| bad("expected a number"))
    };
    let int = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| bad("expected an integer"))
    };
    let mut intervals = Vec::new();
    for item in spec.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (mask_part, span) = match item.split_once('@') {
            Some((m, s)) => (m, Some(s)),
            None => (item, None),
        };
        let (start, end) = match span {
            None => (0, usize::MAX),
            Some(s) => {
                let (a, b) = s
                    .split_once('-')
                    .ok_or_else(|| bad("interval must be START-END"))?;
                (int(a)?, int(b)?)
            }
        };
        let (kind, args) = mask_part
            .split_once(':')
            .ok_or_else(|| bad("mask must be KIND:ARGS"))?;
        let mask = match kind.trim() {
            "fraction" => {
                let mut parts = args.split(':');
                let f = num(parts.next().unwrap_or(""))?;
                let seed = parts
                    .next()
                    .map(|v| v.trim().parse::<u64>().map_err(|_| bad("bad seed")))
                    .transpose()?
                    .unwrap_or(0);
                MaskKind::Fraction { f, seed }
            }
            "range" => {
                let (a, b) = args
                    .split_once('-')
                    .ok_or_else(|| bad("range must be A-B"))?;
                MaskKind::IndexRange(int(a)?, int(b)?)
            }
            "halfspace" => {
                let v = args.split(',').map(num).collect::<Result<Vec<_>>>()?;
                if v.len() != 4 {
                    return Err(bad("halfspace needs NX,NY,NZ,OFFSET"));
                }
                MaskKind::Halfspace {
                    normal: [v[0], v[1], v[2]],
                    offset: v[3],
                }
            }
            other => return Err(bad(&format!("unknown mask kind `{other}`"))),
        };
        intervals.push(OcclusionInterval { start, end, mask });
    }
    OcclusionSchedule::new(intervals).map_err(|e| bad(&e.to_string()))
}

/// A recorded demonstration end state.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub sample: ShapeSample,
    pub feature: DVector<f64>,
    pub grasp: Point3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TargetSidecar {
    fit: FitSpec,
    feature: Vec<f64>,
    grasp: [f64; 3],
}

fn feature_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("target");
    path.with_file_name(format!("{stem}.feature.json"))
}

pub fn write_target(path: &Path, target: &Target, fit: &FitSpec) -> Result<()> {
    write_corpus(
        path,
        target.sample.kind,
        std::slice::from_ref(&target.sample),
    )?;
    let side = TargetSidecar {
        fit: *fit,
        feature: target.feature.iter().copied().collect(),
        grasp: target.grasp.into(),
    };
    std::fs::write(feature_path(path), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

/// Loads a target and re-fits its shape with `fit`.
pub fn read_target(path: &Path, fit: &FitSpec) -> Result<Target> {
    let (_, samples, skipped) = read_corpus(path)?;
    if skipped > 0 || samples.len() != 1 {
        return Err(domain(format!(
            "target file {} must hold exactly one well-formed shape",
            path.display()
        )));
    }
    let sample = samples.into_iter().next().expect("one sample");
    let side: TargetSidecar = serde_json::from_str(&std::fs::read_to_string(feature_path(path))?)?;
    let feature = fit.fit(&sample)?.values;
    Ok(Target {
        sample,
        feature,
        grasp: Point3::from(side.grasp),
    })
}

/// Seeded drift: a random direction held for the whole script with a small
/// random wobble on every step, reflected at the workspace box.
pub fn demonstration_script(cfg: &ServoConfig) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_DE30);
    let mut unit = || {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if v.norm() > 1e-3 {
            v.normalize()
        } else {
            Vector3::x()
        }
    };
    let drift = unit();
    let limit = 0.9 * cfg.workspace_half_extent;
    let mut offset = Vector3::<f64>::zeros();
    (0..cfg.demo.steps)
        .map(|_| {
            let mut u = (drift + unit() * cfg.demo.wobble).normalize() * cfg.demo.step_length;
            for c in 0..3 {
                if (offset[c] + u[c]).abs() > limit {
                    u[c] = -u[c];
                }
            }
            offset += u;
            u
        })
        .collect()
}

/// Drives a fresh plant open-loop through `script` and returns its end state.
pub fn record_target(cfg: &ServoConfig, script: &[Vector3<f64>]) -> Result<Target> {
    let mut plant = cfg.plant.build()?;
    for (k, u) in script.iter().enumerate() {
        if u.iter()
            .zip(cfg.mpc.u_min.iter().zip(&cfg.mpc.u_max))
            .any(|(v, (lo, hi))| *v < *lo || *v > *hi)
        {
            return Err(domain(format!(
                "demonstration command {k} exceeds the command bounds"
            )));
        }
        plant = plant.step(u)?;
    }
    let sample = plant.sample();
    let feature = cfg.fit.fit(&sample)?.values;
    Ok(Target {
        sample,
        feature,
        grasp: plant.grasp,
    })
}

/// The plant seen through a fitting configuration.
pub struct FittedPlant<'a> {
    pub plant: PlantState,
    pub fit: &'a FitSpec,
}

impl ProbePlant for FittedPlant<'_> {
    fn features(&mut self) -> Result<DVector<f64>> {
        Ok(self.fit.fit(&self.plant.sample())?.values)
    }

    fn apply(&mut self, u: &Vector3<f64>) -> Result<()> {
        self.plant = self.plant.step(u)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    /// No new best error for `stall_steps` steps.
    Stalled,
    /// Step budget exhausted while still making progress.
    Budget,
}

/// Per-step record of a servo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub error: f64,
    pub ux: f64,
    pub uy: f64,
    pub uz: f64,
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub hidden: usize,
    pub compute_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub status: RunStatus,
    /// `‖s* − s_k‖` for `k = 0..=T_max`.
    pub error_series: Vec<f64>,
    #[serde(rename = "T_max")]
    pub t_max: usize,
    /// Steps until the error first drops to 10% of its initial value.
    pub t_d: Option<usize>,
    /// Steps from the 10% mark until the error first drops below the threshold.
    pub t_s: Option<usize>,
    /// Total end-effector travel (m).
    pub d_eff: f64,
    pub initial_error: f64,
    pub final_error: f64,
    pub threshold: f64,
    pub max_steps: usize,
    pub stall_steps: usize,
    pub max_abs_command: f64,
    pub saturation_violations: usize,
    pub workspace_violations: usize,
    /// Mean wall time of fit, estimate and QP per step (ms).
    pub mean_step_ms: f64,
    pub max_step_ms: f64,
    #[serde(skip)]
    pub steps: Vec<StepRecord>,
    #[serde(skip)]
    pub estimator_trace: Vec<EstimatorTraceRow>,
    #[serde(skip)]
    pub controller_trace: Vec<ControllerTraceRow>,
}

/// First index at which `series` is at or below `level`.
fn first_at_or_below(series: &[f64], level: f64) -> Option<usize> {
    series.iter().position(|e| *e <= level)
}

/// `(t_d, t_s)` from an error series and threshold.
pub fn settling_times(series: &[f64], threshold: f64) -> (Option<usize>, Option<usize>) {
    let Some(&e0) = series.first() else {
        return (None, None);
    };
    let t_d = first_at_or_below(series, 0.1 * e0);
    let t_s = match (t_d, series.iter().position(|e| *e < threshold)) {
        (Some(d), Some(end)) => Some(end.saturating_sub(d)),
        _ => None,
    };
    (t_d, t_s)
}

pub fn run_servo(cfg: &ServoConfig) -> Result<RunMetrics> {
    let path = cfg
        .target
        .as_ref()
        .ok_or_else(|| Error::Config("servo run needs a target file".into()))?;
    let target = read_target(path, &cfg.fit)?;
    run_servo_to(cfg, &target)
}

pub fn run_servo_to(cfg: &ServoConfig, target: &Target) -> Result<RunMetrics> {
    cfg.validate()?;
    let kind = cfg.plant.object.shape_kind();
    let plant0 = cfg.plant.build()?;
    if target.sample.kind != kind || target.sample.len() != plant0.len() {
        return Err(Error::Contract(format!(
            "target is a {:?} with {} points, plant is a {kind:?} with {}",
            target.sample.kind,
            target.sample.len(),
            plant0.len()
        )));
    }
    let s_star = &target.feature;
    let mpc = cfg
        .mpc
        .clone()
        .with_workspace_around(plant0.grasp, cfg.workspace_half_extent);
    let (r_min, r_max) = (mpc.r_min, mpc.r_max);

    let mut probe = FittedPlant {
        plant: plant0,
        fit: &cfg.fit,
    };
    let mut est = calibrate_initial(&mut probe, cfg.probe_amplitude, cfg.rtm.eta)?
        .with_unit_scale(cfg.estimator_unit_scale)?;
    let mut plant = probe.plant;
    if s_star.len() != est.p() {
        return Err(Error::Contract(
            "target feature length differs from the fitting configuration".into(),
        ));
    }

    let mut camera = Camera::new(cfg.occlusion.clone());
    let (first, _) = camera.observe(&plant, 0);
    let mut comp = CompensatorState::new(first, &cfg.fit)?;
    let mut s_k = comp.last_feature.values.clone();
    let mut s_hat = s_k.clone();

    let e0 = (s_star - &s_k).norm();
    let threshold = cfg
        .termination
        .threshold
        .unwrap_or(cfg.termination.threshold_fraction * e0);
    let mut errors = vec![e0];
    let mut steps = Vec::new();
    let mut est_rows = Vec::new();
    let mut ctl_rows = Vec::new();
    let (mut best, mut since_best) = (e0, 0usize);
    let mut status = RunStatus::Budget;
    let mut d_eff = 0.0;
    let (mut max_u, mut sat_viol, mut ws_viol) = (0.0f64, 0, 0);

    for k in 0..=cfg.termination.max_steps {
        let err = *errors.last().expect("nonempty");
        if err < threshold {
            status = RunStatus::Converged;
            break;
        }
        if since_best >= cfg.termination.stall_steps {
            status = RunStatus::Stalled;
            break;
        }
        if k == cfg.termination.max_steps {
            break;
        }

        let t0 = Instant::now();
        let ctl = control(&est.j_hat, &s_k, s_star, &mpc, &plant.grasp)?;
        let mut elapsed = t0.elapsed();
        let u = ctl.command;

        plant = plant.step(&u)?;
        let (observed, mask) = camera.observe(&plant, k + 1);

        let t1 = Instant::now();
        let (_, next_comp) = if cfg.compensate {
            compensate(&comp, &observed, &mask, &u, &est, &cfg.fit)?
        } else {
            let f = cfg.fit.fit(&observed)?;
            let st = CompensatorState {
                last_complete: observed.clone(),
                last_feature: f,
                resolution_scale: comp.resolution_scale,
            };
            (observed, st)
        };
        let s_next = next_comp.last_feature.values.clone();
        let ds = &s_next - &s_k;
        let (t1_metric, t2_metric, s_hat_next) =
            metrics_t1_t2(&est.j_hat, &s_hat, &s_next, &ds, &u);
        let (next_est, terms) = rtm_update(&est, &cfg.rtm, &ds, &u)?;
        elapsed += t1.elapsed();

        let terms = terms.unwrap_or_else(|| current_terms(&next_est, &cfg.rtm));
        est_rows.push(EstimatorTraceRow {
            step: k,
            t1: t1_metric,
            t2: t2_metric,
            q1: terms.q1,
            q2: terms.q2,
            q3: terms.q3,
            objective: terms.objective,
            eta: cfg.rtm.eta,
            mu1: cfg.rtm.mu1,
            mu2: cfg.rtm.mu2,
            mu3: cfg.rtm.mu3,
        });
        let r = plant.grasp;
        ctl_rows.push(ControllerTraceRow {
            step: k,
            err_norm: err,
            ux: u.x,
            uy: u.y,
            uz: u.z,
            rx: r.x,
            ry: r.y,
            rz: r.z,
            active_constraints: ctl.solution.active,
            qp_iters: ctl.solution.iterations,
            qp_residual: ctl.solution.primal_residual.max(ctl.solution.dual_residual),
        });
        let compute_ms = elapsed.as_secs_f64() * 1e3;
        steps.push(StepRecord {
            step: k,
            error: err,
            ux: u.x,
            uy: u.y,
            uz: u.z,
            rx: r.x,
            ry: r.y,
            rz: r.z,
            hidden: mask.iter().filter(|v| !**v).count(),
            compute_ms,
        });

        d_eff += u.norm();
        for c in 0..3 {
            max_u = max_u.max(u[c].abs());
            if u[c] < cfg.mpc.u_min[c] || u[c] > cfg.mpc.u_max[c] {
                sat_viol += 1;
            }
            if r[c] < r_min[c] - 1e-12 || r[c] > r_max[c] + 1e-12 {
                ws_viol += 1;
            }
        }

        est = next_est;
        comp = next_comp;
        s_k = s_next;
        s_hat = s_hat_next;
        let e = (s_star - &s_k).norm();
        errors.push(e);
        if e < best * (1.0 - 1e-3) {
            best = e;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }

    let (t_d, t_s) = settling_times(&errors, threshold);
    let times: Vec<f64> = steps.iter().map(|s| s.compute_ms).collect();
    let mean_step_ms = if times.is_empty() {
        0.0
    } else {
        times.iter().sum::<f64>() / times.len() as f64
    };
    Ok(RunMetrics {
        status,
        t_max: errors.len() - 1,
        t_d,
        t_s,
        d_eff,
        initial_error: e0,
        final_error: *errors.last().expect("nonempty"),
        threshold,
        max_steps: cfg.termination.max_steps,
        stall_steps: cfg.termination.stall_steps,
        max_abs_command: max_u,
        saturation_violations: sat_viol,
        workspace_violations: ws_viol,
        mean_step_ms,
        max_step_ms: times.iter().copied().fold(0.0, f64::max),
        error_series: errors,
        steps,
        estimator_trace: est_rows,
        controller_trace: ctl_rows,
    })
}

/// Writes `metrics.json`, `trace.csv`, `estimator.csv` and `controller.csv`.
pub fn write_run(dir: &Path, metrics: &RunMetrics, cfg: &ServoConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let summary = serde_json::json!({ "metrics": metrics, "config": cfg });
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let mut w = csv::Writer::from_path(dir.join("trace.csv"))?;
    for s in &metrics.steps {
        w.serialize(s)?;
    }
    w.flush()?;
    crate::rtm::write_estimator_trace(&dir.join("estimator.csv"), &metrics.estimator_trace)?;
    crate::mpc::write_controller_trace(&dir.join("controller.csv"), &metrics.controller_trace)?;
    Ok(())
}

/// One cell of the fitting benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitBenchRow {
    pub family: String,
    pub order: usize,
    pub method: String,
    pub d: Option<f64>,
    pub m: Option<usize>,
    /// Mean over samples of `Σ_i ‖c_i − ĉ_i‖` (m).
    pub mean_error: f64,
    /// Mean per-sample fitting time (µs).
    pub elapsed_us: f64,
    pub failures: usize,
}

/// Fits every sample with every spec. Samples a spec cannot fit are counted
/// as failures and left out of the mean.
pub fn run_fit_benchmark(samples: &[ShapeSample], grid: &[FitSpec]) -> Result<Vec<FitBenchRow>> {
    if samples.is_empty() {
        return Err(domain("fitting benchmark needs a nonempty corpus"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for spec in grid {
        let (mut total, mut count, mut failures) = (0.0, 0usize, 0usize);
        let start = Instant::now();
        for s in samples {
            match spec.fit(s).and_then(|f| reconstruction_error(&f, s)) {
                Ok(e) if e.is_finite() => {
                    total += e;
                    count += 1;
                }
                _ => failures += 1,
            }
        }
        let elapsed_us = start.elapsed().as_secs_f64() * 1e6 / samples.len() as f64;
        let order = spec.basis.n;
        rows.push(FitBenchRow {
            family: spec.basis.family.name().to_string(),
            order,
            method: format!("{:?}", spec.method).to_lowercase(),
            d: spec.mls.map(|c| c.support_radius_d),
            m: spec.mls.map(|c| c.pca_rank_m),
            mean_error: if count > 0 {
                total / count as f64
            } else {
                f64::NAN
            },
            elapsed_us,
            failures,
        });
    }
    Ok(rows)
}

/// Shapes visited by random exploratory motion of a fresh plant.
pub fn simulated_corpus(plant: &PlantSpec, samples: usize, seed: u64) -> Result<Vec<ShapeSample>> {
    let start = plant.build()?;
    let cfg = BabbleConfig {
        n_steps: samples.saturating_sub(1),
        seed,
        ..BabbleConfig::default()
    };
    let (data, _) = babble(&start, &cfg)?;
    let kind = plant.object.shape_kind();
    let shapes = if samples == 0 {
        Vec::new()
    } else if data.rows.is_empty() {
        vec![start.nodes]
    } else {
        data.shapes()
    };
    shapes
        .into_iter()
        .map(|pts| ShapeSample::new(pts, kind))
        .collect()
}

/// LSM plus MLS at every rank in `ranks` for each family and order.
pub fn fit_grid(
    kind: ShapeKind,
    families: &[BasisFamily],
    orders: &[usize],
    d: f64,
    ranks: &[usize],
) -> Vec<FitSpec> {
    let mut grid = Vec::new();
    for &family in families {
        for &n in orders {
            let basis = if kind.is_curve() {
                BasisSpec::curve(family, n)
            } else {
                BasisSpec::surface(family, n, n)
            };
            grid.push(FitSpec::lsm(basis));
            for &m in ranks {
                grid.push(FitSpec::mls(basis, MlsConfig::new(d, m)));
            }
        }
    }
    grid
}

pub fn write_fit_bench(path: &Path, rows: &[FitBenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum EstimatorKind {
    Rtm { eta: usize },
    Broyden { gain: f64 },
}

impl EstimatorKind {
    pub fn label(&self) -> String {
        match self {
            Self::Rtm { eta } => format!("rtm_eta{eta}"),
            Self::Broyden { .. } => "broyden".into(),
        }
    }
}

impl Default for EstimatorKind {
    fn default() -> Self {
        Self::Broyden { gain: BROYDEN_GAIN }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub method: String,
    pub mean_t1: f64,
    pub mean_t2: f64,
    pub q3_p95: f64,
    pub rows: Vec<EstimatorTraceRow>,
}

/// Features along a logged trajectory and the commands between them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLog {
    pub features: Vec<DVector<f64>>,
    pub commands: Vec<Vector3<f64>>,
}

impl FeatureLog {
    /// Fits every shape of a transition dataset.
    pub fn from_dataset(
        data: &crate::plant::Dataset,
        kind: ShapeKind,
        fit: &FitSpec,
    ) -> Result<Self> {
        let features = data
            .shapes()
            .into_iter()
            .map(|pts| fit.fit(&ShapeSample::new(pts, kind)?).map(|f| f.values))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            features,
            commands: data.rows.iter().map(|r| r.command).collect(),
        })
    }
}

/// 95th percentile by the nearest-rank rule.
pub fn percentile95(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Replays a log through an estimator started from `j0`.
pub fn replay_estimator(
    log: &FeatureLog,
    j0: &JacobianEstimate,
    method: EstimatorKind,
    weights: &RtmWeights,
) -> Result<EstimatorReport> {
    if log.features.len() != log.commands.len() + 1 {
        return Err(Error::Contract(
            "feature log needs one more feature than commands".into(),
        ));
    }
    if log.features.first().is_some_and(|f| f.len() != j0.p()) {
        return Err(Error::Contract(format!(
            "log features have length {}, estimator expects {}",
            log.features[0].len(),
            j0.p()
        )));
    }
    let w = match method {
        EstimatorKind::Rtm { eta } => RtmWeights { eta, ..*weights },
        EstimatorKind::Broyden { .. } => *weights,
    };
    let mut est = match method {
        EstimatorKind::Rtm { eta } => j0.clone().with_window(eta)?,
        EstimatorKind::Broyden { .. } => j0.clone(),
    };
    let mut s_hat = log.features[0].clone();
    let mut rows = Vec::with_capacity(log.commands.len());
    for (k, u) in log.commands.iter().enumerate() {
        let ds = &log.features[k + 1] - &log.features[k];
        let (t1, t2, next_hat) = metrics_t1_t2(&est.j_hat, &s_hat, &log.features[k + 1], &ds, u);
        s_hat = next_hat;
        let terms = match method {
            EstimatorKind::Rtm { .. } => {
                let (next, terms) = rtm_update(&est, &w, &ds, u)?;
                est = next;
                terms.unwrap_or_else(|| current_terms(&est, &w))
            }
            EstimatorKind::Broyden { gain } => {
                if u.norm() > crate::rtm::MIN_MOTION {
                    est.j_hat = broyden_update(&est.j_hat, &ds, u, gain)?;
                }
                let q3 = q3_manipulability(&est.j_hat);
                crate::rtm::ObjectiveTerms {
                    q1: f64::NAN,
                    q2: f64::NAN,
                    q3,
                    objective: f64::NAN,
                }
            }
        };
        rows.push(EstimatorTraceRow {
            step: k,
            t1,
            t2,
            q1: terms.q1,
            q2: terms.q2,
            q3: terms.q3,
            objective: terms.objective,
            eta: w.eta,
            mu1: w.mu1,
            mu2: w.mu2,
            mu3: w.mu3,
        });
    }
    let n = rows.len().max(1) as f64;
    Ok(EstimatorReport {
        method: method.label(),
        mean_t1: rows.iter().map(|r| r.t1).sum::<f64>() / n,
        mean_t2: rows.iter().map(|r| r.t2).sum::<f64>() / n,
        q3_p95: percentile95(&rows.iter().map(|r| r.q3).collect::<Vec<_>>()),
        rows,
    })
}

/// Replays one log through every method, each from the same initial estimate.
pub fn run_estimator_compare(
    log: &FeatureLog,
    j0: &JacobianEstimate,
    methods: &[EstimatorKind],
    weights: &RtmWeights,
) -> Result<Vec<EstimatorReport>> {
    methods
        .iter()
        .map(|m| replay_estimator(log, j0, *m, weights))
        .collect()
}
