use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use shape_servo::plant::{babble, read_dataset, write_dataset, BabbleConfig};
use shape_servo::rtm::calibrate_initial;
use shape_servo::servo::{
    demonstration_script, fit_grid, parse_occlusion, record_target, run_estimator_compare,
    run_fit_benchmark, run_servo, simulated_corpus, write_fit_bench, write_run, write_target,
    EstimatorKind, FeatureLog, FittedPlant, RunStatus, ServoConfig,
};
use shape_servo::shape::corpus::read_corpus;
use shape_servo::shape::{BasisFamily, FitMethod, MlsConfig};
use shape_servo::{Error, Result};

#[derive(Parser)]
#[command(
    name = "shape-servo",
    version,
    about = "Shape servoing experiments on a simulated deformable object"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration (defaults are used for missing fields).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Object type used when no configuration file is given.
    #[arg(long, default_value = "cable")]
    object: String,
    /// Seed for exploration, demonstrations and occlusion masks.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Occlusion schedule, e.g. `fraction:0.3:7` or `range:10-20@0-99`.
    #[arg(long)]
    occlusion: Option<String>,
    /// Estimator window length.
    #[arg(long)]
    eta: Option<usize>,
    /// MPC horizon.
    #[arg(long)]
    horizon: Option<usize>,
    /// Estimator weights `mu1,mu2,mu3`.
    #[arg(long)]
    mu: Option<String>,
    /// MLS support radius.
    #[arg(long)]
    d: Option<f64>,
    /// MLS PCA rank.
    #[arg(long)]
    m: Option<usize>,
    /// Fitting order.
    #[arg(long)]
    order: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Record a random exploration dataset.
    Dataset {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        #[arg(long, default_value_t = 0.005)]
        amplitude: f64,
    },
    /// Compare fitting methods, families and orders on a shape corpus.
    FitBench {
        #[command(flatten)]
        common: Common,
        /// Corpus CSV; a simulated corpus is generated when omitted.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Comma-separated orders.
        #[arg(long, default_value = "1,2,3,4")]
        orders: String,
        /// Comma-separated MLS ranks; `full` keeps every principal direction.
        #[arg(long, default_value = "1,full")]
        ranks: String,
    },
    /// Replay a dataset through RTM and Broyden estimators.
    EstimateBench {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV written by `dataset`; a fresh log is recorded when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// Comma-separated RTM window lengths.
        #[arg(long, default_value = "5,20")]
        etas: String,
    },
    /// Record a reachable target by an open-loop demonstration.
    RecordTarget {
        #[command(flatten)]
        common: Common,
    },
    /// Run the closed loop against a recorded target.
    Servo {
        #[command(flatten)]
        common: Common,
        /// Target CSV; one is recorded into the output directory when omitted.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Print the full configuration with defaults filled in.
    PrintConfig {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} `{v}`")))
        })
        .collect()
}

fn load_config(c: &Common) -> Result<ServoConfig> {
    let mut cfg = match &c.config {
        Some(path) => ServoConfig::from_json_file(path)?,
        None => ServoConfig::for_object(c.object.parse()?),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(spec) = &c.occlusion {
        cfg.occlusion = parse_occlusion(spec)?;
    }
    if let Some(eta) = c.eta {
        cfg.rtm.eta = eta;
    }
    if let Some(h) = c.horizon {
        cfg.mpc.horizon = h;
    }
    if let Some(mu) = &c.mu {
        let v: Vec<f64> = parse_list(mu, "weight")?;
        if v.len() != 3 {
            return Err(Error::Config(
                "--mu needs three comma-separated weights".into(),
            ));
        }
        (cfg.rtm.mu1, cfg.rtm.mu2, cfg.rtm.mu3) = (v[0], v[1], v[2]);
    }
    if let Some(n) = c.order {
        cfg.fit.basis.n = n;
        cfg.fit.basis.nx = n;
        cfg.fit.basis.ny = n;
    }
    if c.d.is_some() || c.m.is_some() {
        let base = cfg.fit.mls.unwrap_or(MlsConfig::new(0.2, 1));
        cfg.fit.method = FitMethod::Mls;
        cfg.fit.mls = Some(MlsConfig::new(
            c.d.unwrap_or(base.support_radius_d),
            c.m.unwrap_or(base.pca_rank_m),
        ));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_summary(dir: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("metrics.json"),
        serde_json::to_string_pretty(value)?,
    )?;
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::PrintConfig { common } => {
            println!("{}", serde_json::to_string_pretty(&load_config(&common)?)?);
        }
        Command::Dataset {
            common,
            steps,
            amplitude,
        } => {
            let cfg = load_config(&common)?;
            let start = Instant::now();
            let babble_cfg = BabbleConfig {
                n_steps: steps,
                amplitude,
                seed: cfg.seed,
                ..BabbleConfig::default()
            };
            let (data, _) = babble(&cfg.plant.build()?, &babble_cfg)?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("dataset.csv");
            write_dataset(&path, &data)?;
            write_summary(
                &common.out,
                &json!({ "rows": data.rows.len(), "seed": cfg.seed, "amplitude": amplitude, "elapsed_s": start.elapsed().as_secs_f64(), "dataset": path }),
            )?;
            println!(
                "wrote {} transitions to {}",
                data.rows.len(),
                path.display()
            );
        }
        Command::FitBench {
            common,
            corpus,
            samples,
            orders,
            ranks,
        } => {
            let cfg = load_config(&common)?;
            let start = Instant::now();
            let (shapes, skipped) = match &corpus {
                Some(path) => {
                    let (_, s, skipped) = read_corpus(path)?;
                    (s, skipped)
                }
                None => (simulated_corpus(&cfg.plant, samples, cfg.seed)?, 0),
            };
            let first = shapes
                .first()
                .ok_or_else(|| Error::Config("corpus is empty".into()))?;
            let n_points = first.len();
            let kind = first.kind;
            let orders: Vec<usize> = parse_list(&orders, "order")?;
            let ranks = ranks
                .split(',')
                .map(|r| {
                    if r.trim() == "full" {
                        Ok(n_points)
                    } else {
                        r.trim()
                            .parse()
                            .map_err(|_| Error::Config(format!("bad rank `{r}`")))
                    }
                })
                .collect::<Result<Vec<usize>>>()?;
            let d = common
                .d
                .or(cfg.fit.mls.map(|m| m.support_radius_d))
                .unwrap_or(0.2);
            let grid = fit_grid(kind, &BasisFamily::ALL, &orders, d, &ranks);
            let rows = run_fit_benchmark(&shapes, &grid)?;
            std::fs::create_dir_all(&common.out)?;
            write_fit_bench(&common.out.join("fit_bench.csv"), &rows)?;
            write_summary(
                &common.out,
                &json!({ "samples": shapes.len(), "skipped_blocks": skipped, "kind": kind, "rows": rows, "elapsed_s": start.elapsed().as_secs_f64() }),
            )?;
            println!(
                "{:<14} {:>5} {:<6} {:>6} {:>4} {:>14} {:>12} {:>9}",
                "family", "order", "method", "d", "m", "mean_error", "elapsed_us", "failures"
            );
            for r in &rows {
                println!(
                    "{:<14} {:>5} {:<6} {:>6} {:>4} {:>14.6e} {:>12.1} {:>9}",
                    r.family,
                    r.order,
                    r.method,
                    r.d.map_or("-".into(), |v| v.to_string()),
                    r.m.map_or("-".into(), |v| v.to_string()),
                    r.mean_error,
                    r.elapsed_us,
                    r.failures
                );
            }
        }
        Command::EstimateBench {
            common,
            dataset,
            steps,
            etas,
        } => {
            let cfg = load_config(&common)?;
            let start = Instant::now();
            let mut probe = FittedPlant {
                plant: cfg.plant.build()?,
                fit: &cfg.fit,
            };
            let j0 = calibrate_initial(&mut probe, cfg.probe_amplitude, cfg.rtm.eta)?
                .with_unit_scale(cfg.estimator_unit_scale)?;
            let data = match &dataset {
                Some(path) => read_dataset(path)?,
                None => {
                    let babble_cfg = BabbleConfig {
                        n_steps: steps,
                        seed: cfg.seed,
                        ..BabbleConfig::default()
                    };
                    babble(&probe.plant, &babble_cfg)?.0
                }
            };
            let log = FeatureLog::from_dataset(&data, cfg.plant.object.shape_kind(), &cfg.fit)?;
            let mut methods: Vec<EstimatorKind> = parse_list::<usize>(&etas, "eta")?
                .into_iter()
                .map(|eta| EstimatorKind::Rtm { eta })
                .collect();
            methods.push(EstimatorKind::default());
            let reports = run_estimator_compare(&log, &j0, &methods, &cfg.rtm)?;
            std::fs::create_dir_all(&common.out)?;
            for r in &reports {
                shape_servo::rtm::write_estimator_trace(
                    &common.out.join(format!("estimator_{}.csv", r.method)),
                    &r.rows,
                )?;
                println!(
                    "{:<12} mean T1 {:.4e}  mean T2 {:.4e}  Q3 p95 {:.4e}",
                    r.method, r.mean_t1, r.mean_t2, r.q3_p95
                );
            }
            let summary: Vec<_> = reports
                .iter()
                .map(|r| json!({ "method": r.method, "mean_T1": r.mean_t1, "mean_T2": r.mean_t2, "Q3_p95": r.q3_p95 }))
                .collect();
            write_summary(
                &common.out,
                &json!({ "steps": log.commands.len(), "dataset": dataset, "seed": cfg.seed, "methods": summary, "elapsed_s": start.elapsed().as_secs_f64() }),
            )?;
        }
        Command::RecordTarget { common } => {
            let cfg = load_config(&common)?;
            let target = record_target(&cfg, &demonstration_script(&cfg))?;
            std::fs::create_dir_all(&common.out)?;
            let path = common.out.join("target.csv");
            write_target(&path, &target, &cfg.fit)?;
            write_summary(
                &common.out,
                &json!({ "target": path, "steps": cfg.demo.steps, "seed": cfg.seed, "grasp": target.grasp.coords.as_slice() }),
            )?;
            println!(
                "recorded target after {} demonstration steps: {}",
                cfg.demo.steps,
                path.display()
            );
        }
        Command::Servo { common, target } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = target {
                cfg.target = Some(t);
            }
            if cfg.target.is_none() {
                std::fs::create_dir_all(&common.out)?;
                let path = common.out.join("target.csv");
                write_target(
                    &path,
                    &record_target(&cfg, &demonstration_script(&cfg))?,
                    &cfg.fit,
                )?;
                cfg.target = Some(path);
            }
            let metrics = run_servo(&cfg)?;
            write_run(&common.out, &metrics, &cfg)?;
            println!(
                "{:?}: T_max {} t_d {:?} t_s {:?} d_eff {:.4} m, error {:.3e} -> {:.3e} (threshold {:.3e}), {:.2} ms/step",
                metrics.status,
                metrics.t_max,
                metrics.t_d,
                metrics.t_s,
                metrics.d_eff,
                metrics.initial_error,
                metrics.final_error,
                metrics.threshold,
                metrics.mean_step_ms
            );
            if metrics.status != RunStatus::Converged {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
