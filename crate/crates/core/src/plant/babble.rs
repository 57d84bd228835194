//! Random exploratory motion and the transition datasets it produces.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PlantState, Stiffness, Topology};
use crate::error::{domain, Result};
use crate::shape::corpus::sidecar_path;
use crate::COMMAND_SATURATION;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BabbleConfig {
    pub n_steps: usize,
    /// Per-axis bound on each command (m).
    pub amplitude: f64,
    pub seed: u64,
    /// The grasp stays within this distance of its start, per axis (m).
    pub half_extent: f64,
}

impl Default for BabbleConfig {
    fn default() -> Self {
        Self {
            n_steps: 10_000,
            amplitude: 0.005,
            seed: 0,
            half_extent: 0.05,
        }
    }
}

/// One transition `(c_k, r_k, u_k, c_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub step: usize,
    pub command: Vector3<f64>,
    pub grasp: Point3<f64>,
    pub shape: Vec<Point3<f64>>,
    pub next_shape: Vec<Point3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub topology: Topology,
    pub stiffness: Stiffness,
    pub seed: u64,
    pub n: usize,
    pub amplitude: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub rows: Vec<DatasetRow>,
}

impl Dataset {
    /// All distinct shapes in order: `c_0, …, c_K`.
    pub fn shapes(&self) -> Vec<Vec<Point3<f64>>> {
        let mut out: Vec<_> = self.rows.iter().map(|r| r.shape.clone()).collect();
        if let Some(last) = self.rows.last() {
            out.push(last.next_shape.clone());
        }
        out
    }
}

/// Drives the grasp with uniformly random per-axis steps in
/// `[-amplitude, amplitude]`, reflecting any component that would leave the
/// box around the starting grasp.
pub fn babble(state: &PlantState, cfg: &BabbleConfig) -> Result<(Dataset, PlantState)> {
    if !(0.0..=COMMAND_SATURATION).contains(&cfg.amplitude) {
        return Err(domain(format!(
            "babble amplitude must lie in [0, {COMMAND_SATURATION}]"
        )));
    }
    if !(cfg.half_extent >= 0.0) {
        return Err(domain("babble half extent must be nonnegative"));
    }
    let origin = state.grasp;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = state.clone();
    let mut rows = Vec::with_capacity(cfg.n_steps);
    for step in 0..cfg.n_steps {
        let mut u = Vector3::zeros();
        for c in 0..3 {
            let mut v = if cfg.amplitude > 0.0 {
                rng.gen_range(-cfg.amplitude..=cfg.amplitude)
            } else {
                0.0
            };
            let off = current.grasp[c] + v - origin[c];
            if off.abs() > cfg.half_extent {
                v = -v;
            }
            u[c] = v;
        }
        let next = current.step(&u)?;
        rows.push(DatasetRow {
            step,
            command: u,
            grasp: current.grasp,
            shape: current.nodes.clone(),
            next_shape: next.nodes.clone(),
        });
        current = next;
    }
    let header = DatasetHeader {
        topology: state.topology,
        stiffness: state.stiffness,
        seed: cfg.seed,
        n: state.len(),
        amplitude: cfg.amplitude,
        rows: rows.len(),
    };
    Ok((Dataset { header, rows }, current))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let n = data.header.n;
    let mut w = BufWriter::new(File::create(path)?);
    let mut cols = vec!["step", "ux", "uy", "uz", "rx", "ry", "rz"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for prefix in ["c", "next"] {
        for i in 0..n {
            for axis in ["x", "y", "z"] {
                cols.push(format!("{prefix}{i}_{axis}"));
            }
        }
    }
    writeln!(w, "{}", cols.join(","))?;
    for row in &data.rows {
        write!(
            w,
            "{},{},{},{},{},{},{}",
            row.step,
            row.command.x,
            row.command.y,
            row.command.z,
            row.grasp.x,
            row.grasp.y,
            row.grasp.z
        )?;
        for p in row.shape.iter().chain(&row.next_shape) {
            write!(w, ",{},{},{}", p.x, p.y, p.z)?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    std::fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&data.header)?,
    )?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let header: DatasetHeader =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    let n = header.n;
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 7 + 6 * n {
            return Err(domain(format!(
                "dataset row has {} columns, expected {}",
                record.len(),
                7 + 6 * n
            )));
        }
        let step = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| domain(format!("bad step: {e}")))?;
        let vals = record
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| domain(format!("bad number in dataset: {e}")))?;
        let pts = |from: usize| {
            (0..n)
                .map(|i| {
                    Point3::new(
                        vals[from + 3 * i],
                        vals[from + 3 * i + 1],
                        vals[from + 3 * i + 2],
                    )
                })
                .collect()
        };
        rows.push(DatasetRow {
            step,
            command: Vector3::new(vals[0], vals[1], vals[2]),
            grasp: Point3::new(vals[3], vals[4], vals[5]),
            shape: pts(6),
            next_shape: pts(6 + 3 * n),
        });
    }
    Ok(Dataset { header, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n_steps: usize, amplitude: f64) -> BabbleConfig {
        BabbleConfig {
            n_steps,
            amplitude,
            seed: 3,
            half_extent: 0.05,
        }
    }

    #[test]
    fn zero_steps_is_empty() {
        let (d, _) = babble(&PlantState::cable_default(), &cfg(0, 0.005)).unwrap();
        assert!(d.rows.is_empty());
    }

    #[test]
    fn zero_amplitude_keeps_shape() {
        let p = PlantState::cable_default();
        let (d, _) = babble(&p, &cfg(5, 0.0)).unwrap();
        for r in &d.rows {
            assert_eq!(r.command, Vector3::zeros());
            for (a, b) in r.next_shape.iter().zip(&p.nodes) {
                assert!((a - b).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn amplitude_above_saturation_is_rejected() {
        assert!(babble(&PlantState::cable_default(), &cfg(1, 0.02)).is_err());
    }

    #[test]
    fn deterministic_and_round_trips() {
        let p = PlantState::sheet_default();
        let (a, _) = babble(&p, &cfg(20, 0.005)).unwrap();
        let (b, _) = babble(&p, &cfg(20, 0.005)).unwrap();
        assert_eq!(a, b);
        for r in &a.rows {
            for &i in &p.fixed_indices {
                assert_eq!(r.next_shape[i], p.nodes[i]);
            }
        }
        let dir = std::env::temp_dir().join(format!("babble-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        write_dataset(&path, &a).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.header, a.header);
        assert_eq!(back.rows, a.rows);
        std::fs::remove_dir_all(dir).ok();
    }
}
