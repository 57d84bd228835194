//! Quasi-static elastic plant standing in for the object and the robot.
//!
//! Objects are spring networks (stretch springs plus a discrete-Laplacian
//! bending penalty). After every grasp displacement the network is settled
//! to its energy minimum with the fixed nodes pinned and the grasped nodes
//! translated rigidly with the end-effector.

mod babble;
mod occlusion;
mod settle;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

pub use babble::{
    babble, read_dataset, write_dataset, BabbleConfig, Dataset, DatasetHeader, DatasetRow,
};
pub use occlusion::{observe, Camera, MaskKind, OcclusionInterval, OcclusionSchedule};
pub use settle::{settle, SETTLE_MAX_ITERATIONS, SETTLE_TOLERANCE};

use crate::error::{domain, Result};
use crate::shape::{ShapeKind, ShapeSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Chain,
    Loop,
    Grid { rows: usize, cols: usize },
}

impl Topology {
    pub fn kind(self) -> ShapeKind {
        match self {
            Topology::Chain => ShapeKind::Centerline,
            Topology::Loop => ShapeKind::Contour,
            Topology::Grid { .. } => ShapeKind::Surface,
        }
    }
}

/// Stretch stiffness per spring (N/m) and bending stiffness (N·m²).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stiffness {
    pub stretch: f64,
    pub bend: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub(crate) struct Spring {
    pub a: usize,
    pub b: usize,
    pub rest: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub nodes: Vec<Point3<f64>>,
    /// End-effector position; equals the primary grasped node.
    pub grasp: Point3<f64>,
    pub fixed_indices: Vec<usize>,
    /// Grasped nodes and their rigid offsets from `grasp`.
    pub grasped: Vec<(usize, Vector3<f64>)>,
    pub topology: Topology,
    pub stiffness: Stiffness,
    pub(crate) springs: Vec<Spring>,
    pub(crate) bends: Vec<[usize; 3]>,
    /// Scale applied to the squared Laplacian: `k_b / L0³`.
    pub(crate) bend_coeff: f64,
}

/// Nodes on a circular arc of length `length` in the x–z plane, starting at
/// the origin with heading tilted up by half the turning angle and ending
/// tilted down by the same amount.
fn arc_points(count: usize, length: f64, turning: f64) -> Vec<Point3<f64>> {
    let radius = length / turning;
    let a0 = turning / 2.0;
    (0..count)
        .map(|i| {
            let a = a0 - turning * i as f64 / (count - 1) as f64;
            Point3::new(
                radius * (a0.sin() - a.sin()),
                0.0,
                radius * (a.cos() - a0.cos()),
            )
        })
        .collect()
}

impl PlantState {
    /// Builds a network whose rest configuration is `nodes` and settles it.
    pub fn new(
        nodes: Vec<Point3<f64>>,
        topology: Topology,
        stiffness: Stiffness,
        fixed_indices: Vec<usize>,
        grasped_indices: Vec<usize>,
    ) -> Result<Self> {
        let n = nodes.len();
        if n < 3 {
            return Err(domain("a plant needs at least three nodes"));
        }
        if let Topology::Grid { rows, cols } = topology {
            if rows * cols != n || rows < 2 || cols < 3 {
                return Err(domain("grid dimensions do not match node count"));
            }
        }
        if grasped_indices.is_empty()
            || grasped_indices
                .iter()
                .chain(&fixed_indices)
                .any(|&i| i >= n)
        {
            return Err(domain("grasp/fixed indices out of range or empty grasp"));
        }
        if grasped_indices.iter().any(|i| fixed_indices.contains(i)) {
            return Err(domain("a node cannot be both fixed and grasped"));
        }
        if !(stiffness.stretch > 0.0 && stiffness.bend > 0.0) {
            return Err(domain("stiffness values must be positive"));
        }
        let mut springs = Vec::new();
        let mut bends = Vec::new();
        let mut structural = n;
        let spring = |a: usize, b: usize| Spring {
            a,
            b,
            rest: (nodes[a] - nodes[b]).norm(),
        };
        match topology {
            Topology::Chain => {
                springs.extend((0..n - 1).map(|i| spring(i, i + 1)));
                structural = n - 1;
                bends.extend((1..n - 1).map(|i| [i - 1, i, i + 1]));
            }
            Topology::Loop => {
                springs.extend((0..n).map(|i| spring(i, (i + 1) % n)));
                bends.extend((0..n).map(|i| [(i + n - 1) % n, i, (i + 1) % n]));
            }
            Topology::Grid { rows, cols } => {
                let id = |r: usize, c: usize| r * cols + c;
                for r in 0..rows {
                    for c in 0..cols {
                        if c + 1 < cols {
                            springs.push(spring(id(r, c), id(r, c + 1)));
                        }
                        if r + 1 < rows {
                            springs.push(spring(id(r, c), id(r + 1, c)));
                        }
                    }
                }
                structural = springs.len();
                for r in 0..rows - 1 {
                    for c in 0..cols - 1 {
                        springs.push(spring(id(r, c), id(r + 1, c + 1)));
                        springs.push(spring(id(r, c + 1), id(r + 1, c)));
                    }
                }
                for r in 0..rows {
                    for c in 0..cols {
                        if c >= 1 && c + 1 < cols {
                            bends.push([id(r, c - 1), id(r, c), id(r, c + 1)]);
                        }
                        if r >= 1 && r + 1 < rows {
                            bends.push([id(r - 1, c), id(r, c), id(r + 1, c)]);
                        }
                    }
                }
            }
        }
        if springs.iter().any(|s| !(s.rest > 0.0)) {
            return Err(domain("coincident neighbouring nodes"));
        }
        let mean_rest =
            springs[..structural].iter().map(|s| s.rest).sum::<f64>() / structural as f64;
        let grasp = nodes[grasped_indices[0]];
        let grasped = grasped_indices
            .iter()
            .map(|&i| (i, nodes[i] - grasp))
            .collect();
        let state = Self {
            nodes,
            grasp,
            fixed_indices,
            grasped,
            topology,
            stiffness,
            springs,
            bends,
            bend_coeff: stiffness.bend / mean_rest.powi(3),
        };
        settle(&state, grasp)
    }

    /// A 0.5 m cable of 64 nodes arched in the x–z plane, clamped (two fixed
    /// nodes) at the start and held by the gripper (two nodes) at the end.
    pub fn cable_default() -> Self {
        Self::cable(
            64,
            Stiffness {
                stretch: 2000.0,
                bend: 1e-3,
            },
        )
        .expect("default cable is valid")
    }

    pub fn cable(n: usize, stiffness: Stiffness) -> Result<Self> {
        if n < 6 {
            return Err(domain("cable needs at least 6 nodes"));
        }
        let nodes = arc_points(n, 0.5, std::f64::consts::FRAC_PI_2);
        Self::new(
            nodes,
            Topology::Chain,
            stiffness,
            vec![0, 1],
            vec![n - 1, n - 2],
        )
    }

    /// A closed elastic ring of radius 0.1 m in the x–y plane. Three nodes
    /// are pinned on one side; the gripper holds three nodes opposite.
    pub fn contour_default() -> Self {
        Self::contour(
            64,
            Stiffness {
                stretch: 2000.0,
                bend: 1e-3,
            },
        )
        .expect("default contour is valid")
    }

    pub fn contour(n: usize, stiffness: Stiffness) -> Result<Self> {
        if n < 8 {
            return Err(domain("contour needs at least 8 nodes"));
        }
        let radius = 0.1;
        let nodes = (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                Point3::new(radius * t.cos(), radius * t.sin(), 0.0)
            })
            .collect();
        let h = n / 2;
        Self::new(
            nodes,
            Topology::Loop,
            stiffness,
            vec![n - 1, 0, 1],
            vec![h, h - 1, h + 1],
        )
    }

    /// A 0.3 m x 0.12 m sheet on a 4 x 8 grid, arched along x. The first two
    /// columns are clamped, the gripper holds the last two.
    pub fn sheet_default() -> Self {
        Self::sheet(
            4,
            8,
            Stiffness {
                stretch: 2000.0,
                bend: 2e-3,
            },
        )
        .expect("default sheet is valid")
    }

    pub fn sheet(rows: usize, cols: usize, stiffness: Stiffness) -> Result<Self> {
        if rows < 2 || cols < 5 {
            return Err(domain("sheet needs at least 2 rows and 5 columns"));
        }
        let profile = arc_points(cols, 0.3, std::f64::consts::FRAC_PI_3);
        let width = 0.12;
        let mut nodes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let y = width * r as f64 / (rows - 1) as f64;
            for p in &profile {
                nodes.push(Point3::new(p.x + 0.02, y + 0.02, p.z));
            }
        }
        let mut fixed = Vec::new();
        let mut grasped = vec![cols - 1];
        for r in 0..rows {
            fixed.push(r * cols);
            fixed.push(r * cols + 1);
            for c in [cols - 2, cols - 1] {
                let id = r * cols + c;
                if id != cols - 1 {
                    grasped.push(id);
                }
            }
        }
        Self::new(
            nodes,
            Topology::Grid { rows, cols },
            stiffness,
            fixed,
            grasped,
        )
    }

    pub fn for_kind(kind: ShapeKind) -> Self {
        match kind {
            ShapeKind::Centerline => Self::cable_default(),
            ShapeKind::Contour => Self::contour_default(),
            ShapeKind::Surface => Self::sheet_default(),
        }
    }

    pub fn kind(&self) -> ShapeKind {
        self.topology.kind()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Elastic energy of the current configuration (J).
    pub fn energy(&self) -> f64 {
        settle::energy(self, &self.nodes)
    }

    /// Ground-truth ordered sample (chain index, contour traversal or
    /// row-major grid order).
    pub fn sample(&self) -> ShapeSample {
        ShapeSample::new(self.nodes.clone(), self.kind()).expect("plant nodes form a valid sample")
    }

    /// Settles after displacing the end-effector by `u`.
    pub fn step(&self, u: &Vector3<f64>) -> Result<Self> {
        settle(self, self.grasp + u)
    }

    /// Axis-aligned bounding box of the nodes.
    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        bounding_box(&self.nodes)
    }
}

pub fn bounding_box(points: &[Point3<f64>]) -> (Point3<f64>, Point3<f64>) {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    (lo, hi)
}
