use nalgebra::{DMatrix, DVector, Point3};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Centerline,
    Contour,
    Surface,
}

impl ShapeKind {
    pub fn is_curve(self) -> bool {
        !matches!(self, ShapeKind::Surface)
    }
}

/// Ordered, fixed-cardinality point set observed from the object.
///
/// Curves carry normalized chord-length parameters `arc_params`
/// (`0` at the first point, `1` at the last). Surfaces leave it empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSample {
    pub points: Vec<Point3<f64>>,
    pub kind: ShapeKind,
    pub arc_params: Vec<f64>,
}

impl ShapeSample {
    /// Builds a sample, computing chord-length parameters for curve kinds.
    pub fn new(points: Vec<Point3<f64>>, kind: ShapeKind) -> Result<Self> {
        if points.len() < 2 {
            return Err(domain(format!(
                "a shape needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points
            .iter()
            .any(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(domain("shape contains non-finite coordinates"));
        }
        let arc_params = if kind.is_curve() {
            chord_length_params(&points)?
        } else {
            Vec::new()
        };
        Ok(Self {
            points,
            kind,
            arc_params,
        })
    }

    /// Builds a curve sample with caller-supplied parameters.
    pub fn with_params(
        points: Vec<Point3<f64>>,
        kind: ShapeKind,
        arc_params: Vec<f64>,
    ) -> Result<Self> {
        if !kind.is_curve() {
            return Err(domain("explicit parameters only apply to curves"));
        }
        if points.len() < 2 || arc_params.len() != points.len() {
            return Err(domain("parameter count must match point count (>= 2)"));
        }
        if points
            .iter()
            .any(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(domain("shape contains non-finite coordinates"));
        }
        if arc_params.windows(2).any(|w| !(w[1] > w[0]))
            || arc_params[0] < 0.0
            || arc_params[arc_params.len() - 1] > 1.0
        {
            return Err(domain(
                "curve parameters must be strictly increasing within [0, 1]",
            ));
        }
        Ok(Self {
            points,
            kind,
            arc_params,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Flattened `[x0, y0, z0, x1, ...]` coordinates.
    pub fn to_flat(&self) -> DVector<f64> {
        DVector::from_iterator(
            3 * self.points.len(),
            self.points.iter().flat_map(|p| [p.x, p.y, p.z]),
        )
    }

    /// Mean Euclidean distance between corresponding points.
    pub fn mean_distance(&self, other: &ShapeSample) -> f64 {
        let n = self.points.len().min(other.points.len()).max(1);
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / n as f64
    }
}

/// Cumulative chord length normalized to `[0, 1]`.
pub fn chord_length_params(points: &[Point3<f64>]) -> Result<Vec<f64>> {
    let mut acc = Vec::with_capacity(points.len());
    let mut total = 0.0;
    acc.push(0.0);
    for w in points.windows(2) {
        let seg = (w[1] - w[0]).norm();
        if seg <= 0.0 {
            return Err(domain("consecutive curve points coincide; arc parameters would not be strictly increasing"));
        }
        total += seg;
        acc.push(total);
    }
    for v in acc.iter_mut() {
        *v /= total;
    }
    *acc.last_mut().unwrap() = 1.0;
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    Polynomial,
    Bernstein,
    CoxDeBoor,
    Trigonometric,
}

impl BasisFamily {
    pub const ALL: [BasisFamily; 4] = [
        BasisFamily::Polynomial,
        BasisFamily::Bernstein,
        BasisFamily::CoxDeBoor,
        BasisFamily::Trigonometric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BasisFamily::Polynomial => "polynomial",
            BasisFamily::Bernstein => "bernstein",
            BasisFamily::CoxDeBoor => "cox_deboor",
            BasisFamily::Trigonometric => "trigonometric",
        }
    }
}

impl std::str::FromStr for BasisFamily {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "polynomial" | "poly" => Ok(BasisFamily::Polynomial),
            "bernstein" => Ok(BasisFamily::Bernstein),
            "cox_deboor" | "coxdeboor" | "bspline" => Ok(BasisFamily::CoxDeBoor),
            "trigonometric" | "trig" => Ok(BasisFamily::Trigonometric),
            other => Err(domain(format!("unknown basis family '{other}'"))),
        }
    }
}

/// Basis family with its fitting order(s). `n` is used for curves,
/// `nx`/`ny` for surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub n: usize,
    pub nx: usize,
    pub ny: usize,
}

impl BasisSpec {
    pub fn curve(family: BasisFamily, n: usize) -> Self {
        Self {
            family,
            n,
            nx: n,
            ny: n,
        }
    }

    pub fn surface(family: BasisFamily, nx: usize, ny: usize) -> Self {
        Self {
            family,
            n: nx.max(ny),
            nx,
            ny,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.nx == 0 || self.ny == 0 {
            return Err(domain("basis orders must be >= 1"));
        }
        Ok(())
    }

    /// Number of shape weights of a curve fit (per coordinate).
    pub fn curve_terms(&self) -> usize {
        self.n + 1
    }

    pub fn surface_terms(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlsConfig {
    pub support_radius_d: f64,
    pub pca_rank_m: usize,
}

impl MlsConfig {
    pub fn new(support_radius_d: f64, pca_rank_m: usize) -> Self {
        Self {
            support_radius_d,
            pca_rank_m,
        }
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if !(self.support_radius_d > 0.0) || !self.support_radius_d.is_finite() {
            return Err(domain("support radius must be positive and finite"));
        }
        if self.pca_rank_m == 0 || self.pca_rank_m > n_points {
            return Err(domain(format!(
                "PCA rank must lie in [1, {n_points}], got {}",
                self.pca_rank_m
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LsmCurve,
    LsmSurface,
    MlsCurve,
    MlsSurface,
}

impl Provenance {
    pub fn is_curve(self) -> bool {
        matches!(self, Provenance::LsmCurve | Provenance::MlsCurve)
    }

    pub fn is_mls(self) -> bool {
        matches!(self, Provenance::MlsCurve | Provenance::MlsSurface)
    }
}

/// Node locations the MLS local fits were solved at.
#[derive(Debug, Clone, PartialEq)]
pub enum MlsNodes {
    Curve(Vec<f64>),
    Surface(Vec<[f64; 2]>),
}

impl MlsNodes {
    pub fn len(&self) -> usize {
        match self {
            MlsNodes::Curve(v) => v.len(),
            MlsNodes::Surface(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything needed to map a compressed MLS feature back to local weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MlsMeta {
    pub config: MlsConfig,
    /// Column mean of the stacked local-weight matrix.
    pub mean: DVector<f64>,
    /// Per-node loadings (`N x m`), one row per node.
    pub loadings: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub nodes: MlsNodes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMeta {
    pub basis: BasisSpec,
    pub mls: Option<MlsMeta>,
}

/// Compact shape descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: DVector<f64>,
    pub provenance: Provenance,
    pub meta: FeatureMeta,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Same provenance and metadata, different values.
    pub fn with_values(&self, values: DVector<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(crate::Error::Contract(format!(
                "feature length {} does not match {}",
                values.len(),
                self.values.len()
            )));
        }
        Ok(Self {
            values,
            provenance: self.provenance,
            meta: self.meta.clone(),
        })
    }
}

/// Expected feature length for a fitting method.
pub fn feature_len(provenance: Provenance, basis: &BasisSpec, m: usize) -> usize {
    match provenance {
        Provenance::LsmCurve => 3 * basis.curve_terms(),
        Provenance::LsmSurface => basis.surface_terms(),
        Provenance::MlsCurve => 3 * m * basis.curve_terms(),
        Provenance::MlsSurface => m * basis.surface_terms(),
    }
}
