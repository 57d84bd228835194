//! Shape representation: parametric curve and surface fits that turn an
//! ordered point set into a compact feature vector.
//!
//! Two fitting methods are available. LSM solves one set of basis weights
//! for the whole shape. MLS solves a weighted fit around every node, stacks
//! the per-node weights and compresses them with PCA.

mod basis;
pub mod corpus;
mod fps;
mod lsm;
mod mls;
mod pca;
mod reconstruct;
mod types;

use serde::{Deserialize, Serialize};

pub use basis::{basis_eval, binomial};
pub use fps::{fps_downsample, min_pairwise_distance};
pub use lsm::{curve_cost, curve_design, fit_curve_lsm, fit_surface_lsm, surface_design};
pub use mls::{
    curve_local_weights, expand_local_weights, fit_curve_mls, fit_surface_mls, mls_weight,
    surface_local_weights,
};
pub use pca::PcaModel;
pub use reconstruct::{
    reconstruct_curve, reconstruct_like, reconstruct_surface, reconstruction_error,
};
pub use types::*;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    Lsm,
    Mls,
}

/// A complete fitting configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    pub method: FitMethod,
    pub basis: BasisSpec,
    pub mls: Option<MlsConfig>,
}

impl FitSpec {
    pub fn lsm(basis: BasisSpec) -> Self {
        Self {
            method: FitMethod::Lsm,
            basis,
            mls: None,
        }
    }

    pub fn mls(basis: BasisSpec, cfg: MlsConfig) -> Self {
        Self {
            method: FitMethod::Mls,
            basis,
            mls: Some(cfg),
        }
    }

    /// Fitting configuration used for each object type by default:
    /// centerlines use LSM/Bernstein n=5, contours MLS/trigonometric n=4
    /// (d=0.2, m=1), surfaces MLS/polynomial n_x=n_y=2 (d=0.2 m, m=1).
    pub fn default_for(kind: ShapeKind) -> Self {
        match kind {
            ShapeKind::Centerline => Self::lsm(BasisSpec::curve(BasisFamily::Bernstein, 5)),
            ShapeKind::Contour => Self::mls(
                BasisSpec::curve(BasisFamily::Trigonometric, 4),
                MlsConfig::new(0.2, 1),
            ),
            ShapeKind::Surface => Self::mls(
                BasisSpec::surface(BasisFamily::Polynomial, 2, 2),
                MlsConfig::new(0.2, 1),
            ),
        }
    }

    pub fn provenance(&self, kind: ShapeKind) -> Provenance {
        match (self.method, kind.is_curve()) {
            (FitMethod::Lsm, true) => Provenance::LsmCurve,
            (FitMethod::Lsm, false) => Provenance::LsmSurface,
            (FitMethod::Mls, true) => Provenance::MlsCurve,
            (FitMethod::Mls, false) => Provenance::MlsSurface,
        }
    }

    /// Length of the feature vector this configuration produces.
    pub fn feature_len(&self, kind: ShapeKind) -> usize {
        types::feature_len(
            self.provenance(kind),
            &self.basis,
            self.mls.map_or(1, |c| c.pca_rank_m),
        )
    }

    pub fn fit(&self, sample: &ShapeSample) -> Result<FeatureVector> {
        match (self.method, sample.kind.is_curve()) {
            (FitMethod::Lsm, true) => fit_curve_lsm(sample, &self.basis),
            (FitMethod::Lsm, false) => fit_surface_lsm(sample, &self.basis),
            (FitMethod::Mls, curve) => {
                let cfg = self.mls.ok_or_else(|| {
                    crate::Error::Config("MLS fitting needs a support radius and PCA rank".into())
                })?;
                if curve {
                    fit_curve_mls(sample, &self.basis, &cfg)
                } else {
                    fit_surface_mls(sample, &self.basis, &cfg)
                }
            }
        }
    }
}
