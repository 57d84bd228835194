//! Moving least-squares fits: parameter-dependent weights solved per node,
//! stacked into `Π` and compressed with PCA.

use nalgebra::{DMatrix, DVector};

use super::lsm::{curve_design, points_matrix, surface_design, xy_of};
use super::pca::PcaModel;
use super::types::*;
use crate::error::{domain, Error, Result};
use crate::linalg::CONDITION_LIMIT;

/// Compactly supported cubic weight of a normalized distance.
pub fn mls_weight(epsilon: f64) -> f64 {
    let e = epsilon.abs();
    if e <= 0.5 {
        2.0 / 3.0 - 4.0 * e * e + 4.0 * e * e * e
    } else if e <= 1.0 {
        4.0 / 3.0 - 4.0 * e + 4.0 * e * e - 4.0 / 3.0 * e * e * e
    } else {
        0.0
    }
}

/// Weighted solve of one local fit. `weights` holds `ω(ε_l)` for every data row.
///
/// Local windows are short, so the weighted normal matrix is frequently worse
/// conditioned than the global limit. Singular directions are damped with
/// Tikhonov filter factors whose corner sits at `σ_max / CONDITION_LIMIT^¾`,
/// three decades below the global acceptance limit: directions the global fit
/// would accept change by at most about 1e-6, weaker ones are suppressed, and
/// the local weights stay bounded and continuous in the data.
fn local_solve(
    design: &DMatrix<f64>,
    data: &DMatrix<f64>,
    weights: &[f64],
    at: &str,
) -> Result<DMatrix<f64>> {
    let terms = design.ncols();
    let support: Vec<usize> = (0..weights.len()).filter(|&l| weights[l] > 0.0).collect();
    if support.len() < terms {
        return Err(Error::UnderdeterminedLocalFit {
            param: at.to_string(),
            support: support.len(),
            required: terms,
        });
    }
    let a = DMatrix::from_fn(support.len(), terms, |r, c| {
        weights[support[r]].sqrt() * design[(support[r], c)]
    });
    let b = DMatrix::from_fn(support.len(), data.ncols(), |r, c| {
        weights[support[r]].sqrt() * data[(support[r], c)]
    });
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(Error::UnderdeterminedLocalFit {
            param: at.to_string(),
            support: support.len(),
            required: terms,
        });
    }
    let lambda2 = (smax / CONDITION_LIMIT.powf(0.75)).powi(2);
    let mut utb = svd.u.as_ref().unwrap().transpose() * b;
    for (i, s) in svd.singular_values.iter().enumerate() {
        utb.row_mut(i).scale_mut(s / (s * s + lambda2));
    }
    Ok(svd.v_t.as_ref().unwrap().transpose() * utb)
}

/// Uncompressed local weights `Π = [ϑ(ρ_1), …, ϑ(ρ_N)]`, `3(n+1) x N`.
///
/// Each column is ordered `[σ_0; σ_1; …; σ_n]` with `σ_j ∈ R³`.
pub fn curve_local_weights(
    sample: &ShapeSample,
    basis: &BasisSpec,
    d: f64,
) -> Result<DMatrix<f64>> {
    basis.validate()?;
    if !sample.kind.is_curve() {
        return Err(domain("curve fitting needs a centerline or contour sample"));
    }
    if !(d > 0.0) {
        return Err(domain("support radius must be positive"));
    }
    let terms = basis.curve_terms();
    let design = curve_design(basis, &sample.arc_params);
    let data = points_matrix(&sample.points);
    let rhos = &sample.arc_params;
    let mut pi = DMatrix::zeros(3 * terms, sample.len());
    let mut w = vec![0.0; sample.len()];
    for (i, &rho) in rhos.iter().enumerate() {
        for (l, &rl) in rhos.iter().enumerate() {
            w[l] = mls_weight((rho - rl).abs() / d);
        }
        let coef = local_solve(&design, &data, &w, &format!("rho={rho:.6}"))?;
        for j in 0..terms {
            for c in 0..3 {
                pi[(3 * j + c, i)] = coef[(j, c)];
            }
        }
    }
    Ok(pi)
}

/// Uncompressed local surface weights `Π = [φ(x_1,y_1), …, φ(x_N,y_N)]`.
pub fn surface_local_weights(
    sample: &ShapeSample,
    basis: &BasisSpec,
    d: f64,
) -> Result<DMatrix<f64>> {
    basis.validate()?;
    if sample.kind != ShapeKind::Surface {
        return Err(domain("surface fitting needs a surface sample"));
    }
    if !(d > 0.0) {
        return Err(domain("support radius must be positive"));
    }
    let xy = xy_of(&sample.points);
    let design = surface_design(basis, &xy);
    let z = DMatrix::from_fn(sample.len(), 1, |i, _| sample.points[i].z);
    let mut pi = DMatrix::zeros(basis.surface_terms(), sample.len());
    let mut w = vec![0.0; sample.len()];
    for (i, p) in xy.iter().enumerate() {
        for (l, q) in xy.iter().enumerate() {
            let dist = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
            w[l] = mls_weight(dist / d);
        }
        let coef = local_solve(&design, &z, &w, &format!("xy=({:.6},{:.6})", p[0], p[1]))?;
        pi.set_column(i, &coef.column(0));
    }
    Ok(pi)
}

fn compress(
    pi: &DMatrix<f64>,
    basis: &BasisSpec,
    cfg: &MlsConfig,
    provenance: Provenance,
    nodes: MlsNodes,
) -> FeatureVector {
    let model = PcaModel::fit(pi, cfg.pca_rank_m);
    // vec(Π̃): columns stacked
    let values = DVector::from_column_slice(model.scores.as_slice());
    FeatureVector {
        values,
        provenance,
        meta: FeatureMeta {
            basis: *basis,
            mls: Some(MlsMeta {
                config: *cfg,
                mean: model.mean,
                loadings: model.loadings,
                singular_values: model.singular_values,
                nodes,
            }),
        },
    }
}

pub fn fit_curve_mls(
    sample: &ShapeSample,
    basis: &BasisSpec,
    cfg: &MlsConfig,
) -> Result<FeatureVector> {
    cfg.validate(sample.len())?;
    let pi = curve_local_weights(sample, basis, cfg.support_radius_d)?;
    Ok(compress(
        &pi,
        basis,
        cfg,
        Provenance::MlsCurve,
        MlsNodes::Curve(sample.arc_params.clone()),
    ))
}

pub fn fit_surface_mls(
    sample: &ShapeSample,
    basis: &BasisSpec,
    cfg: &MlsConfig,
) -> Result<FeatureVector> {
    cfg.validate(sample.len())?;
    let pi = surface_local_weights(sample, basis, cfg.support_radius_d)?;
    Ok(compress(
        &pi,
        basis,
        cfg,
        Provenance::MlsSurface,
        MlsNodes::Surface(xy_of(&sample.points)),
    ))
}

/// Rebuilds `Π` from a (possibly modified) compressed feature and its metadata.
pub fn expand_local_weights(feature: &FeatureVector) -> Result<DMatrix<f64>> {
    let meta = feature
        .meta
        .mls
        .as_ref()
        .ok_or_else(|| Error::Contract("feature carries no MLS metadata".into()))?;
    let rows = meta.mean.len();
    let m = meta.loadings.ncols();
    if feature.values.len() != rows * m {
        return Err(Error::Contract(format!(
            "MLS feature length {} != {rows} x {m}",
            feature.values.len()
        )));
    }
    let scores = DMatrix::from_column_slice(rows, m, feature.values.as_slice());
    Ok(super::pca::reconstruct_from(
        &meta.mean,
        &scores,
        &meta.loadings,
    ))
}
