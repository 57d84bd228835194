use nalgebra::{DMatrix, Point3};

use super::lsm::{eval_curve_weights, eval_surface_weights};
use super::mls::expand_local_weights;
use super::types::*;
use crate::error::{domain, Error, Result};

/// Evaluates the fitted curve at each `ρ`.
///
/// MLS features are first expanded back to per-node local weights; between
/// nodes the local weights are interpolated linearly in `ρ`.
pub fn reconstruct_curve(feature: &FeatureVector, rhos: &[f64]) -> Result<Vec<Point3<f64>>> {
    if !feature.provenance.is_curve() {
        return Err(Error::Contract(
            "curve reconstruction needs a curve feature".into(),
        ));
    }
    if let Some(bad) = rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(domain(format!("curve parameter {bad} outside [0, 1]")));
    }
    let basis = feature.meta.basis;
    match feature.provenance {
        Provenance::LsmCurve => Ok(rhos
            .iter()
            .map(|&r| eval_curve_weights(&basis, feature.values.as_slice(), r))
            .collect()),
        _ => {
            let pi = expand_local_weights(feature)?;
            let nodes = match &feature.meta.mls.as_ref().unwrap().nodes {
                MlsNodes::Curve(r) => r,
                MlsNodes::Surface(_) => {
                    return Err(Error::Contract("curve feature with surface nodes".into()))
                }
            };
            Ok(rhos
                .iter()
                .map(|&r| {
                    eval_curve_weights(&basis, interpolate_column(&pi, nodes, r).as_slice(), r)
                })
                .collect())
        }
    }
}

fn interpolate_column(pi: &DMatrix<f64>, nodes: &[f64], rho: f64) -> Vec<f64> {
    let k = nodes.partition_point(|&n| n < rho);
    if k == 0 {
        return pi.column(0).iter().copied().collect();
    }
    if k >= nodes.len() {
        return pi.column(nodes.len() - 1).iter().copied().collect();
    }
    if nodes[k] == rho {
        return pi.column(k).iter().copied().collect();
    }
    let t = (rho - nodes[k - 1]) / (nodes[k] - nodes[k - 1]);
    pi.column(k - 1)
        .iter()
        .zip(pi.column(k).iter())
        .map(|(a, b)| a + t * (b - a))
        .collect()
}

/// Evaluates the fitted depth `z = f(x, y)` at each query.
///
/// MLS features use the local weights of the nearest fitted node.
pub fn reconstruct_surface(feature: &FeatureVector, xy: &[[f64; 2]]) -> Result<Vec<f64>> {
    let basis = feature.meta.basis;
    match feature.provenance {
        Provenance::LsmSurface => Ok(xy
            .iter()
            .map(|p| eval_surface_weights(&basis, feature.values.as_slice(), p[0], p[1]))
            .collect()),
        Provenance::MlsSurface => {
            let pi = expand_local_weights(feature)?;
            let nodes = match &feature.meta.mls.as_ref().unwrap().nodes {
                MlsNodes::Surface(n) => n,
                MlsNodes::Curve(_) => {
                    return Err(Error::Contract("surface feature with curve nodes".into()))
                }
            };
            Ok(xy
                .iter()
                .map(|p| {
                    let nearest = nodes
                        .iter()
                        .enumerate()
                        .map(|(i, q)| (i, (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)))
                        .min_by(|a, b| a.1.total_cmp(&b.1))
                        .map(|(i, _)| i)
                        .unwrap_or(0);
                    eval_surface_weights(&basis, pi.column(nearest).as_slice(), p[0], p[1])
                })
                .collect())
        }
        _ => Err(Error::Contract(
            "surface reconstruction needs a surface feature".into(),
        )),
    }
}

/// Reconstructs a full sample on the parameterization of `template`
/// (curve parameters, or surface `x, y` locations).
pub fn reconstruct_like(feature: &FeatureVector, template: &ShapeSample) -> Result<ShapeSample> {
    if feature.provenance.is_curve() {
        let points = reconstruct_curve(feature, &template.arc_params)?;
        Ok(ShapeSample {
            points,
            kind: template.kind,
            arc_params: template.arc_params.clone(),
        })
    } else {
        let xy: Vec<[f64; 2]> = template.points.iter().map(|p| [p.x, p.y]).collect();
        let z = reconstruct_surface(feature, &xy)?;
        let points = xy
            .iter()
            .zip(z)
            .map(|(p, z)| Point3::new(p[0], p[1], z))
            .collect();
        Ok(ShapeSample {
            points,
            kind: template.kind,
            arc_params: Vec::new(),
        })
    }
}

/// `Σ_i ‖c_i − ĉ_i‖` between a sample and its reconstruction.
pub fn reconstruction_error(feature: &FeatureVector, sample: &ShapeSample) -> Result<f64> {
    let rec = reconstruct_like(feature, sample)?;
    Ok(sample
        .points
        .iter()
        .zip(&rec.points)
        .map(|(a, b)| (a - b).norm())
        .sum())
}
