//! Global least-squares fits: one set of shape weights for the whole shape.

use nalgebra::{DMatrix, DVector, Point3};

use super::types::*;
use crate::error::{domain, Error, Result};
use crate::linalg::{lstsq, CONDITION_LIMIT};

/// Scalar design matrix `N x (n+1)` with rows `[B_0(ρ_i) … B_n(ρ_i)]`.
///
/// The full block matrix is this one Kronecker-multiplied with `E_3`; fitting
/// the three coordinates as separate right-hand sides is equivalent.
pub fn curve_design(basis: &BasisSpec, rhos: &[f64]) -> DMatrix<f64> {
    let terms = basis.curve_terms();
    let mut design = DMatrix::zeros(rhos.len(), terms);
    let mut row = vec![0.0; terms];
    for (i, &rho) in rhos.iter().enumerate() {
        basis.family.eval_all(basis.n, rho, &mut row);
        for j in 0..terms {
            design[(i, j)] = row[j];
        }
    }
    design
}

/// Row `[B_0(x)B_0(y), B_0(x)B_1(y), …, B_nx(x)B_ny(y)]`, `x` index major.
pub fn surface_row(basis: &BasisSpec, x: f64, y: f64, out: &mut [f64]) {
    let mut bx = vec![0.0; basis.nx + 1];
    let mut by = vec![0.0; basis.ny + 1];
    basis.family.eval_all(basis.nx, x, &mut bx);
    basis.family.eval_all(basis.ny, y, &mut by);
    for (j, bxj) in bx.iter().enumerate() {
        for (l, byl) in by.iter().enumerate() {
            out[j * (basis.ny + 1) + l] = bxj * byl;
        }
    }
}

pub fn surface_design(basis: &BasisSpec, xy: &[[f64; 2]]) -> DMatrix<f64> {
    let terms = basis.surface_terms();
    let mut design = DMatrix::zeros(xy.len(), terms);
    let mut row = vec![0.0; terms];
    for (i, p) in xy.iter().enumerate() {
        surface_row(basis, p[0], p[1], &mut row);
        for j in 0..terms {
            design[(i, j)] = row[j];
        }
    }
    design
}

pub(crate) fn points_matrix(points: &[Point3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 3, |i, c| points[i][c])
}

pub(crate) fn xy_of(points: &[Point3<f64>]) -> Vec<[f64; 2]> {
    points.iter().map(|p| [p.x, p.y]).collect()
}

/// Least-squares curve fit; `s = [p_0; …; p_n]` with `p_j ∈ R³`.
pub fn fit_curve_lsm(sample: &ShapeSample, basis: &BasisSpec) -> Result<FeatureVector> {
    basis.validate()?;
    if !sample.kind.is_curve() {
        return Err(domain("curve fitting needs a centerline or contour sample"));
    }
    let n_points = sample.len();
    let terms = basis.curve_terms();
    if n_points < 2 * terms {
        return Err(domain(format!(
            "{n_points} points cannot support {terms} weights (need at least {})",
            2 * terms
        )));
    }
    let design = curve_design(basis, &sample.arc_params);
    let coef = lstsq(&design, &points_matrix(&sample.points), CONDITION_LIMIT)?;
    let values = DVector::from_iterator(
        3 * terms,
        (0..terms)
            .flat_map(|j| (0..3).map(move |c| (j, c)))
            .map(|(j, c)| coef[(j, c)]),
    );
    Ok(FeatureVector {
        values,
        provenance: Provenance::LsmCurve,
        meta: FeatureMeta {
            basis: *basis,
            mls: None,
        },
    })
}

/// Least-squares depth fit `z = f(x, y)`; `s = [q_00, q_01, …, q_{nx ny}]`.
pub fn fit_surface_lsm(sample: &ShapeSample, basis: &BasisSpec) -> Result<FeatureVector> {
    basis.validate()?;
    if sample.kind != ShapeKind::Surface {
        return Err(domain("surface fitting needs a surface sample"));
    }
    let terms = basis.surface_terms();
    if sample.len() < 2 * terms {
        return Err(domain(format!(
            "{} points cannot support {terms} surface weights (need at least {})",
            sample.len(),
            2 * terms
        )));
    }
    let design = surface_design(basis, &xy_of(&sample.points));
    let z = DMatrix::from_fn(sample.len(), 1, |i, _| sample.points[i].z);
    let coef = lstsq(&design, &z, CONDITION_LIMIT)?;
    Ok(FeatureVector {
        values: coef.column(0).into_owned(),
        provenance: Provenance::LsmSurface,
        meta: FeatureMeta {
            basis: *basis,
            mls: None,
        },
    })
}

/// Evaluates `f(ρ) = Σ p_j B_j(ρ)` from LSM curve weights.
pub(crate) fn eval_curve_weights(basis: &BasisSpec, weights: &[f64], rho: f64) -> Point3<f64> {
    let terms = basis.curve_terms();
    let mut b = vec![0.0; terms];
    basis.family.eval_all(basis.n, rho, &mut b);
    let mut p = Point3::origin();
    for j in 0..terms {
        for c in 0..3 {
            p[c] += weights[3 * j + c] * b[j];
        }
    }
    p
}

pub(crate) fn eval_surface_weights(basis: &BasisSpec, weights: &[f64], x: f64, y: f64) -> f64 {
    let mut row = vec![0.0; basis.surface_terms()];
    surface_row(basis, x, y, &mut row);
    row.iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// The fitting cost `Q = ‖B s − c̄‖²` of an LSM curve feature on a sample.
pub fn curve_cost(sample: &ShapeSample, feature: &FeatureVector) -> Result<f64> {
    if feature.provenance != Provenance::LsmCurve {
        return Err(Error::Contract(
            "curve cost is defined for LSM curve features".into(),
        ));
    }
    let basis = feature.meta.basis;
    Ok(sample
        .points
        .iter()
        .zip(&sample.arc_params)
        .map(|(c, &rho)| {
            (eval_curve_weights(&basis, feature.values.as_slice(), rho) - c).norm_squared()
        })
        .sum())
}
