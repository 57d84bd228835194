//! Occlusion compensation.
//!
//! Hidden points are filled from a model-based prediction of the next
//! shape: the last complete shape is fitted, its features are propagated
//! with the current Jacobian estimate (`ŝ⁺ = s + Ĵu`) and the propagated
//! features are reconstructed at the same parameters. Visible points always
//! keep the sensor value.

use nalgebra::Vector3;

use crate::error::{domain, Error, Result};
use crate::rtm::JacobianEstimate;
use crate::shape::{fps_downsample, reconstruct_like, FeatureVector, FitSpec, ShapeSample};

/// Default resolution scale for the multiresolution views.
pub const DEFAULT_RESOLUTION_SCALE: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorState {
    pub last_complete: ShapeSample,
    /// Feature of `last_complete` under the configured fitting spec.
    pub last_feature: FeatureVector,
    pub resolution_scale: usize,
}

impl CompensatorState {
    pub fn new(initial: ShapeSample, repr: &FitSpec) -> Result<Self> {
        let last_feature = repr.fit(&initial)?;
        Ok(Self {
            last_complete: initial,
            last_feature,
            resolution_scale: DEFAULT_RESOLUTION_SCALE,
        })
    }
}

/// Shape predicted for the next step from the last complete shape.
pub fn predict_next(
    state: &CompensatorState,
    u: &Vector3<f64>,
    j: &JacobianEstimate,
    repr: &FitSpec,
) -> Result<ShapeSample> {
    let feature = repr.fit(&state.last_complete)?;
    if j.p() != feature.len() {
        return Err(Error::Contract(format!(
            "Jacobian has {} rows, features have length {}",
            j.p(),
            feature.len()
        )));
    }
    let propagated = &feature.values + j.predict(u);
    reconstruct_like(&feature.with_values(propagated)?, &state.last_complete)
}

/// Fuses the observation with the prediction and returns the completed
/// shape together with the updated state (whose `last_feature` is the fit
/// of the completed shape).
pub fn compensate(
    state: &CompensatorState,
    observed: &ShapeSample,
    mask: &[bool],
    u: &Vector3<f64>,
    j: &JacobianEstimate,
    repr: &FitSpec,
) -> Result<(ShapeSample, CompensatorState)> {
    let n = state.last_complete.len();
    if mask.len() != n || observed.len() != n {
        return Err(Error::Contract(format!(
            "observation has {} points and mask {} entries, expected {n}",
            observed.len(),
            mask.len()
        )));
    }
    if observed.kind != state.last_complete.kind {
        return Err(Error::Contract(
            "observation kind differs from compensator state".into(),
        ));
    }
    let expected = repr.feature_len(observed.kind);
    if j.p() != expected {
        return Err(Error::Contract(format!(
            "Jacobian has {} rows, features have length {expected}",
            j.p()
        )));
    }
    let fused = if mask.iter().all(|v| *v) {
        observed.clone()
    } else {
        let predicted = predict_next(state, u, j, repr)?;
        let points = observed
            .points
            .iter()
            .zip(&predicted.points)
            .zip(mask)
            .map(|((o, p), &vis)| if vis { *o } else { *p })
            .collect();
        ShapeSample::new(points, observed.kind)?
    };
    let last_feature = repr.fit(&fused)?;
    let next = CompensatorState {
        last_complete: fused.clone(),
        last_feature,
        resolution_scale: state.resolution_scale,
    };
    Ok((fused, next))
}

/// Farthest-point index sets at resolutions `N`, `N/δ` and `N/δ²`. Each
/// coarser set is sampled from the finer one.
pub fn multires_views(sample: &ShapeSample, delta: usize) -> Result<[Vec<usize>; 3]> {
    let n = sample.len();
    if delta == 0 {
        return Err(domain("resolution scale must be at least 1"));
    }
    if delta * delta > n {
        return Err(domain(format!(
            "resolution scale {delta} too large for {n} points"
        )));
    }
    let full: Vec<usize> = (0..n).collect();
    let coarser = |finer: &Vec<usize>, size: usize| -> Result<Vec<usize>> {
        if size == finer.len() {
            return Ok(finer.clone());
        }
        let pts: Vec<_> = finer.iter().map(|&i| sample.points[i]).collect();
        Ok(fps_downsample(&pts, size, 0)?
            .into_iter()
            .map(|k| finer[k])
            .collect())
    };
    let mid = coarser(&full, n / delta)?;
    let coarse = coarser(&mid, n / (delta * delta))?;
    Ok([full, mid, coarse])
}
