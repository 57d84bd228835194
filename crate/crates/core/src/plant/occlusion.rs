//! Synthetic occlusion of the observed point set.

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PlantState;
use crate::error::{domain, Result};
use crate::shape::ShapeSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Indices `a..=b` are hidden.
    IndexRange(usize, usize),
    /// Points with `normal · p > offset` are hidden.
    Halfspace { normal: [f64; 3], offset: f64 },
    /// `⌊f N⌋` points are hidden, redrawn every step from `(seed, step)`.
    Fraction { f: f64, seed: u64 },
}

/// Active on steps `start..=end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionInterval {
    pub start: usize,
    pub end: usize,
    pub mask: MaskKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OcclusionSchedule {
    intervals: Vec<OcclusionInterval>,
}

impl OcclusionSchedule {
    pub fn new(mut intervals: Vec<OcclusionInterval>) -> Result<Self> {
        intervals.sort_by_key(|i| i.start);
        for iv in &intervals {
            if iv.end < iv.start {
                return Err(domain("occlusion interval ends before it starts"));
            }
            match &iv.mask {
                MaskKind::Fraction { f, .. } if !(0.0..1.0).contains(f) => {
                    return Err(domain("occluded fraction must be in [0, 1)"))
                }
                MaskKind::IndexRange(a, b) if a > b => {
                    return Err(domain("index range is reversed"))
                }
                MaskKind::Halfspace { normal, offset } => {
                    let n = Vector3::from(*normal);
                    if !(n.norm() > 0.0) || !offset.is_finite() {
                        return Err(domain("halfspace needs a nonzero normal and finite offset"));
                    }
                }
                _ => {}
            }
        }
        if intervals.windows(2).any(|w| w[1].start <= w[0].end) {
            return Err(domain("occlusion intervals overlap"));
        }
        Ok(Self { intervals })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// A single interval covering every step.
    pub fn always(mask: MaskKind) -> Result<Self> {
        Self::new(vec![OcclusionInterval {
            start: 0,
            end: usize::MAX,
            mask,
        }])
    }

    pub fn intervals(&self) -> &[OcclusionInterval] {
        &self.intervals
    }

    pub fn active(&self, step: usize) -> Option<&MaskKind> {
        self.intervals
            .iter()
            .find(|i| i.start <= step && step <= i.end)
            .map(|i| &i.mask)
    }

    /// Visibility of each of the `points` at `step` (`true` = visible).
    pub fn mask(&self, points: &[Point3<f64>], step: usize) -> Vec<bool> {
        let n = points.len();
        let mut visible = vec![true; n];
        match self.active(step) {
            None => {}
            Some(MaskKind::IndexRange(a, b)) => {
                for v in visible
                    .iter_mut()
                    .take((*b).min(n.saturating_sub(1)) + 1)
                    .skip(*a)
                {
                    *v = false;
                }
            }
            Some(MaskKind::Halfspace { normal, offset }) => {
                let nrm = Vector3::from(*normal);
                for (v, p) in visible.iter_mut().zip(points) {
                    *v = nrm.dot(&p.coords) <= *offset;
                }
            }
            Some(MaskKind::Fraction { f, seed }) => {
                let hidden = (f * n as f64).floor() as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step as u64,
                );
                for i in rand::seq::index::sample(&mut rng, n, hidden) {
                    visible[i] = false;
                }
            }
        }
        visible
    }
}

/// Observes the plant. Hidden points report `last` when given (the previous
/// observation) and the true position otherwise.
pub fn observe(
    state: &PlantState,
    schedule: &OcclusionSchedule,
    step: usize,
    last: Option<&ShapeSample>,
) -> (ShapeSample, Vec<bool>) {
    let mask = schedule.mask(&state.nodes, step);
    let points: Vec<_> = match last {
        Some(prev) if prev.len() == state.len() => state
            .nodes
            .iter()
            .zip(&prev.points)
            .zip(&mask)
            .map(|((now, old), &vis)| if vis { *now } else { *old })
            .collect(),
        _ => state.nodes.clone(),
    };
    let sample = ShapeSample::new(points, state.kind())
        .or_else(|_| ShapeSample::new(state.nodes.clone(), state.kind()))
        .expect("plant nodes form a valid sample");
    (sample, mask)
}

/// A sensor that remembers its previous reading so occluded points go stale.
#[derive(Debug, Clone)]
pub struct Camera {
    pub schedule: OcclusionSchedule,
    last: Option<ShapeSample>,
}

impl Camera {
    pub fn new(schedule: OcclusionSchedule) -> Self {
        Self {
            schedule,
            last: None,
        }
    }

    pub fn observe(&mut self, state: &PlantState, step: usize) -> (ShapeSample, Vec<bool>) {
        let (sample, mask) = observe(state, &self.schedule, step, self.last.as_ref());
        self.last = Some(sample.clone());
        (sample, mask)
    }
}
