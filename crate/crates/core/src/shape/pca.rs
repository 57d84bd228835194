//! Principal component compression of the stacked MLS local weights.
//!
//! The matrix `Π` (`P x N`, one column per node) is centered by its column
//! mean, decomposed as `U Σ Vᵀ`, and truncated to `Π̃ = U_m Σ_m` (`P x m`).
//! Each principal direction is flipped so that its largest-magnitude entry is
//! positive, which makes the compressed features reproducible.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `Π̃ = U_m Σ_m`, `P x m`.
    pub scores: DMatrix<f64>,
    /// `V_m`, `N x m`.
    pub loadings: DMatrix<f64>,
    /// All singular values, nonincreasing.
    pub singular_values: Vec<f64>,
}

impl PcaModel {
    /// Rank-`m` PCA of the columns of `pi`. Ranks above `min(P, N)` are padded
    /// with zero components.
    pub fn fit(pi: &DMatrix<f64>, m: usize) -> Self {
        let (p, n) = pi.shape();
        let mean = pi.column_mean();
        let mut centered = pi.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let svd = centered.svd(true, true);
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();

        let mut scores = DMatrix::zeros(p, m);
        let mut loadings = DMatrix::zeros(n, m);
        for (slot, &k) in order.iter().take(m).enumerate() {
            let mut dir = u.column(k).into_owned();
            let mut load = v_t.row(k).transpose();
            let pivot =
                dir.iter().copied().fold(
                    0.0f64,
                    |best, x| if x.abs() > best.abs() { x } else { best },
                );
            if pivot < 0.0 {
                dir.neg_mut();
                load.neg_mut();
            }
            scores.set_column(slot, &(dir * svd.singular_values[k]));
            loadings.set_column(slot, &load);
        }
        Self {
            mean,
            scores,
            loadings,
            singular_values,
        }
    }

    /// `Π ≈ mean 1ᵀ + Π̃ V_mᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        reconstruct_from(&self.mean, &self.scores, &self.loadings)
    }
}

pub fn reconstruct_from(
    mean: &DVector<f64>,
    scores: &DMatrix<f64>,
    loadings: &DMatrix<f64>,
) -> DMatrix<f64> {
    let mut out = scores * loadings.transpose();
    for mut col in out.column_iter_mut() {
        col += mean;
    }
    out
}
