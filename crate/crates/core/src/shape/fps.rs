use nalgebra::Point3;

use crate::error::{domain, Result};

/// Farthest point sampling: starts at `seed_index` and greedily adds the point
/// whose distance to the chosen set is largest. Ties resolve to the lowest index.
pub fn fps_downsample(points: &[Point3<f64>], k: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(domain(format!("cannot choose {k} of {n} points")));
    }
    if seed_index >= n {
        return Err(domain(format!(
            "seed index {seed_index} out of range for {n} points"
        )));
    }
    let mut chosen = Vec::with_capacity(k);
    let mut dist = vec![f64::INFINITY; n];
    let mut current = seed_index;
    for _ in 0..k {
        chosen.push(current);
        dist[current] = -1.0;
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in points.iter().enumerate() {
            if dist[i] < 0.0 {
                continue;
            }
            let d = (p - points[current]).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if dist[i] > best.0 {
                best = (dist[i], i);
            }
        }
        current = best.1;
    }
    Ok(chosen)
}

/// Smallest pairwise distance within a subset.
pub fn min_pairwise_distance(points: &[Point3<f64>], subset: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            best = best.min((points[i] - points[j]).norm());
        }
    }
    best
}
