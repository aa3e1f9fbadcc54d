//! Mesh-guided interpolation of point displacements onto Gaussian centers,
//! with the exact k-nearest-neighbor search and farthest point sampling it
//! relies on.

use crate::error::{Error, Result};
use crate::geom::{dist2, Vec3};
use crate::rng::SeededRng;

pub const DEFAULT_K: usize = 8;
pub const DEFAULT_BETA: f64 = 7.0;
/// Lower bound on the adaptive radius.
pub const RADIUS_FLOOR: f64 = 1e-8;

/// Row-major `M×K` neighbor table, rows sorted by ascending distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub k: usize,
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
}

impl KnnResult {
    pub fn rows(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn row_indices(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn row_distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterpWeights {
    pub k: usize,
    pub weights: Vec<f64>,
    pub radii: Vec<f64>,
}

/// Exact K nearest references per query; ties go to the lower index.
pub fn knn(queries: &[Vec3], references: &[Vec3], k: usize) -> Result<KnnResult> {
    if k == 0 || k > references.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} must lie in 1..={}",
            references.len()
        )));
    }
    let mut indices = Vec::with_capacity(queries.len() * k);
    let mut distances = Vec::with_capacity(queries.len() * k);
    // (squared distance, index), kept sorted lexicographically.
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for q in queries {
        best.clear();
        for (j, r) in references.iter().enumerate() {
            let d = dist2(*q, *r);
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|&(bd, bj)| bd < d || (bd == d && bj < j));
            best.insert(pos, (d, j));
            best.truncate(k);
        }
        for &(d, j) in &best {
            indices.push(j);
            distances.push(d.sqrt());
        }
    }
    Ok(KnnResult {
        k,
        indices,
        distances,
    })
}

/// `w = exp(-beta·d / r²)` with `r = sqrt(mean_k d)`.
pub fn adaptive_weights(knn: &KnnResult, beta: f64) -> InterpWeights {
    assert!(beta > 0.0, "beta must be positive");
    let k = knn.k;
    let mut weights = Vec::with_capacity(knn.distances.len());
    let mut radii = Vec::with_capacity(knn.rows());
    for i in 0..knn.rows() {
        let d = knn.row_distances(i);
        let r = (d.iter().sum::<f64>() / k as f64).sqrt().max(RADIUS_FLOOR);
        let r2 = r * r;
        weights.extend(d.iter().map(|&dk| (-beta * dk / r2).exp()));
        radii.push(r);
    }
    InterpWeights { k, weights, radii }
}

/// Neighbor table and normalized weights from canonical Gaussian positions to
/// canonical sample points; reusable across frames.
#[derive(Debug, Clone)]
pub struct MeshGuidedInterp {
    pub knn: KnnResult,
    pub weights: InterpWeights,
    normalized: Vec<f64>,
}

impl MeshGuidedInterp {
    pub fn new(g_positions: &[Vec3], p1: &[Vec3], k: usize, beta: f64) -> Result<Self> {
        let knn = knn(g_positions, p1, k)?;
        let weights = adaptive_weights(&knn, beta);
        let mut normalized = weights.weights.clone();
        for row in normalized.chunks_mut(k) {
            let s: f64 = row.iter().sum();
            for w in row.iter_mut() {
                *w /= s;
            }
        }
        Ok(Self {
            knn,
            weights,
            normalized,
        })
    }

    pub fn apply(&self, dp_t: &[Vec3]) -> Vec<Vec3> {
        let k = self.knn.k;
        (0..self.knn.rows())
            .map(|i| {
                let mut acc = [0.0; 3];
                for (&j, &w) in self
                    .knn
                    .row_indices(i)
                    .iter()
                    .zip(&self.normalized[i * k..(i + 1) * k])
                {
                    for d in 0..3 {
                        acc[d] += w * dp_t[j][d];
                    }
                }
                acc
            })
            .collect()
    }
}

pub fn interpolate_displacements(
    g_positions: &[Vec3],
    p1: &[Vec3],
    dp_t: &[Vec3],
    k: usize,
    beta: f64,
) -> Result<Vec<Vec3>> {
    if p1.len() != dp_t.len() {
        return Err(Error::Shape(format!(
            "{} canonical points but {} displacements",
            p1.len(),
            dp_t.len()
        )));
    }
    Ok(MeshGuidedInterp::new(g_positions, p1, k, beta)?.apply(dp_t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartRule {
    #[default]
    First,
    Index(usize),
    /// Start index drawn uniformly from the points with this seed.
    Seeded(u64),
}

/// Greedy max-min selection of `l` indices; ties go to the lower index.
pub fn farthest_point_sampling(points: &[Vec3], l: usize, start: StartRule) -> Result<Vec<usize>> {
    let n = points.len();
    if l > n {
        return Err(Error::InvalidInput(format!("cannot select {l} of {n} points")));
    }
    if l == 0 {
        return Ok(Vec::new());
    }
    let first = match start {
        StartRule::First => 0,
        StartRule::Index(i) if i < n => i,
        StartRule::Index(i) => {
            return Err(Error::InvalidInput(format!("start index {i} out of range")))
        }
        StartRule::Seeded(seed) => SeededRng::new(seed).below(n),
    };
    let mut selected = Vec::with_capacity(l);
    let mut min_d = vec![f64::INFINITY; n];
    let mut cur = first;
    for _ in 0..l {
        selected.push(cur);
        min_d[cur] = f64::NEG_INFINITY;
        let pc = points[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (j, p) in points.iter().enumerate() {
            if min_d[j] == f64::NEG_INFINITY {
                continue;
            }
            let d = dist2(*p, pc);
            if d < min_d[j] {
                min_d[j] = d;
            }
            if min_d[j] > best_d {
                best_d = min_d[j];
                best = j;
            }
        }
        cur = best;
    }
    Ok(selected)
}
