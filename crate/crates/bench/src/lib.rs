//! Random fixtures shared by the kernel benchmarks.

use gvf4d_core::geom::Vec3;
use gvf4d_core::gsplat::GaussianSet;
use gvf4d_core::{SeededRng, Tensor};

/// `n` points uniform in `[-0.5, 0.5]³`.
pub fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = SeededRng::new(seed);
    (0..n)
        .map(|_| [rng.uniform() - 0.5, rng.uniform() - 0.5, rng.uniform() - 0.5])
        .collect()
}

/// Small isotropic-ish Gaussians inside the unit cube around the origin.
pub fn random_gaussians(n: usize, seed: u64) -> GaussianSet {
    let mut rng = SeededRng::new(seed ^ 0x9e37);
    let positions = random_points(n, seed);
    GaussianSet {
        log_scales: (0..n).map(|_| [(0.03f64).ln() + 0.2 * rng.normal(); 3]).collect(),
        rotations: (0..n)
            .map(|_| {
                let q: Vec<f64> = rng.normals(4);
                let len = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                [q[0] / len, q[1] / len, q[2] / len, q[3] / len]
            })
            .collect(),
        colors: (0..n).map(|_| [rng.uniform(), rng.uniform(), rng.uniform()]).collect(),
        opacities: (0..n).map(|_| 0.3 + 0.6 * rng.uniform()).collect(),
        positions,
    }
}

/// `[rows, cols]` standard normal entries.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::new(&[rows, cols], SeededRng::new(seed).normals(rows * cols))
}
