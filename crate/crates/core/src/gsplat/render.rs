//! Front-to-back splatting with an exact reverse pass.
//!
//! Splats are sorted once per image by camera depth (ties by storage index),
//! then every pixel composites the splats whose 3σ box covers its center.

use super::camera::{covariance3d, perspective_jacobian, Camera, COV_FLOOR};
use super::{GaussianSet, Image, ATTRS};
use crate::autodiff::Var;
use crate::geom::{self, Mat3, Quat, Vec3};
use crate::tensor::Tensor;

pub const MAX_ALPHA: f64 = 0.99;

#[derive(Debug, Clone)]
struct Splat {
    id: usize,
    mean: [f64; 2],
    /// `(xx, xy, yy)` of the inverse covariance.
    conic: [f64; 3],
    cov: [f64; 3],
    opacity: f64,
    color: Vec3,
    t_cam: Vec3,
    m: [Vec3; 2],
    sigma: Mat3,
    rot: Mat3,
    q_hat: Quat,
    q_norm: f64,
    scale2: Vec3,
    focal: f64,
    w: Mat3,
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

/// Forward state kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Raster {
    height: usize,
    width: usize,
    count: usize,
    background: Vec3,
    splats: Vec<Splat>,
    offsets: Vec<usize>,
    entries: Vec<u32>,
    alphas: Vec<f64>,
    gauss: Vec<f64>,
    final_t: Vec<f64>,
    pub image: Tensor,
}

fn prepare(row: &[f64], id: usize, cam: &Camera, w: &Mat3, focal: f64) -> Option<Splat> {
    let pos = [row[0], row[1], row[2]];
    let log_scales = [row[3], row[4], row[5]];
    let q = [row[6], row[7], row[8], row[9]];
    let q_norm = geom::quat_norm(q);
    if !(q_norm > 0.0) {
        return None;
    }
    let q_hat = q.map(|v| v / q_norm);
    let t = geom::mat_vec(w, geom::sub(pos, cam.position));
    if !(t[2] > cam.near) {
        return None;
    }
    let sigma = covariance3d(log_scales, q_hat);
    let j = perspective_jacobian(focal, t);
    let m = [0, 1].map(|r| [0, 1, 2].map(|c| (0..3).map(|k| j[r][k] * w[k][c]).sum::<f64>()));
    let quad = |a: Vec3, b: Vec3| geom::dot(a, geom::mat_vec(&sigma, b));
    let cov = [
        quad(m[0], m[0]) + COV_FLOOR,
        quad(m[0], m[1]),
        quad(m[1], m[1]) + COV_FLOOR,
    ];
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > 0.0) {
        return None;
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mid = 0.5 * (cov[0] + cov[2]);
    let lambda = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = 3.0 * lambda.sqrt();
    let mean = cam.project_point(t);
    let lo_x = (mean[0] - radius - 0.5).ceil().max(0.0);
    let hi_x = (mean[0] + radius - 0.5).floor().min(cam.width as f64 - 1.0);
    let lo_y = (mean[1] - radius - 0.5).ceil().max(0.0);
    let hi_y = (mean[1] + radius - 0.5).floor().min(cam.height as f64 - 1.0);
    if !(lo_x <= hi_x && lo_y <= hi_y) {
        return None;
    }
    Some(Splat {
        id,
        mean,
        conic,
        cov,
        opacity: row[13],
        color: [row[10], row[11], row[12]],
        t_cam: t,
        m,
        sigma,
        rot: geom::quat_to_mat(q_hat),
        q_hat,
        q_norm,
        scale2: log_scales.map(|s| (2.0 * s).exp()),
        focal,
        w: *w,
        x0: lo_x as usize,
        x1: hi_x as usize,
        y0: lo_y as usize,
        y1: hi_y as usize,
    })
}

fn gaussian(s: &Splat, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
    (power.min(0.0).exp(), dx, dy)
}

/// Renders an `N×14` attribute table (raw quaternions are normalized here).
pub fn rasterize(attrs: &Tensor, cam: &Camera, background: Vec3) -> Raster {
    assert_eq!(attrs.cols(), ATTRS, "attribute table must have {ATTRS} columns");
    let (h, w) = (cam.height, cam.width);
    let rot = cam.rotation();
    let focal = cam.focal();
    let count = if attrs.is_empty() { 0 } else { attrs.rows() };
    let mut splats: Vec<Splat> = (0..count)
        .filter_map(|i| prepare(attrs.row(i), i, cam, &rot, focal))
        .collect();
    splats.sort_by(|a, b| a.t_cam[2].total_cmp(&b.t_cam[2]).then(a.id.cmp(&b.id)));

    let mut offsets = vec![0usize; h * w + 1];
    for s in &splats {
        for y in s.y0..=s.y1 {
            for x in s.x0..=s.x1 {
                offsets[y * w + x + 1] += 1;
            }
        }
    }
    for p in 0..h * w {
        offsets[p + 1] += offsets[p];
    }
    let mut cursor = offsets.clone();
    let mut entries = vec![0u32; offsets[h * w]];
    for (si, s) in splats.iter().enumerate() {
        for y in s.y0..=s.y1 {
            for x in s.x0..=s.x1 {
                let p = y * w + x;
                entries[cursor[p]] = si as u32;
                cursor[p] += 1;
            }
        }
    }

    let mut alphas = vec![0.0; entries.len()];
    let mut gauss = vec![0.0; entries.len()];
    let mut final_t = vec![1.0; h * w];
    let mut image = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for e in offsets[p]..offsets[p + 1] {
                let s = &splats[entries[e] as usize];
                let (g, _, _) = gaussian(s, px, py);
                let a = (s.opacity * g).min(MAX_ALPHA);
                for k in 0..3 {
                    c[k] += s.color[k] * a * t;
                }
                t *= 1.0 - a;
                alphas[e] = a;
                gauss[e] = g;
            }
            for k in 0..3 {
                image[p * 3 + k] = c[k] + background[k] * t;
            }
            final_t[p] = t;
        }
    }
    Raster {
        height: h,
        width: w,
        count,
        background,
        splats,
        offsets,
        entries,
        alphas,
        gauss,
        final_t,
        image: Tensor::new(&[h, w, 3], image),
    }
}

impl Raster {
    /// Gradient of a scalar loss with respect to the `N×14` input table,
    /// given the loss gradient `d_image` (`H×W×3`).
    pub fn backward(&self, d_image: &Tensor) -> Tensor {
        let (h, w) = (self.height, self.width);
        let n = self.splats.len();
        let mut d_mean = vec![[0.0; 2]; n];
        let mut d_conic = vec![[0.0; 3]; n];
        let mut d_opacity = vec![0.0; n];
        let mut d_color = vec![[0.0; 3]; n];
        let gi = d_image.data();
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let (lo, hi) = (self.offsets[p], self.offsets[p + 1]);
                if lo == hi {
                    continue;
                }
                let dc = [gi[p * 3], gi[p * 3 + 1], gi[p * 3 + 2]];
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut acc = self.background;
                let mut t = self.final_t[p];
                for e in (lo..hi).rev() {
                    let si = self.entries[e] as usize;
                    let s = &self.splats[si];
                    let a = self.alphas[e];
                    let t_i = t / (1.0 - a);
                    let mut d_alpha = 0.0;
                    for k in 0..3 {
                        d_alpha += dc[k] * (s.color[k] - acc[k]);
                        d_color[si][k] += dc[k] * a * t_i;
                        acc[k] = s.color[k] * a + (1.0 - a) * acc[k];
                    }
                    d_alpha *= t_i;
                    t = t_i;
                    let g = self.gauss[e];
                    if s.opacity * g >= MAX_ALPHA {
                        continue;
                    }
                    d_opacity[si] += d_alpha * g;
                    let d_power = d_alpha * s.opacity * g;
                    let (_, dx, dy) = gaussian(s, px, py);
                    d_conic[si][0] += -0.5 * d_power * dx * dx;
                    d_conic[si][1] += -d_power * dx * dy;
                    d_conic[si][2] += -0.5 * d_power * dy * dy;
                    d_mean[si][0] += d_power * (s.conic[0] * dx + s.conic[1] * dy);
                    d_mean[si][1] += d_power * (s.conic[1] * dx + s.conic[2] * dy);
                }
            }
        }

        let mut out = vec![0.0; self.count * ATTRS];
        for (si, s) in self.splats.iter().enumerate() {
            let row = &mut out[s.id * ATTRS..(s.id + 1) * ATTRS];
            row[10..13].copy_from_slice(&d_color[si]);
            row[13] = d_opacity[si];
            splat_backward(s, d_mean[si], d_conic[si], row);
        }
        Tensor::new(&[self.count, ATTRS], out)
    }
}

/// Chains mean and conic gradients back to position, log-scale and rotation.
fn splat_backward(s: &Splat, d_mean: [f64; 2], d_conic: [f64; 3], row: &mut [f64]) {
    let [a, b, c] = s.cov;
    let det = a * c - b * b;
    let inv2 = 1.0 / (det * det);
    let [d_a_, d_b_, d_c_] = d_conic;
    let da = (-d_a_ * c * c + d_b_ * b * c - d_c_ * b * b) * inv2;
    let db = (2.0 * d_a_ * b * c - d_b_ * (a * c + b * b) + 2.0 * d_c_ * a * b) * inv2;
    let dc = (-d_a_ * b * b + d_b_ * a * b - d_c_ * a * a) * inv2;

    let [m0, m1] = s.m;
    let mut gs = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            gs[i][j] = da * m0[i] * m0[j] + db * m0[i] * m1[j] + dc * m1[i] * m1[j];
        }
    }
    let sm0 = geom::mat_vec(&s.sigma, m0);
    let sm1 = geom::mat_vec(&s.sigma, m1);
    let dm = [
        [0, 1, 2].map(|k| 2.0 * da * sm0[k] + db * sm1[k]),
        [0, 1, 2].map(|k| 2.0 * dc * sm1[k] + db * sm0[k]),
    ];

    let focal = s.focal;
    let w = &s.w;
    let mut dj = [[0.0; 3]; 2];
    for r in 0..2 {
        for k in 0..3 {
            dj[r][k] = (0..3).map(|cc| dm[r][cc] * w[k][cc]).sum();
        }
    }
    let [tx, ty, tz] = s.t_cam;
    let iz = 1.0 / tz;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let mut dt = [
        -dj[0][2] * focal * iz2,
        -dj[1][2] * focal * iz2,
        -dj[0][0] * focal * iz2 + dj[0][2] * 2.0 * focal * tx * iz3 - dj[1][1] * focal * iz2
            + dj[1][2] * 2.0 * focal * ty * iz3,
    ];
    dt[0] += d_mean[0] * focal * iz;
    dt[1] += d_mean[1] * focal * iz;
    dt[2] -= (d_mean[0] * tx + d_mean[1] * ty) * focal * iz2;
    for i in 0..3 {
        row[i] = (0..3).map(|r| w[r][i] * dt[r]).sum();
    }

    let rm = &s.rot;
    let mut d_rot = [[0.0; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            d_rot[i][k] = (0..3)
                .map(|j| (gs[i][j] + gs[j][i]) * rm[j][k] * s.scale2[k])
                .sum();
        }
    }
    for k in 0..3 {
        let d_d: f64 = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| gs[i][j] * rm[i][k] * rm[j][k])
            .sum();
        row[3 + k] = 2.0 * s.scale2[k] * d_d;
    }
    let grads = geom::quat_to_mat_grad(s.q_hat);
    let dq_hat: [f64; 4] = [0, 1, 2, 3].map(|k| {
        (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| d_rot[i][j] * grads[k][i][j])
            .sum()
    });
    let proj: f64 = (0..4).map(|k| dq_hat[k] * s.q_hat[k]).sum();
    for k in 0..4 {
        row[6 + k] = (dq_hat[k] - s.q_hat[k] * proj) / s.q_norm;
    }
}

pub fn render(g: &GaussianSet, cam: &Camera, background: Vec3) -> Image {
    let raster = rasterize(&g.to_tensor(), cam, background);
    Image::from_tensor(&raster.image).expect("raster is H×W×3")
}

/// Differentiable render of an `N×14` attribute table to an `H×W×3` image.
pub fn render_var<'g>(attrs: Var<'g>, cam: &Camera, background: Vec3) -> Var<'g> {
    let raster = rasterize(&attrs.value(), cam, background);
    let image = raster.image.clone();
    attrs
        .graph()
        .op(&[attrs], image, move |g, _| vec![Some(raster.backward(g))])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, Graph};
    use crate::gsplat::project_gaussian;
    use crate::rng::SeededRng;

    fn camera(size: usize) -> Camera {
        Camera::new([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 0.7, (size, size)).unwrap()
    }

    fn splat(pos: Vec3, log_scale: f64, color: Vec3, opacity: f64) -> GaussianSet {
        GaussianSet {
            positions: vec![pos],
            log_scales: vec![[log_scale; 3]],
            rotations: vec![[1.0, 0.0, 0.0, 0.0]],
            colors: vec![color],
            opacities: vec![opacity],
        }
    }

    fn concat(sets: &[GaussianSet]) -> GaussianSet {
        let mut g = GaussianSet::empty();
        for s in sets {
            g.positions.extend(&s.positions);
            g.log_scales.extend(&s.log_scales);
            g.rotations.extend(&s.rotations);
            g.colors.extend(&s.colors);
            g.opacities.extend(&s.opacities);
        }
        g
    }

    fn scene(rng: &mut SeededRng, n: usize) -> Tensor {
        let mut rows = Vec::new();
        for _ in 0..n {
            rows.extend([0.3 * rng.normal(), 0.3 * rng.normal(), 0.3 * rng.normal()]);
            rows.extend([-2.0 + 0.3 * rng.normal(), -2.0 + 0.3 * rng.normal(), -2.0 + 0.3 * rng.normal()]);
            rows.extend(rng.normals(4));
            rows.extend([rng.uniform(), rng.uniform(), rng.uniform()]);
            rows.push(0.2 + 0.6 * rng.uniform());
        }
        Tensor::new(&[n, ATTRS], rows)
    }

    #[test]
    fn empty_and_transparent_sets_show_background() {
        let bg = [0.2, 0.4, 0.6];
        let cam = camera(16);
        assert_eq!(render(&GaussianSet::empty(), &cam, bg), Image::constant(16, 16, bg));
        let g = splat([0.0; 3], -1.0, [1.0, 0.0, 0.0], 0.0);
        assert_eq!(render(&g, &cam, bg), Image::constant(16, 16, bg));
    }

    #[test]
    fn single_splat_matches_direct_evaluation() {
        let cam = camera(32);
        let g = splat([0.0; 3], -1.0, [1.0, 0.0, 0.0], 1.0);
        let img = render(&g, &cam, [0.0; 3]);
        let p = project_gaussian(&cam, [0.0; 3], [-1.0; 3], [1.0, 0.0, 0.0, 0.0]).unwrap();
        let [a, b, c] = p.cov;
        let det = a * c - b * b;
        let radius = 3.0 * (0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt()).sqrt();
        for y in 0..32 {
            for x in 0..32 {
                let (dx, dy) = (x as f64 + 0.5 - p.mean[0], y as f64 + 0.5 - p.mean[1]);
                let inside = dx.abs() <= radius && dy.abs() <= radius;
                let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
                let expect = if inside { (-0.5 * q).exp().min(MAX_ALPHA) } else { 0.0 };
                let got = img.pixel(y, x);
                assert!((got[0] - expect).abs() < 1e-12, "({y},{x})");
                assert_eq!((got[1], got[2]), (0.0, 0.0));
            }
        }
        assert!((img.pixel(16, 16)[0] - 0.99).abs() < 1e-3);
        assert!(img.pixel(0, 0)[0] < 1e-3);
    }

    #[test]
    fn near_opaque_splat_occludes_far_one() {
        let cam = camera(24);
        let near = splat([0.0, 0.0, 1.0], -0.8, [1.0, 0.0, 0.0], 1.0);
        let far = splat([0.0, 0.0, -1.0], -1.0, [0.0, 1.0, 0.0], 1.0);
        let img = render(&concat(&[far, near]), &cam, [0.0; 3]);
        assert!(img.pixel(12, 12)[1] < 1e-2);
        assert!(img.pixel(12, 12)[0] > 0.9);
    }

    #[test]
    fn storage_order_does_not_matter() {
        let mut rng = SeededRng::new(11);
        let cam = camera(32);
        let t = scene(&mut rng, 12);
        let g = GaussianSet::from_tensor(&t).unwrap();
        let mut idx: Vec<usize> = (0..12).collect();
        idx.reverse();
        idx.swap(2, 7);
        let a = rasterize(&t, &cam, [0.1; 3]).image;
        let b = rasterize(&g.subset(&idx).to_tensor(), &cam, [0.1; 3]).image;
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn compositing_weights_never_exceed_one() {
        let mut rng = SeededRng::new(12);
        let mut t = scene(&mut rng, 30);
        for i in 0..30 {
            t.row_mut(i)[10..14].copy_from_slice(&[1.0, 1.0, 1.0, 1.0]);
        }
        let img = rasterize(&t, &camera(24), [0.0; 3]).image;
        assert!(img.data().iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(13);
        let t = scene(&mut rng, 3);
        let weights = Tensor::new(&[20, 20, 3], (0..1200).map(|_| rng.normal()).collect());
        let cam = camera(20);
        let err = gradcheck::check(&[t], 1e-5, move |g, v| {
            render_var(v[0], &cam, [0.3, 0.2, 0.1]).mul(g.constant(weights.clone())).sum()
        });
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn behind_camera_splats_are_skipped() {
        let cam = camera(16);
        let g = splat([0.0, 0.0, 4.0], -1.0, [1.0; 3], 1.0);
        let graph = Graph::new();
        let x = graph.param(g.to_tensor());
        let img = render_var(x, &cam, [0.0; 3]);
        assert_eq!(img.value().sum(), 0.0);
        let grads = graph.backward(img.sum());
        assert_eq!(grads.get_or_zeros(x).max_abs(), 0.0);
    }
}
