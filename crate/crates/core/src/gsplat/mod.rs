//! Gaussian-splat data model: canonical sets, additive variation fields and
//! their application, plus the splatting renderer and image metrics.

pub mod camera;
pub mod image;
pub mod metrics;
pub mod render;

use std::path::Path;

use serde_json::{json, Map};

use crate::anim::PointTracks;
use crate::autodiff::Var;
use crate::blob::BlobFile;
use crate::error::{Error, Result};
use crate::geom::{self, Quat, Vec3};
use crate::interp::{farthest_point_sampling, knn, StartRule};
use crate::tensor::Tensor;

pub use camera::{camera_rig, project_gaussian, Camera, Projection, RigConfig};
pub use image::Image;
pub use metrics::{psnr, ssim};
pub use render::{render, render_var};

/// Scalars per Gaussian: position 3, log-scale 3, rotation 4, color 3, opacity 1.
pub const ATTRS: usize = 14;
pub const POS: std::ops::Range<usize> = 0..3;
pub const SCALE: std::ops::Range<usize> = 3..6;
pub const ROT: std::ops::Range<usize> = 6..10;
pub const COLOR: std::ops::Range<usize> = 10..13;
pub const OPACITY: usize = 13;
pub const FIELD_ORDER: [&str; 5] = ["position", "log_scale", "rotation", "color", "opacity"];
/// Quaternion sums shorter than this fall back to the canonical rotation.
pub const QUAT_FALLBACK_NORM: f64 = 1e-8;
pub const DEFAULT_OPACITY: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub positions: Vec<Vec3>,
    pub log_scales: Vec<Vec3>,
    /// Unit quaternions `(w, x, y, z)`.
    pub rotations: Vec<Quat>,
    pub colors: Vec<Vec3>,
    pub opacities: Vec<f64>,
}

impl GaussianSet {
    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            colors: Vec::new(),
            opacities: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if [
            self.log_scales.len(),
            self.rotations.len(),
            self.colors.len(),
            self.opacities.len(),
        ]
        .iter()
        .any(|&m| m != n)
        {
            return Err(Error::Shape("Gaussian attribute arrays differ in length".into()));
        }
        for i in 0..n {
            if (geom::quat_norm(self.rotations[i]) - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!("rotation {i} is not unit length")));
            }
            if self.colors[i].iter().any(|c| !(0.0..=1.0).contains(c))
                || !(0.0..=1.0).contains(&self.opacities[i])
            {
                return Err(Error::InvalidInput(format!("Gaussian {i} color/opacity outside [0,1]")));
            }
        }
        Ok(())
    }

    /// `N×14` attribute table in [`FIELD_ORDER`].
    pub fn to_tensor(&self) -> Tensor {
        let mut data = Vec::with_capacity(self.len() * ATTRS);
        for i in 0..self.len() {
            data.extend_from_slice(&self.positions[i]);
            data.extend_from_slice(&self.log_scales[i]);
            data.extend_from_slice(&self.rotations[i]);
            data.extend_from_slice(&self.colors[i]);
            data.push(self.opacities[i]);
        }
        Tensor::new(&[self.len(), ATTRS], data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.cols() != ATTRS {
            return Err(Error::Shape(format!("expected {ATTRS} attributes, got {}", t.cols())));
        }
        let mut g = Self::empty();
        for i in 0..t.rows() {
            let r = t.row(i);
            g.positions.push([r[0], r[1], r[2]]);
            g.log_scales.push([r[3], r[4], r[5]]);
            g.rotations.push([r[6], r[7], r[8], r[9]]);
            g.colors.push([r[10], r[11], r[12]]);
            g.opacities.push(r[13]);
        }
        Ok(g)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            log_scales: idx.iter().map(|&i| self.log_scales[i]).collect(),
            rotations: idx.iter().map(|&i| self.rotations[i]).collect(),
            colors: idx.iter().map(|&i| self.colors[i]).collect(),
            opacities: idx.iter().map(|&i| self.opacities[i]).collect(),
        }
    }

    /// Rigid rotation about an axis through the origin.
    pub fn rotated(&self, axis: Vec3, angle: f64) -> Self {
        let axis = geom::normalize(axis);
        let qr = geom::quat_from_axis_angle(axis, angle);
        let mut g = self.clone();
        for p in &mut g.positions {
            *p = geom::rotate_axis_angle(*p, axis, angle);
        }
        for q in &mut g.rotations {
            let r = geom::quat_mul(qr, *q);
            let n = geom::quat_norm(r);
            *q = r.map(|x| x / n);
        }
        g
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = Map::new();
        header.insert("kind".into(), json!("gaussian_set"));
        header.insert("count".into(), json!(self.len()));
        header.insert("field_order".into(), json!(FIELD_ORDER));
        let mut f = BlobFile::new(header);
        f.push("attributes", self.to_tensor());
        f.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = BlobFile::read(path)?;
        if f.header.get("kind") != Some(&json!("gaussian_set")) {
            return Err(Error::Header {
                path: path.to_path_buf(),
                msg: "not a gaussian_set file".into(),
            });
        }
        let mut g = Self::from_tensor(f.require("attributes")?)?;
        // f32 storage denormalizes quaternions slightly.
        for q in &mut g.rotations {
            let n = geom::quat_norm(*q);
            if n > 0.0 {
                *q = q.map(|x| x / n);
            }
        }
        Ok(g)
    }
}

/// Per-frame additive deltas over all 14 attributes, stored `T×N_G×14`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationField {
    pub deltas: Tensor,
}

impl VariationField {
    pub fn zeros(frames: usize, count: usize) -> Self {
        Self {
            deltas: Tensor::zeros(&[frames, count, ATTRS]),
        }
    }

    pub fn new(deltas: Tensor) -> Result<Self> {
        if deltas.shape().len() != 3 || deltas.shape()[2] != ATTRS {
            return Err(Error::Shape(format!(
                "variation field must be T×N×{ATTRS}, got {:?}",
                deltas.shape()
            )));
        }
        Ok(Self { deltas })
    }

    pub fn frame_count(&self) -> usize {
        self.deltas.shape()[0]
    }

    pub fn count(&self) -> usize {
        self.deltas.shape()[1]
    }

    /// Row `i` of frame `t`.
    pub fn delta(&self, t: usize, i: usize) -> &[f64] {
        let n = self.count();
        self.deltas.row(t * n + i)
    }

    pub fn d_position(&self, t: usize, i: usize) -> Vec3 {
        let r = self.delta(t, i);
        [r[0], r[1], r[2]]
    }

    pub fn frame(&self, t: usize) -> Tensor {
        let n = self.count();
        Tensor::new(
            &[n, ATTRS],
            self.deltas.data()[t * n * ATTRS..(t + 1) * n * ATTRS].to_vec(),
        )
    }

    /// Frames `range` of `self`, as a new field.
    pub fn frames(&self, range: std::ops::Range<usize>) -> Self {
        let n = self.count();
        let data = self.deltas.data()[range.start * n * ATTRS..range.end * n * ATTRS].to_vec();
        Self {
            deltas: Tensor::new(&[range.len(), n, ATTRS], data),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = Map::new();
        header.insert("kind".into(), json!("variation_field"));
        header.insert("count".into(), json!(self.count()));
        header.insert("frames".into(), json!(self.frame_count()));
        header.insert("field_order".into(), json!(FIELD_ORDER));
        let mut f = BlobFile::new(header);
        f.push("deltas", self.deltas.clone());
        f.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = BlobFile::read(path)?;
        if f.header.get("kind") != Some(&json!("variation_field")) {
            return Err(Error::Header {
                path: path.to_path_buf(),
                msg: "not a variation_field file".into(),
            });
        }
        Self::new(f.require("deltas")?.clone())
    }
}

/// `G_t = G_1 + ΔG_t` with rotations renormalized and colors/opacities clamped.
pub fn apply_variation(g: &GaussianSet, v: &VariationField, t: usize) -> Result<GaussianSet> {
    if t >= v.frame_count() {
        return Err(Error::InvalidInput(format!(
            "frame {t} out of range for {} frames",
            v.frame_count()
        )));
    }
    if v.count() != g.len() {
        return Err(Error::Shape(format!(
            "field covers {} Gaussians, set has {}",
            v.count(),
            g.len()
        )));
    }
    let mut out = g.clone();
    for i in 0..g.len() {
        let d = v.delta(t, i);
        for k in 0..3 {
            out.positions[i][k] += d[POS.start + k];
            out.log_scales[i][k] += d[SCALE.start + k];
            out.colors[i][k] = (out.colors[i][k] + d[COLOR.start + k]).clamp(0.0, 1.0);
        }
        let q: Quat = [0, 1, 2, 3].map(|k| g.rotations[i][k] + d[ROT.start + k]);
        let n = geom::quat_norm(q);
        if n >= QUAT_FALLBACK_NORM {
            out.rotations[i] = q.map(|x| x / n);
        }
        out.opacities[i] = (out.opacities[i] + d[OPACITY]).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Differentiable counterpart of [`apply_variation`] for one frame: `base` is
/// the canonical `N×14` table, `delta` the predicted `N×14` deltas.
pub fn apply_variation_var<'g>(base: &Tensor, delta: Var<'g>) -> Var<'g> {
    let graph = delta.graph();
    let n = base.rows();
    let base_v = graph.constant(base.clone());
    let summed = base_v.add(delta);
    let pos_scale = summed.slice_cols(POS.start, SCALE.end);
    let rot = normalize_quat_rows(summed.slice_cols(ROT.start, ROT.end), &base.gather_cols(ROT));
    let col = summed.slice_cols(COLOR.start, COLOR.end).clamp(0.0, 1.0);
    let op = summed.slice_cols(OPACITY, OPACITY + 1).clamp(0.0, 1.0);
    let out = Var::concat_cols(&[pos_scale, rot, col, op]);
    debug_assert_eq!(out.shape(), vec![n, ATTRS]);
    out
}

impl Tensor {
    /// Columns `range` of a 2-D view.
    pub fn gather_cols(&self, range: std::ops::Range<usize>) -> Tensor {
        let mut data = Vec::with_capacity(self.rows() * range.len());
        for i in 0..self.rows() {
            data.extend_from_slice(&self.row(i)[range.clone()]);
        }
        Tensor::new(&[self.rows(), range.len()], data)
    }
}

/// Row-wise quaternion normalization; rows shorter than
/// [`QUAT_FALLBACK_NORM`] are replaced by the matching `fallback` row.
pub fn normalize_quat_rows<'g>(q: Var<'g>, fallback: &Tensor) -> Var<'g> {
    let x = q.value();
    let n = x.rows();
    let mut out = Vec::with_capacity(n * 4);
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let r = x.row(i);
        let len = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len >= QUAT_FALLBACK_NORM {
            out.extend(r.iter().map(|v| v / len));
            norms.push(len);
        } else {
            out.extend_from_slice(fallback.row(i));
            norms.push(0.0);
        }
    }
    let y = Tensor::new(&[n, 4], out);
    let yc = y.clone();
    q.graph().op(&[q], y, move |g, _| {
        let mut gx = vec![0.0; n * 4];
        for i in 0..n {
            if norms[i] == 0.0 {
                continue;
            }
            let (gr, yr) = (g.row(i), yc.row(i));
            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
            for k in 0..4 {
                gx[i * 4 + k] = (gr[k] - yr[k] * dot) / norms[i];
            }
        }
        vec![Some(Tensor::new(&[n, 4], gx))]
    })
}

/// Canonical Gaussians fitted directly to the frame-0 surface samples:
/// farthest-point-sampled centers, isotropic scales from neighbor spacing,
/// identity rotations, sample colors and a fixed opacity.
pub fn fit_canonical_gaussians(
    tracks: &PointTracks,
    colors: &[Vec3],
    n_g: usize,
    seed: u64,
) -> Result<GaussianSet> {
    let p1 = tracks.canonical();
    if n_g == 0 || n_g > p1.len() {
        return Err(Error::InvalidInput(format!(
            "cannot fit {n_g} Gaussians to {} samples",
            p1.len()
        )));
    }
    if colors.len() != p1.len() {
        return Err(Error::Shape(format!("{} colors for {} samples", colors.len(), p1.len())));
    }
    let idx = farthest_point_sampling(p1, n_g, StartRule::Seeded(seed))?;
    let positions: Vec<Vec3> = idx.iter().map(|&i| p1[i]).collect();
    let log_scales = if n_g == 1 {
        vec![[(0.05f64).ln(); 3]]
    } else {
        let k = (n_g - 1).min(4);
        // Each center is its own nearest neighbor.
        let nn = knn(&positions, &positions, k + 1)?;
        (0..n_g)
            .map(|i| {
                let d = &nn.row_distances(i)[1..];
                let s = 0.5 * d.iter().sum::<f64>() / k as f64;
                [s.max(1e-6).ln(); 3]
            })
            .collect()
    };
    Ok(GaussianSet {
        positions,
        log_scales,
        rotations: vec![[1.0, 0.0, 0.0, 0.0]; n_g],
        colors: idx.iter().map(|&i| colors[i].map(|c| c.clamp(0.0, 1.0))).collect(),
        opacities: vec![DEFAULT_OPACITY; n_g],
    })
}
