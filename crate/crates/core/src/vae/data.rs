//! Per-animation training data: surface tracks, canonical Gaussians,
//! interpolated Gaussian displacements, anchors and ground-truth renders.

use std::ops::Range;

use super::{select_anchors, VaeConfig};
use crate::anim::{evaluate_tracks, sample_colors, sample_surface, MeshAnimation, PointTracks};
use crate::error::Result;
use crate::geom::{self, Vec3};
use crate::gsplat::render::rasterize;
use crate::gsplat::{fit_canonical_gaussians, Camera, GaussianSet, POS};
use crate::interp::MeshGuidedInterp;
use crate::tensor::Tensor;

use super::EncoderInput;

#[derive(Debug, Clone)]
pub struct PreparedAnimation {
    pub tracks: PointTracks,
    pub colors: Vec<Vec3>,
    pub gaussians: GaussianSet,
    /// `N_G×14` table of `gaussians`.
    pub canonical: Tensor,
    /// `dp_interp[t][i]`, pseudo ground-truth Gaussian displacements.
    pub dp_interp: Vec<Vec<Vec3>>,
    pub anchors: Vec<usize>,
    pub anchor_positions: Vec<Vec3>,
    /// `gt[t][view]`, `H×W×3` renders of the canonical set moved by `dp_interp[t]`.
    pub gt: Vec<Vec<Tensor>>,
}

impl PreparedAnimation {
    pub fn frame_count(&self) -> usize {
        self.tracks.frame_count()
    }

    /// `[frames·N_G, 3]` displacement targets for a window of frames.
    pub fn interp_targets(&self, frames: Range<usize>) -> Tensor {
        let n = self.gaussians.len();
        let mut data = Vec::with_capacity(frames.len() * n * 3);
        for t in frames.clone() {
            for d in &self.dp_interp[t] {
                data.extend_from_slice(d);
            }
        }
        Tensor::new(&[frames.len() * n, 3], data)
    }
}

/// Canonical Gaussians translated by the interpolated displacements of frame `t`.
pub fn displaced_canonical(canonical: &Tensor, dp: &[Vec3]) -> Tensor {
    let mut t = canonical.clone();
    for (i, d) in dp.iter().enumerate() {
        let row = &mut t.row_mut(i)[POS];
        for k in 0..3 {
            row[k] += d[k];
        }
    }
    t
}

pub fn prepare_animation(
    anim: &MeshAnimation,
    cfg: &VaeConfig,
    rig: &[Camera],
    seed: u64,
) -> Result<PreparedAnimation> {
    let spec = sample_surface(anim, cfg.samples, seed)?;
    let tracks = evaluate_tracks(anim, &spec)?;
    let colors = sample_colors(anim, &spec);
    let gaussians = fit_canonical_gaussians(&tracks, &colors, cfg.gaussians, seed)?;
    let interp = MeshGuidedInterp::new(&gaussians.positions, tracks.canonical(), cfg.k, cfg.beta)?;
    let dp_interp: Vec<Vec<Vec3>> = tracks.displacements.iter().map(|dp| interp.apply(dp)).collect();
    let anchors = select_anchors(&gaussians, cfg.latent_size)?;
    let anchor_positions = anchors.iter().map(|&i| gaussians.positions[i]).collect();
    let canonical = gaussians.to_tensor();
    let gt = dp_interp
        .iter()
        .map(|dp| {
            let moved = displaced_canonical(&canonical, dp);
            rig.iter()
                .map(|cam| rasterize(&moved, cam, cfg.background).image)
                .collect()
        })
        .collect();
    Ok(PreparedAnimation {
        tracks,
        colors,
        gaussians,
        canonical,
        dp_interp,
        anchors,
        anchor_positions,
        gt,
    })
}

/// Encoder inputs for frames `frames` of one animation.
pub fn encoder_input<'a>(
    tracks: &'a PointTracks,
    dp_interp: &[Vec<Vec3>],
    anchors: &[usize],
    anchor_positions: &'a [Vec3],
    frames: Range<usize>,
) -> EncoderInput<'a> {
    let n = tracks.sample_count();
    let l = anchors.len();
    let mut q = Vec::with_capacity(frames.len() * l * 3);
    let mut k = Vec::with_capacity(frames.len() * n * 3);
    for t in frames.clone() {
        for d in super::build_queries(&dp_interp[t], anchors) {
            q.extend_from_slice(&d);
        }
        for d in &tracks.displacements[t] {
            k.extend_from_slice(d);
        }
    }
    EncoderInput {
        frames: frames.len(),
        query_disp: Tensor::new(&[frames.len() * l, 3], q),
        anchor_positions,
        sample_disp: Tensor::new(&[frames.len() * n, 3], k),
        sample_positions: tracks.canonical(),
    }
}

/// Largest per-Gaussian position error over all frames.
pub fn max_position_error(field: &crate::gsplat::VariationField, dp_interp: &[Vec<Vec3>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (t, target) in dp_interp.iter().enumerate() {
        for (i, d) in target.iter().enumerate() {
            worst = worst.max(geom::norm(geom::sub(field.d_position(t, i), *d)));
        }
    }
    worst
}
