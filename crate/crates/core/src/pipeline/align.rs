use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{dataset_video, load_index, PipelineConfig};
use crate::anim::load_animation;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::gsplat::{metrics, render, Camera, GaussianSet, Image};
use crate::vae::prepare_animation;

pub const DEFAULT_ANGLES: usize = 36;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub n_angles: usize,
    /// Gaussian set to align; defaults to the generation animation's canonical set.
    pub gaussians: Option<PathBuf>,
    /// Reference image; defaults to the first video frame.
    pub reference: Option<PathBuf>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            n_angles: DEFAULT_ANGLES,
            gaussians: None,
            reference: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Alignment {
    /// Radians about the vertical axis.
    pub angle: f64,
    /// `L1 + (1 − SSIM)` per grid angle.
    pub scores: Vec<f64>,
    pub gaussians: GaussianSet,
}

/// Grid search over `n_angles` yaw rotations of `g`; the lowest score wins and
/// ties go to the smallest angle.
pub fn azimuth_align(
    g: &GaussianSet,
    reference: &Image,
    cam: &Camera,
    n_angles: usize,
    background: Vec3,
) -> Result<Alignment> {
    if n_angles < 2 {
        return Err(Error::InvalidInput("alignment needs at least two angles".into()));
    }
    let up = [0.0, 1.0, 0.0];
    let mut scores = Vec::with_capacity(n_angles);
    let mut best = 0;
    for k in 0..n_angles {
        let angle = std::f64::consts::TAU * k as f64 / n_angles as f64;
        let img = render(&g.rotated(up, angle), cam, background);
        let score = metrics::l1(&img, reference)? + 1.0 - metrics::ssim(&img, reference)?;
        if score < scores.get(best).copied().unwrap_or(f64::INFINITY) {
            best = k;
        }
        scores.push(score);
    }
    let angle = std::f64::consts::TAU * best as f64 / n_angles as f64;
    Ok(Alignment {
        angle,
        scores,
        gaussians: g.rotated(up, angle),
    })
}

/// Aligns the configured Gaussians to the reference view and writes
/// `aligned_gaussians.bin` and `alignment.json` to the output directory.
pub fn cmd_align(cfg: &PipelineConfig) -> Result<Alignment> {
    let cams = cfg.cameras()?;
    let cam = &cams[cfg.generate.video_view];
    let needs_dataset = cfg.align.gaussians.is_none() || cfg.align.reference.is_none();
    let entry = if needs_dataset {
        let index = load_index(cfg)?;
        Some(
            index
                .animations
                .get(cfg.generate.animation)
                .cloned()
                .ok_or_else(|| Error::Config("generate.animation is out of range".into()))?,
        )
    } else {
        None
    };
    let g = match (&cfg.align.gaussians, &entry) {
        (Some(p), _) => GaussianSet::load(p)?,
        (None, Some(e)) => {
            prepare_animation(&load_animation(&cfg.data_dir.join(&e.name))?, &cfg.vae, &[], e.seed)?.gaussians
        }
        (None, None) => unreachable!("dataset entry loaded when gaussians are unset"),
    };
    let reference = match (&cfg.align.reference, &entry) {
        (Some(p), _) => Image::read_png(p)?,
        (None, Some(e)) => dataset_video(cfg, e)?.swap_remove(0),
        (None, None) => unreachable!("dataset entry loaded when reference is unset"),
    };
    let a = azimuth_align(&g, &reference, cam, cfg.align.n_angles, cfg.vae.background)?;
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    a.gaussians.save(&cfg.output_dir.join("aligned_gaussians.bin"))?;
    let path = cfg.output_dir.join("alignment.json");
    let report = json!({"angle_rad": a.angle, "angle_deg": a.angle.to_degrees(), "scores": a.scores});
    fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(a)
}
