use std::fs;

use super::{dataset_video, load_dit, load_index, load_vae, read_frames, write_frames, PipelineConfig};
use crate::anim::load_animation;
use crate::diffusion::{build_conditions, DiffusionTrainer, VideoFeatures};
use crate::error::{Error, Result};
use crate::gsplat::{apply_variation, render, GaussianSet, Image, VariationField};
use crate::tensor::Tensor;
use crate::vae::{prepare_animation, select_anchors, VaeModel};

#[derive(Debug, Clone)]
pub struct Generated {
    pub canonical: GaussianSet,
    pub field: VariationField,
    pub segments: usize,
}

/// Segments needed for `total` frames when consecutive segments share one frame.
pub fn segment_count(total: usize, segment: usize) -> usize {
    if total <= segment {
        1
    } else {
        (total - 1).div_ceil(segment - 1)
    }
}

/// One diffusion sample for `video`, decoded on `g`.
pub fn generate_segment(
    vae: &VaeModel,
    dit: &DiffusionTrainer,
    video: &[Image],
    g: &GaussianSet,
    features: &dyn VideoFeatures,
    seed: u64,
) -> Result<VariationField> {
    let anchors = select_anchors(g, vae.cfg.latent_size)?;
    let cond = build_conditions(video, g, &anchors, features)?;
    let z = dit.sample(&cond, seed)?;
    vae.decode(&z, g, &cond.anchor_positions)
}

/// Chains segments of at most `segment` frames: the last frame of each
/// segment becomes the canonical set of the next, and the shared boundary
/// frame is kept once. The returned field is relative to `g`.
pub fn autoregressive_generate(
    vae: &VaeModel,
    dit: &DiffusionTrainer,
    video: &[Image],
    g: &GaussianSet,
    segment: usize,
    features: &dyn VideoFeatures,
    seed: u64,
) -> Result<Generated> {
    let total = video.len();
    if total == 0 {
        return Err(Error::InvalidInput("no video frames".into()));
    }
    if total <= segment {
        return Ok(Generated {
            canonical: g.clone(),
            field: generate_segment(vae, dit, video, g, features, seed)?,
            segments: 1,
        });
    }
    if segment < 2 {
        return Err(Error::InvalidInput("segments need at least two frames".into()));
    }
    let origin = g.to_tensor();
    let mut deltas = Vec::with_capacity(total * origin.len());
    let mut base = g.clone();
    let (mut start, mut k) = (0, 0);
    loop {
        let end = (start + segment).min(total);
        let field = generate_segment(vae, dit, &video[start..end], &base, features, seed.wrapping_add(k as u64))?;
        for j in usize::from(k > 0)..end - start {
            let attrs = apply_variation(&base, &field, j)?.to_tensor();
            deltas.extend(attrs.data().iter().zip(origin.data()).map(|(a, o)| a - o));
        }
        k += 1;
        if end == total {
            break;
        }
        base = apply_variation(&base, &field, end - start - 1)?;
        start = end - 1;
    }
    Ok(Generated {
        canonical: g.clone(),
        field: VariationField::new(Tensor::new(&[total, g.len(), crate::gsplat::ATTRS], deltas))?,
        segments: k,
    })
}

/// Generates for the configured animation and writes the canonical set, the
/// variation field and renders from every rig view to the output directory.
pub fn cmd_generate(cfg: &PipelineConfig, seed: u64) -> Result<Generated> {
    let vae = load_vae(cfg)?;
    let dit = load_dit(cfg)?;
    let index = load_index(cfg)?;
    let entry = index
        .animations
        .get(cfg.generate.animation)
        .ok_or_else(|| Error::Config("generate.animation is out of range".into()))?;
    let video = match &cfg.generate.video_dir {
        Some(dir) => read_frames(dir)?
            .into_iter()
            .map(|mut views| {
                if cfg.generate.video_view < views.len() {
                    Ok(views.swap_remove(cfg.generate.video_view))
                } else {
                    Err(Error::InvalidInput("video directory lacks the configured view".into()))
                }
            })
            .collect::<Result<Vec<_>>>()?,
        None => dataset_video(cfg, entry)?,
    };
    let g = prepare_animation(&load_animation(&cfg.data_dir.join(&entry.name))?, &cfg.vae, &[], entry.seed)?.gaussians;
    let out = autoregressive_generate(&vae, &dit, &video, &g, cfg.dit.frames, &cfg.features(), seed)?;

    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    out.canonical.save(&cfg.output_dir.join("canonical_gaussians.bin"))?;
    out.field.save(&cfg.output_dir.join("variation_field.bin"))?;
    let cams = cfg.cameras()?;
    let frames = (0..out.field.frame_count())
        .map(|t| {
            let gt = apply_variation(&out.canonical, &out.field, t)?;
            Ok(cams.iter().map(|c| render(&gt, c, cfg.vae.background)).collect())
        })
        .collect::<Result<Vec<Vec<Image>>>>()?;
    write_frames(&cfg.output_dir.join("renders"), &frames)?;
    Ok(out)
}
