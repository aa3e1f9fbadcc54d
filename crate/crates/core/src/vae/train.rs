use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::data::{encoder_input, max_position_error};
use super::{
    image_loss_var, kl_loss_var, mesh_guided_loss, mesh_guided_loss_var, Perceptual,
    PreparedAnimation, VaeConfig, VaeModel,
};
use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::gsplat::render::rasterize;
use crate::gsplat::{apply_variation, apply_variation_var, metrics, render_var, Camera, Image, VariationField};
use crate::nn::optim::warmup_cosine;
use crate::nn::{AdamW, Checkpoint};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub step: usize,
    pub img: f64,
    pub mg: f64,
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Train until this many steps have been taken in total.
    pub steps: usize,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    /// Zero writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// Stored in checkpoints; resuming requires the same value.
    pub config_json: Value,
}

#[derive(Debug, Clone)]
pub struct VaeTrainer {
    pub model: VaeModel,
    pub opt: AdamW,
    pub step: usize,
    pub seed: u64,
}

fn choose_distinct(rng: &mut SeededRng, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

impl VaeTrainer {
    pub fn new(cfg: VaeConfig, seed: u64) -> Result<Self> {
        let opt = AdamW::new(0.9, 0.999, 1e-8, cfg.weight_decay);
        Ok(Self {
            model: VaeModel::new(cfg, seed)?,
            opt,
            step: 0,
            seed,
        })
    }

    pub fn from_checkpoint(cfg: VaeConfig, ck: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(cfg, ck.seed)?;
        ck.restore_into(&mut t.model.params)?;
        if let Some(opt) = &ck.optimizer {
            t.opt = opt.clone();
        }
        t.step = ck.iteration as usize;
        Ok(t)
    }

    pub fn checkpoint(&self, config: Value) -> Checkpoint {
        Checkpoint {
            config,
            iteration: self.step as u64,
            seed: self.seed,
            params: self.model.params.clone(),
            optimizer: Some(self.opt.clone()),
            extra: Map::new(),
        }
    }

    /// One optimizer step; all randomness comes from the `(seed, step)` stream.
    pub fn train_step(
        &mut self,
        data: &[PreparedAnimation],
        rig: &[Camera],
        perceptual: Option<&dyn Perceptual>,
    ) -> Result<StepLosses> {
        let (losses, grads) = self.loss_and_grads(data, rig, perceptual)?;
        let cfg = &self.model.cfg;
        let lr = warmup_cosine(self.step, cfg.steps, cfg.warmup, cfg.lr, cfg.min_lr_ratio);
        self.opt.update(&mut self.model.params, &grads, lr)?;
        self.step += 1;
        Ok(losses)
    }

    /// Losses and parameter gradients of the current step without updating.
    pub fn loss_and_grads(
        &self,
        data: &[PreparedAnimation],
        rig: &[Camera],
        perceptual: Option<&dyn Perceptual>,
    ) -> Result<(StepLosses, BTreeMap<String, Tensor>)> {
        if data.is_empty() {
            return Err(Error::InvalidInput("empty training set".into()));
        }
        let cfg = self.model.cfg.clone();
        let mut rng = SeededRng::stream(self.seed, self.step as u64);
        let anim = &data[rng.below(data.len())];
        let frames = anim.frame_count();
        let w = cfg.frames_per_step.min(frames);
        let start = rng.below(frames - w + 1);
        let views = choose_distinct(&mut rng, rig.len(), cfg.views_per_step.min(rig.len()));
        let (l, c, ng) = (cfg.latent_size, cfg.latent_channels, anim.gaussians.len());
        let eps = Tensor::new(&[w * l, c], rng.normals(w * l * c));

        let graph = Graph::new();
        let p = self.model.params.bind(&graph);
        let input = encoder_input(
            &anim.tracks,
            &anim.dp_interp,
            &anim.anchors,
            &anim.anchor_positions,
            start..start + w,
        );
        let (mean, log_var) = self.model.encode_var(&p, &input);
        let z = mean.add(log_var.scale(0.5).exp().mul(graph.constant(eps)));
        let deltas = self.model.decode_var(
            &p,
            z,
            w,
            &anim.anchor_positions,
            &anim.canonical,
            &anim.gaussians.positions,
        );
        let mg = mesh_guided_loss_var(deltas, &anim.interp_targets(start..start + w), ng);
        let mut img = None;
        for j in 0..w {
            let rows: Vec<usize> = (j * ng..(j + 1) * ng).collect();
            let attrs = apply_variation_var(&anim.canonical, deltas.gather_rows(&rows));
            for &v in &views {
                let r = render_var(attrs, &rig[v], cfg.background);
                let li = image_loss_var(r, &anim.gt[start + j][v], &cfg, perceptual)?;
                img = Some(match img {
                    None => li,
                    Some(acc) => li.add(acc),
                });
            }
        }
        let img = img.expect("at least one frame and view").scale(1.0 / (w * views.len()) as f64);
        let kl = kl_loss_var(mean, log_var);
        let total = img.add(mg.scale(cfg.lambda_mg)).add(kl.scale(cfg.lambda_kl));
        let losses = StepLosses {
            step: self.step,
            img: img.value().item(),
            mg: mg.value().item(),
            kl: kl.value().item(),
            total: total.value().item(),
        };
        if !losses.total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite VAE loss at step {}: img={} mg={} kl={}",
                losses.step, losses.img, losses.mg, losses.kl
            )));
        }
        let grads = p.grads(&graph.backward(total));
        Ok((losses, grads))
    }
}

pub fn train_vae(
    trainer: &mut VaeTrainer,
    data: &[PreparedAnimation],
    rig: &[Camera],
    opts: &TrainOptions,
    perceptual: Option<&dyn Perceptual>,
) -> Result<Vec<StepLosses>> {
    let mut log = match &opts.metrics_path {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?,
            )
        }
        None => None,
    };
    let mut trace = Vec::new();
    while trainer.step < opts.steps {
        let losses = trainer.train_step(data, rig, perceptual)?;
        if let (Some(f), Some(path)) = (log.as_mut(), &opts.metrics_path) {
            let line = json!({"step": losses.step, "losses": {"img": losses.img, "mg": losses.mg, "kl": losses.kl, "total": losses.total}});
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        trace.push(losses);
        if let Some(path) = &opts.checkpoint_path {
            if opts.checkpoint_every > 0 && trainer.step % opts.checkpoint_every == 0 {
                trainer.checkpoint(opts.config_json.clone()).save(path)?;
            }
        }
    }
    if let Some(path) = &opts.checkpoint_path {
        trainer.checkpoint(opts.config_json.clone()).save(path)?;
    }
    Ok(trace)
}

/// Decoded field for every frame using the posterior mean.
pub fn reconstruct(model: &VaeModel, anim: &PreparedAnimation) -> Result<VariationField> {
    let lat = model.encode(&anim.tracks, &anim.gaussians, &anim.dp_interp)?;
    model.decode(&lat.mean, &anim.gaussians, &lat.anchor_positions)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionReport {
    pub mesh_guided: f64,
    pub mean_psnr: f64,
    pub max_position_error: f64,
}

/// Posterior-mean reconstruction quality against the prepared targets.
pub fn evaluate_reconstruction(
    model: &VaeModel,
    anim: &PreparedAnimation,
    rig: &[Camera],
) -> Result<ReconstructionReport> {
    let field = reconstruct(model, anim)?;
    let mut psnr_sum = 0.0;
    let mut count = 0usize;
    for t in 0..field.frame_count() {
        let g = apply_variation(&anim.gaussians, &field, t)?;
        let attrs = g.to_tensor();
        for (v, cam) in rig.iter().enumerate() {
            let img = Image::from_tensor(&rasterize(&attrs, cam, model.cfg.background).image)?;
            let gt = Image::from_tensor(&anim.gt[t][v])?;
            psnr_sum += metrics::psnr(&img, &gt)?;
            count += 1;
        }
    }
    Ok(ReconstructionReport {
        mesh_guided: mesh_guided_loss(&field, &anim.dp_interp)?,
        mean_psnr: psnr_sum / count.max(1) as f64,
        max_position_error: max_position_error(&field, &anim.dp_interp),
    })
}
