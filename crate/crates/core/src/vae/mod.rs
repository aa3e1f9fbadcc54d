//! Variation-field VAE: a per-frame cross-attention encoder from surface
//! displacements to `L×C` latents anchored on canonical Gaussians, and a
//! decoder from latents to per-Gaussian attribute deltas.

pub mod data;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::gsplat::{metrics, GaussianSet, Image, VariationField, ATTRS};
use crate::interp::{farthest_point_sampling, StartRule, DEFAULT_BETA, DEFAULT_K};
use crate::nn::{
    AttentionConfig, FeedForward, FourierEmbedding, Init, LayerNorm, Linear, MultiheadAttention,
    ParamStore, Params, WeightInit, DEFAULT_NUM_FREQS,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use data::{prepare_animation, PreparedAnimation};
pub use train::{
    evaluate_reconstruction, reconstruct, train_vae, ReconstructionReport, StepLosses, TrainOptions,
    VaeTrainer,
};

pub const LOG_VAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    /// Surface samples per animation (N).
    pub samples: usize,
    /// Canonical Gaussians per animation (N_G).
    pub gaussians: usize,
    /// Latent tokens per frame (L).
    pub latent_size: usize,
    /// Latent channels (C).
    pub latent_channels: usize,
    pub k: usize,
    pub beta: f64,
    pub width: usize,
    pub heads: usize,
    pub decoder_depth: usize,
    pub num_freqs: usize,
    /// Displacements are multiplied by this before the encoder embeds them.
    pub disp_scale: f64,
    pub lambda_lpips: f64,
    pub lambda_ssim: f64,
    pub lambda_mg: f64,
    pub lambda_kl: f64,
    pub views_per_step: usize,
    pub frames_per_step: usize,
    pub steps: usize,
    pub lr: f64,
    pub min_lr_ratio: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    /// Initial bias of the log-variance head.
    pub log_var_init: f64,
    pub background: Vec3,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            samples: 2048,
            gaussians: 512,
            latent_size: 64,
            latent_channels: 16,
            k: DEFAULT_K,
            beta: DEFAULT_BETA,
            width: 64,
            heads: 4,
            decoder_depth: 2,
            num_freqs: DEFAULT_NUM_FREQS,
            disp_scale: 10.0,
            lambda_lpips: 0.2,
            lambda_ssim: 0.2,
            lambda_mg: 1.0,
            lambda_kl: 1e-6,
            views_per_step: 1,
            frames_per_step: 4,
            steps: 3000,
            lr: 1e-3,
            min_lr_ratio: 0.1,
            warmup: 100,
            weight_decay: 0.0,
            log_var_init: -6.0,
            background: [0.0; 3],
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("samples", self.samples),
            ("gaussians", self.gaussians),
            ("latent_size", self.latent_size),
            ("latent_channels", self.latent_channels),
            ("k", self.k),
            ("width", self.width),
            ("heads", self.heads),
            ("views_per_step", self.views_per_step),
            ("frames_per_step", self.frames_per_step),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("vae.{name} must be positive")));
            }
        }
        if self.latent_size > self.gaussians {
            return Err(Error::Config("vae.latent_size must not exceed vae.gaussians".into()));
        }
        if self.gaussians > self.samples {
            return Err(Error::Config("vae.gaussians must not exceed vae.samples".into()));
        }
        if self.k > self.samples {
            return Err(Error::Config("vae.k must not exceed vae.samples".into()));
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config("vae.width must be divisible by vae.heads".into()));
        }
        if !(self.disp_scale > 0.0) {
            return Err(Error::Config("vae.disp_scale must be positive".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config("vae.beta must be positive".into()));
        }
        Ok(())
    }

    fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            width: self.width,
            heads: self.heads,
            qk_norm: false,
        }
    }
}

/// Posterior over per-frame latents plus the anchor tokens they live on.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    /// `T×L×C`.
    pub mean: Tensor,
    pub log_var: Tensor,
    pub sample: Option<Tensor>,
    pub anchor_indices: Vec<usize>,
    pub anchor_positions: Vec<Vec3>,
}

impl LatentSequence {
    pub fn frame_count(&self) -> usize {
        self.mean.shape()[0]
    }
}

/// FPS over canonical Gaussian centers, first index as the start.
pub fn select_anchors(g: &GaussianSet, l: usize) -> Result<Vec<usize>> {
    farthest_point_sampling(&g.positions, l, StartRule::First)
}

/// Interpolated displacements at the anchors, the encoder's query input.
pub fn build_queries(dp_interp: &[Vec3], anchors: &[usize]) -> Vec<Vec3> {
    anchors.iter().map(|&i| dp_interp[i]).collect()
}

pub fn reparameterize(lat: &LatentSequence, seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    let eps = Tensor::new(lat.mean.shape(), rng.normals(lat.mean.len()));
    sample_with(&lat.mean, &lat.log_var, &eps)
}

fn sample_with(mean: &Tensor, log_var: &Tensor, eps: &Tensor) -> Tensor {
    let std = log_var.map(|v| (0.5 * v).exp());
    let noise = std.zip_map(eps, |s, e| s * e);
    mean.zip_map(&noise, |m, n| m + n)
}

/// `Σ_t mean_i ‖Δp_t,i − Δp_interp_t,i‖²`.
pub fn mesh_guided_loss(v: &VariationField, dp_interp: &[Vec<Vec3>]) -> Result<f64> {
    if dp_interp.len() != v.frame_count() {
        return Err(Error::Shape(format!(
            "{} target frames for a {}-frame field",
            dp_interp.len(),
            v.frame_count()
        )));
    }
    let n = v.count();
    let mut total = 0.0;
    for (t, target) in dp_interp.iter().enumerate() {
        if target.len() != n {
            return Err(Error::Shape("target count differs from field count".into()));
        }
        let s: f64 = (0..n)
            .map(|i| {
                let d = v.d_position(t, i);
                (0..3).map(|k| (d[k] - target[i][k]).powi(2)).sum::<f64>()
            })
            .sum();
        total += s / n as f64;
    }
    Ok(total)
}

/// Differentiable form over stacked frames: `deltas` is `[T·N_G, 14]`,
/// `target` is `[T·N_G, 3]`.
pub fn mesh_guided_loss_var<'g>(deltas: Var<'g>, target: &Tensor, count: usize) -> Var<'g> {
    let g = deltas.graph();
    deltas
        .slice_cols(0, 3)
        .sub(g.constant(target.clone()))
        .square()
        .sum()
        .scale(1.0 / count as f64)
}

/// Mean of `½(μ² + exp(log σ²) − 1 − log σ²)`.
pub fn kl_loss(lat: &LatentSequence) -> f64 {
    let n = lat.mean.len().max(1) as f64;
    lat.mean
        .data()
        .iter()
        .zip(lat.log_var.data())
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum::<f64>()
        / n
}

pub fn kl_loss_var<'g>(mean: Var<'g>, log_var: Var<'g>) -> Var<'g> {
    mean.square()
        .add(log_var.exp())
        .sub(log_var)
        .add_scalar(-1.0)
        .mean()
        .scale(0.5)
}

/// Perceptual distance backend for the optional LPIPS term.
pub trait Perceptual {
    fn distance<'g>(&self, render: Var<'g>, target: &Tensor) -> Var<'g>;
}

/// `mean|x − y| + λ_lpips·LPIPS + λ_ssim·(1 − SSIM)`; the perceptual term
/// only counts when a backend is given.
pub fn image_loss_var<'g>(
    render: Var<'g>,
    target: &Tensor,
    cfg: &VaeConfig,
    perceptual: Option<&dyn Perceptual>,
) -> Result<Var<'g>> {
    let g = render.graph();
    let l1 = render.sub(g.constant(target.clone())).abs().mean();
    let ssim = metrics::ssim_var(render, target)?;
    let mut loss = l1.add(ssim.scale(-cfg.lambda_ssim).add_scalar(cfg.lambda_ssim));
    if let Some(p) = perceptual {
        loss = loss.add(p.distance(render, target).scale(cfg.lambda_lpips));
    }
    Ok(loss)
}

pub fn image_loss(render: &Image, target: &Image, cfg: &VaeConfig) -> Result<f64> {
    Ok(metrics::l1(render, target)? + cfg.lambda_ssim * (1.0 - metrics::ssim(render, target)?))
}

#[derive(Debug, Clone)]
struct Encoder {
    disp: Linear,
    pe: FourierEmbedding,
    ln_q: LayerNorm,
    ln_kv: LayerNorm,
    attn: MultiheadAttention,
    ln_ff: LayerNorm,
    ffn: FeedForward,
    ln_out: LayerNorm,
    mean: Linear,
    log_var: Linear,
}

#[derive(Debug, Clone)]
struct SelfBlock {
    ln1: LayerNorm,
    attn: MultiheadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct Decoder {
    z_in: Linear,
    pe: FourierEmbedding,
    blocks: Vec<SelfBlock>,
    gs_in: Linear,
    ln_q: LayerNorm,
    ln_kv: LayerNorm,
    cross: MultiheadAttention,
    ln_ff: LayerNorm,
    ffn: FeedForward,
    ln_out: LayerNorm,
    head: Linear,
}

/// Per-frame encoder inputs for a window of `frames` frames.
pub struct EncoderInput<'a> {
    pub frames: usize,
    /// `[frames·L, 3]`.
    pub query_disp: Tensor,
    pub anchor_positions: &'a [Vec3],
    /// `[frames·N, 3]`.
    pub sample_disp: Tensor,
    pub sample_positions: &'a [Vec3],
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub cfg: VaeConfig,
    pub params: ParamStore,
    enc: Encoder,
    dec: Decoder,
}

fn tile<'g>(x: Var<'g>, times: usize) -> Var<'g> {
    let s = x.shape();
    x.repeat(times).reshape(&[times * s[0], s[1]])
}

impl VaeModel {
    pub fn new(cfg: VaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(&mut params, seed);
        let (d, c, nf) = (cfg.width, cfg.latent_channels, cfg.num_freqs);
        let at = cfg.attention();
        let enc = Encoder {
            disp: Linear::new(&mut init, "enc.disp", 3, d, WeightInit::FanIn),
            pe: FourierEmbedding::new(&mut init, "enc.pe", nf, d),
            ln_q: LayerNorm::new(&mut init, "enc.ln_q", d),
            ln_kv: LayerNorm::new(&mut init, "enc.ln_kv", d),
            attn: MultiheadAttention::new(&mut init, "enc.attn", at, d),
            ln_ff: LayerNorm::new(&mut init, "enc.ln_ff", d),
            ffn: FeedForward::new(&mut init, "enc.ffn", d),
            ln_out: LayerNorm::new(&mut init, "enc.ln_out", d),
            mean: Linear::new(&mut init, "enc.mean", d, c, WeightInit::FanIn),
            log_var: Linear::new(&mut init, "enc.log_var", d, c, WeightInit::Zero),
        };
        let blocks = (0..cfg.decoder_depth)
            .map(|i| SelfBlock {
                ln1: LayerNorm::new(&mut init, &format!("dec.block{i}.ln1"), d),
                attn: MultiheadAttention::new(&mut init, &format!("dec.block{i}.attn"), at, d),
                ln2: LayerNorm::new(&mut init, &format!("dec.block{i}.ln2"), d),
                ffn: FeedForward::new(&mut init, &format!("dec.block{i}.ffn"), d),
            })
            .collect();
        let dec = Decoder {
            z_in: Linear::new(&mut init, "dec.z_in", c, d, WeightInit::FanIn),
            pe: FourierEmbedding::new(&mut init, "dec.pe", nf, d),
            blocks,
            gs_in: Linear::new(&mut init, "dec.gs_in", ATTRS, d, WeightInit::Normal),
            ln_q: LayerNorm::new(&mut init, "dec.ln_q", d),
            ln_kv: LayerNorm::new(&mut init, "dec.ln_kv", d),
            cross: MultiheadAttention::new(&mut init, "dec.cross", at, d),
            ln_ff: LayerNorm::new(&mut init, "dec.ln_ff", d),
            ffn: FeedForward::new(&mut init, "dec.ffn", d),
            ln_out: LayerNorm::new(&mut init, "dec.ln_out", d),
            head: Linear::new(&mut init, "dec.head", d, ATTRS, WeightInit::Zero),
        };
        let lv_bias = enc.log_var.bias_name().to_string();
        params
            .get_mut(&lv_bias)
            .expect("log-variance bias registered")
            .data_mut()
            .fill(cfg.log_var_init);
        Ok(Self {
            cfg,
            params,
            enc,
            dec,
        })
    }

    /// Posterior mean and clamped log-variance, each `[frames·L, C]`.
    pub fn encode_var<'g>(&self, p: &Params<'g>, input: &EncoderInput) -> (Var<'g>, Var<'g>) {
        let e = &self.enc;
        let g = p.get(e.mean.bias_name()).graph();
        let t = input.frames;
        let q = e
            .disp
            .forward(p, g.constant(input.query_disp.map(|v| v * self.cfg.disp_scale)))
            .add(tile(e.pe.forward(p, input.anchor_positions), t));
        let kv = e
            .disp
            .forward(p, g.constant(input.sample_disp.map(|v| v * self.cfg.disp_scale)))
            .add(tile(e.pe.forward(p, input.sample_positions), t));
        let h = q.add(e.attn.forward(p, e.ln_q.forward(p, q), e.ln_kv.forward(p, kv), t));
        let h = h.add(e.ffn.forward(p, e.ln_ff.forward(p, h)));
        let hn = e.ln_out.forward(p, h);
        let mean = e.mean.forward(p, hn);
        let log_var = e.log_var.forward(p, hn).clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP);
        (mean, log_var)
    }

    /// Deltas `[frames·N_G, 14]` from latents `[frames·L, C]`.
    pub fn decode_var<'g>(
        &self,
        p: &Params<'g>,
        z: Var<'g>,
        frames: usize,
        anchor_positions: &[Vec3],
        canonical: &Tensor,
        positions: &[Vec3],
    ) -> Var<'g> {
        let d = &self.dec;
        let g = z.graph();
        let mut x = d.z_in.forward(p, z).add(tile(d.pe.forward(p, anchor_positions), frames));
        for b in &d.blocks {
            let xn = b.ln1.forward(p, x);
            x = x.add(b.attn.forward(p, xn, xn, frames));
            x = x.add(b.ffn.forward(p, b.ln2.forward(p, x)));
        }
        let q = d
            .gs_in
            .forward(p, g.constant(canonical.clone()))
            .add(d.pe.forward(p, positions));
        let q = tile(q, frames);
        let h = q.add(d.cross.forward(p, d.ln_q.forward(p, q), d.ln_kv.forward(p, x), frames));
        let h = h.add(d.ffn.forward(p, d.ln_ff.forward(p, h)));
        d.head.forward(p, d.ln_out.forward(p, h))
    }

    /// Posterior over all frames of `tracks`, with anchors chosen on `g`.
    pub fn encode(
        &self,
        tracks: &crate::anim::PointTracks,
        g: &GaussianSet,
        dp_interp: &[Vec<Vec3>],
    ) -> Result<LatentSequence> {
        let t = tracks.frame_count();
        if t == 0 || dp_interp.len() != t {
            return Err(Error::Shape(format!(
                "{t} track frames with {} interpolation frames",
                dp_interp.len()
            )));
        }
        let (l, c) = (self.cfg.latent_size, self.cfg.latent_channels);
        let anchors = select_anchors(g, l)?;
        let anchor_positions: Vec<Vec3> = anchors.iter().map(|&i| g.positions[i]).collect();
        let input = data::encoder_input(tracks, dp_interp, &anchors, &anchor_positions, 0..t);
        let graph = Graph::new();
        let p = self.params.bind_const(&graph);
        let (mean, log_var) = self.encode_var(&p, &input);
        Ok(LatentSequence {
            mean: (*mean.value()).clone().reshape(&[t, l, c]),
            log_var: (*log_var.value()).clone().reshape(&[t, l, c]),
            sample: None,
            anchor_indices: anchors,
            anchor_positions,
        })
    }

    /// `z` is `T×L×C`.
    pub fn decode(&self, z: &Tensor, g: &GaussianSet, anchor_positions: &[Vec3]) -> Result<VariationField> {
        let s = z.shape();
        if s.len() != 3
            || s[1] != anchor_positions.len()
            || s[1] != self.cfg.latent_size
            || s[2] != self.cfg.latent_channels
        {
            return Err(Error::Shape(format!(
                "latents {s:?} do not match L={} C={}",
                self.cfg.latent_size, self.cfg.latent_channels
            )));
        }
        let t = s[0];
        let graph = Graph::new();
        let p = self.params.bind_const(&graph);
        let zv = graph.constant(z.clone().reshape(&[t * s[1], s[2]]));
        let out = self.decode_var(&p, zv, t, anchor_positions, &g.to_tensor(), &g.positions);
        VariationField::new((*out.value()).clone().reshape(&[t, g.len(), ATTRS]))
    }
}
