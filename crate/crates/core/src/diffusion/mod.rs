//! Latent diffusion over variation-field latents: cosine schedule,
//! v-prediction, a temporal transformer conditioned on video and Gaussian
//! tokens, and deterministic DDIM sampling.

pub mod train;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::gsplat::{GaussianSet, Image, ATTRS};
use crate::nn::{
    timestep_features, AdaLn, AttentionConfig, FeedForward, FourierEmbedding, Init, Linear,
    MultiheadAttention, ParamStore, Params, WeightInit, DEFAULT_NUM_FREQS,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub use train::{train_diffusion, DiffusionStep, DiffusionTrainer, LatentRecord, LatentStats};

pub const DEFAULT_TIMESTEPS: usize = 1000;
pub const COSINE_OFFSET: f64 = 0.008;
pub const ALPHA_BAR_FLOOR: f64 = 1e-5;
pub const DEFAULT_PATCH: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// `α_s` for `s = 0..=S`.
    pub alphas: Vec<f64>,
    pub sigmas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alpha(&self, s: usize) -> f64 {
        self.alphas[s]
    }

    pub fn sigma(&self, s: usize) -> f64 {
        self.sigmas[s]
    }
}

fn cosine_alpha_bar(u: f64) -> f64 {
    let a = |u: f64| ((u + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos().powi(2);
    (a(u) / a(0.0)).max(ALPHA_BAR_FLOOR)
}

pub fn cosine_schedule(steps: usize) -> NoiseSchedule {
    assert!(steps > 0, "schedule needs at least one step");
    let (mut alphas, mut sigmas) = (Vec::with_capacity(steps + 1), Vec::with_capacity(steps + 1));
    for s in 0..=steps {
        let ab = cosine_alpha_bar(s as f64 / steps as f64).min(1.0);
        alphas.push(ab.sqrt());
        sigmas.push((1.0 - ab).sqrt());
    }
    NoiseSchedule { alphas, sigmas }
}

/// `α_s z0 + σ_s ε`.
pub fn forward_diffuse(z0: &Tensor, s: usize, eps: &Tensor, sched: &NoiseSchedule) -> Tensor {
    let (a, b) = (sched.alpha(s), sched.sigma(s));
    z0.zip_map(eps, |z, e| a * z + b * e)
}

/// `α_s ε − σ_s z0`.
pub fn v_target(z0: &Tensor, eps: &Tensor, s: usize, sched: &NoiseSchedule) -> Tensor {
    let (a, b) = (sched.alpha(s), sched.sigma(s));
    z0.zip_map(eps, |z, e| a * e - b * z)
}

/// `α_s z_s − σ_s v̂`.
pub fn z0_from_v(z_s: &Tensor, v_hat: &Tensor, s: usize, sched: &NoiseSchedule) -> Tensor {
    let (a, b) = (sched.alpha(s), sched.sigma(s));
    z_s.zip_map(v_hat, |z, v| a * z - b * v)
}

/// `σ_s z_s + α_s v̂`.
pub fn eps_from_v(z_s: &Tensor, v_hat: &Tensor, s: usize, sched: &NoiseSchedule) -> Tensor {
    let (a, b) = (sched.alpha(s), sched.sigma(s));
    z_s.zip_map(v_hat, |z, v| b * z + a * v)
}

/// Anything that predicts the velocity of a noisy sample at step `s`.
pub trait VelocityPredictor {
    fn predict(&self, z_s: &Tensor, s: usize) -> Result<Tensor>;
}

/// Uniform `s ∈ [1, S]` and standard normal noise of `len` values.
pub fn sample_noise(rng: &mut SeededRng, steps: usize, len: usize) -> (usize, Vec<f64>) {
    let s = 1 + rng.below(steps);
    (s, rng.normals(len))
}

/// `mean‖v̂ − v‖²` at one `(s, ε)` draw from `seed`.
pub fn training_loss(
    z0: &Tensor,
    model: &dyn VelocityPredictor,
    sched: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let (s, eps) = sample_noise(&mut rng, sched.steps(), z0.len());
    let eps = Tensor::new(z0.shape(), eps);
    let v = v_target(z0, &eps, s, sched);
    let v_hat = model.predict(&forward_diffuse(z0, s, &eps, sched), s)?;
    Ok(v_hat.zip_map(&v, |a, b| (a - b).powi(2)).mean())
}

/// Decreasing step grid `S = g_n > … > g_0 = 0`, uniformly strided.
pub fn ddim_grid(steps: usize, num_steps: usize) -> Vec<usize> {
    (0..=num_steps)
        .map(|i| (i as f64 * steps as f64 / num_steps as f64).round() as usize)
        .collect()
}

/// Deterministic DDIM from `z_S ~ N(0, I)` drawn with `seed`.
pub fn ddim_sample(
    model: &dyn VelocityPredictor,
    sched: &NoiseSchedule,
    num_steps: usize,
    shape: &[usize],
    seed: u64,
) -> Result<Tensor> {
    if num_steps == 0 || num_steps > sched.steps() {
        return Err(Error::InvalidInput(format!(
            "{num_steps} sampling steps for a {}-step schedule",
            sched.steps()
        )));
    }
    let len = shape.iter().product();
    let z = Tensor::new(shape, SeededRng::new(seed).normals(len));
    ddim_from(model, sched, num_steps, z)
}

/// DDIM starting from a given `z_S`.
pub fn ddim_from(
    model: &dyn VelocityPredictor,
    sched: &NoiseSchedule,
    num_steps: usize,
    mut z: Tensor,
) -> Result<Tensor> {
    let grid = ddim_grid(sched.steps(), num_steps);
    let mut z0 = z.clone();
    for i in (1..grid.len()).rev() {
        let (s, next) = (grid[i], grid[i - 1]);
        let v = model.predict(&z, s)?;
        if !v.all_finite() {
            return Err(Error::Numerical(format!("non-finite velocity at step {s}")));
        }
        z0 = z0_from_v(&z, &v, s, sched);
        let eps = eps_from_v(&z, &v, s, sched);
        z = forward_diffuse(&z0, next, &eps, sched);
    }
    Ok(z0)
}

/// Per-frame image features for the video condition.
pub trait VideoFeatures {
    fn width(&self) -> usize;
    /// `[P, width]` tokens for one frame.
    fn tokens(&self, frame: &Image) -> Result<Tensor>;
}

/// Mean RGB of each `patch×patch` block followed by the block center in
/// `[-1, 1]` image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchPool {
    pub patch: usize,
}

impl Default for PatchPool {
    fn default() -> Self {
        Self { patch: DEFAULT_PATCH }
    }
}

impl VideoFeatures for PatchPool {
    fn width(&self) -> usize {
        5
    }

    fn tokens(&self, frame: &Image) -> Result<Tensor> {
        let p = self.patch;
        if p == 0 || frame.height % p != 0 || frame.width % p != 0 {
            return Err(Error::InvalidInput(format!(
                "{}x{} frame not divisible into {p}x{p} patches",
                frame.height, frame.width
            )));
        }
        let (ph, pw) = (frame.height / p, frame.width / p);
        let mut data = Vec::with_capacity(ph * pw * 5);
        let norm = 1.0 / (p * p) as f64;
        for by in 0..ph {
            for bx in 0..pw {
                let mut rgb = [0.0; 3];
                for y in by * p..(by + 1) * p {
                    for x in bx * p..(bx + 1) * p {
                        let px = frame.pixel(y, x);
                        for c in 0..3 {
                            rgb[c] += px[c];
                        }
                    }
                }
                data.extend(rgb.map(|v| v * norm));
                data.push(2.0 * (bx as f64 + 0.5) / pw as f64 - 1.0);
                data.push(2.0 * (by as f64 + 0.5) / ph as f64 - 1.0);
            }
        }
        Ok(Tensor::new(&[ph * pw, 5], data))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    /// `[T, P, D_v]`.
    pub video_tokens: Tensor,
    /// `[L, 14]` attributes of the anchor Gaussians.
    pub gs_tokens: Tensor,
    pub anchor_positions: Vec<Vec3>,
}

impl ConditionBundle {
    pub fn frame_count(&self) -> usize {
        self.video_tokens.shape()[0]
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.video_tokens.shape()[1]
    }
}

/// Video tokens per frame plus the anchor Gaussians selected by `anchors`.
pub fn build_conditions(
    frames: &[Image],
    g: &GaussianSet,
    anchors: &[usize],
    features: &dyn VideoFeatures,
) -> Result<ConditionBundle> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no video frames".into()));
    }
    let mut data = Vec::new();
    let mut p = 0;
    for f in frames {
        let t = features.tokens(f)?;
        if p != 0 && t.rows() != p {
            return Err(Error::Shape("frames yield different token counts".into()));
        }
        p = t.rows();
        data.extend_from_slice(t.data());
    }
    if let Some(&bad) = anchors.iter().find(|&&i| i >= g.len()) {
        return Err(Error::InvalidInput(format!("anchor {bad} out of range")));
    }
    let anchor_set = g.subset(anchors);
    Ok(ConditionBundle {
        video_tokens: Tensor::new(&[frames.len(), p, features.width()], data),
        gs_tokens: anchor_set.to_tensor(),
        anchor_positions: anchor_set.positions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DitConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub qk_norm: bool,
    /// Include the temporal self-attention sublayer.
    pub temporal: bool,
    pub timesteps: usize,
    /// Frames per training sequence.
    pub frames: usize,
    pub num_freqs: usize,
    pub time_dim: usize,
    pub patch: usize,
    pub sample_steps: usize,
    pub steps: usize,
    /// Sequences per optimizer step.
    pub batch: usize,
    pub lr: f64,
    pub min_lr_ratio: f64,
    pub warmup: usize,
    pub weight_decay: f64,
}

impl Default for DitConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            width: 64,
            heads: 4,
            qk_norm: true,
            temporal: true,
            timesteps: DEFAULT_TIMESTEPS,
            frames: 8,
            num_freqs: DEFAULT_NUM_FREQS,
            time_dim: 64,
            patch: DEFAULT_PATCH,
            sample_steps: 50,
            steps: 20000,
            batch: 4,
            lr: 1e-3,
            min_lr_ratio: 0.05,
            warmup: 200,
            weight_decay: 0.0,
        }
    }
}

impl DitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("depth", self.depth),
            ("width", self.width),
            ("heads", self.heads),
            ("timesteps", self.timesteps),
            ("frames", self.frames),
            ("time_dim", self.time_dim),
            ("patch", self.patch),
            ("sample_steps", self.sample_steps),
            ("batch", self.batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("dit.{name} must be positive")));
            }
        }
        if self.width % self.heads != 0 {
            return Err(Error::Config("dit.width must be divisible by dit.heads".into()));
        }
        if self.time_dim % 2 != 0 {
            return Err(Error::Config("dit.time_dim must be even".into()));
        }
        if self.sample_steps > self.timesteps {
            return Err(Error::Config("dit.sample_steps must not exceed dit.timesteps".into()));
        }
        Ok(())
    }

    fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            width: self.width,
            heads: self.heads,
            qk_norm: self.qk_norm,
        }
    }
}

#[derive(Debug, Clone)]
struct Block {
    ada: AdaLn,
    spatial: MultiheadAttention,
    temporal: MultiheadAttention,
    cross: MultiheadAttention,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct Dit {
    pub cfg: DitConfig,
    pub channels: usize,
    pub video_width: usize,
    pub params: ParamStore,
    z_in: Linear,
    pe: FourierEmbedding,
    frame_in: Linear,
    t1: Linear,
    t2: Linear,
    video_in: Linear,
    gs_in: Linear,
    blocks: Vec<Block>,
    final_ada: AdaLn,
    head: Linear,
}

fn tile<'g>(x: Var<'g>, times: usize) -> Var<'g> {
    let s = x.shape();
    x.repeat(times).reshape(&[times * s[0], s[1]])
}

/// `[A·B, D]` laid out `A`-major to `B`-major.
fn swap_groups<'g>(x: Var<'g>, a: usize, b: usize) -> Var<'g> {
    let d = x.shape()[1];
    x.reshape(&[a, b, d]).transpose01().reshape(&[a * b, d])
}

impl Dit {
    pub fn new(cfg: DitConfig, channels: usize, video_width: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(&mut params, seed);
        let (d, td) = (cfg.width, cfg.time_dim);
        let at = cfg.attention();
        let blocks = (0..cfg.depth)
            .map(|i| {
                let n = |s: &str| format!("block{i}.{s}");
                Block {
                    ada: AdaLn::new(&mut init, &n("ada"), d, d, 4),
                    spatial: MultiheadAttention::new(&mut init, &n("spatial"), at, d),
                    temporal: MultiheadAttention::new(&mut init, &n("temporal"), at, d),
                    cross: MultiheadAttention::new(&mut init, &n("cross"), at, d),
                    ffn: FeedForward::new(&mut init, &n("ffn"), d),
                }
            })
            .collect();
        let z_in = Linear::new(&mut init, "z_in", channels, d, WeightInit::Normal);
        let pe = FourierEmbedding::new(&mut init, "pe", cfg.num_freqs, d);
        let frame_in = Linear::new(&mut init, "frame_in", td, d, WeightInit::Normal);
        let t1 = Linear::new(&mut init, "time.fc1", td, d, WeightInit::Normal);
        let t2 = Linear::new(&mut init, "time.fc2", d, d, WeightInit::Normal);
        let video_in = Linear::new(&mut init, "video_in", video_width, d, WeightInit::Normal);
        let gs_in = Linear::new(&mut init, "gs_in", ATTRS, d, WeightInit::Normal);
        let final_ada = AdaLn::new(&mut init, "final_ada", d, d, 1);
        let head = Linear::new(&mut init, "head", d, channels, WeightInit::Zero);
        Ok(Self {
            cfg,
            channels,
            video_width,
            params,
            z_in,
            pe,
            frame_in,
            t1,
            t2,
            video_in,
            gs_in,
            blocks,
            final_ada,
            head,
        })
    }

    fn check(&self, frames: usize, tokens: usize, cond: &ConditionBundle) -> Result<()> {
        let vs = cond.video_tokens.shape();
        if vs.len() != 3 || vs[0] != frames || vs[2] != self.video_width {
            return Err(Error::Shape(format!(
                "video tokens {vs:?} for {frames} frames of width {}",
                self.video_width
            )));
        }
        if cond.anchor_positions.len() != tokens {
            return Err(Error::Shape(format!(
                "{} anchor positions for {tokens} latent tokens",
                cond.anchor_positions.len()
            )));
        }
        if cond.gs_tokens.cols() != ATTRS {
            return Err(Error::Shape("gs tokens must have 14 channels".into()));
        }
        Ok(())
    }

    /// Velocity for latents `[T·L, C]` at step `s`.
    pub fn forward_var<'g>(
        &self,
        p: &Params<'g>,
        z: Var<'g>,
        s: usize,
        frames: usize,
        cond: &ConditionBundle,
    ) -> Result<Var<'g>> {
        let zs = z.shape();
        if zs.len() != 2 || zs[1] != self.channels || zs[0] % frames != 0 {
            return Err(Error::Shape(format!("latent shape {zs:?} for {frames} frames")));
        }
        let l = zs[0] / frames;
        self.check(frames, l, cond)?;
        let g = z.graph();
        let d = self.cfg.width;
        let td = self.cfg.time_dim;

        let mut frame_feats = Vec::with_capacity(frames * l * td);
        for t in 0..frames {
            let f = timestep_features(t as f64, td);
            for _ in 0..l {
                frame_feats.extend_from_slice(f.data());
            }
        }
        let frame_emb = self.frame_in.forward(p, g.constant(Tensor::new(&[frames * l, td], frame_feats)));
        let mut x = self
            .z_in
            .forward(p, z)
            .add(tile(self.pe.forward(p, &cond.anchor_positions), frames))
            .add(frame_emb);

        let temb = self
            .t2
            .forward(p, self.t1.forward(p, g.constant(timestep_features(s as f64, td))).silu());

        let pv = cond.tokens_per_frame();
        let video = self.video_in.forward(
            p,
            g.constant(cond.video_tokens.clone().reshape(&[frames * pv, self.video_width])),
        );
        let gs = tile(self.gs_in.forward(p, g.constant(cond.gs_tokens.clone())), frames);
        let lc = cond.gs_tokens.rows();
        let ctx = video.concat_groups(gs, frames).reshape(&[frames * (pv + lc), d]);

        for b in &self.blocks {
            let m = b.ada.forward(p, temb);
            let h = m[0].modulate(x);
            x = m[0].residual(x, b.spatial.forward(p, h, h, frames));
            if self.cfg.temporal {
                let h = swap_groups(m[1].modulate(x), frames, l);
                let a = b.temporal.forward(p, h, h, l);
                x = m[1].residual(x, swap_groups(a, l, frames));
            }
            let h = m[2].modulate(x);
            x = m[2].residual(x, b.cross.forward(p, h, ctx, frames));
            let h = m[3].modulate(x);
            x = m[3].residual(x, b.ffn.forward(p, h));
        }
        let m = self.final_ada.forward(p, temb);
        Ok(self.head.forward(p, m[0].modulate(x)))
    }

    /// `v̂` for `z_s` shaped `[T, L, C]`.
    pub fn forward(&self, z_s: &Tensor, s: usize, cond: &ConditionBundle) -> Result<Tensor> {
        let sh = z_s.shape();
        if sh.len() != 3 {
            return Err(Error::Shape(format!("latent shape {sh:?} is not T×L×C")));
        }
        let graph = Graph::new();
        let p = self.params.bind_const(&graph);
        let z = graph.constant(z_s.clone().reshape(&[sh[0] * sh[1], sh[2]]));
        let v = self.forward_var(&p, z, s, sh[0], cond)?;
        let out = (*v.value()).clone().reshape(sh);
        Ok(out)
    }

    pub fn predictor<'a>(&'a self, cond: &'a ConditionBundle) -> DitPredictor<'a> {
        DitPredictor { model: self, cond }
    }
}

/// A [`Dit`] bound to one condition bundle.
pub struct DitPredictor<'a> {
    pub model: &'a Dit,
    pub cond: &'a ConditionBundle,
}

impl VelocityPredictor for DitPredictor<'_> {
    fn predict(&self, z_s: &Tensor, s: usize) -> Result<Tensor> {
        self.model.forward(z_s, s, self.cond)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn schedule_boundaries() {
        let s = cosine_schedule(1000);
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.sigma(0), 0.0);
        for i in 0..=1000 {
            assert!(close(s.alpha(i).powi(2) + s.sigma(i).powi(2), 1.0, 1e-9));
            if i > 0 {
                assert!(s.alpha(i) <= s.alpha(i - 1));
            }
        }
        assert!(close(s.alpha(1000), ALPHA_BAR_FLOOR.sqrt(), 1e-12));
    }

    #[test]
    fn schedule_matches_formula_mid_way() {
        let s = cosine_schedule(1000);
        let f = |u: f64| ((u + 0.008) / 1.008 * std::f64::consts::PI / 2.0).cos().powi(2);
        let ab = f(0.5) / f(0.0);
        assert!(close(s.alpha(500), ab.sqrt(), 1e-12));
        assert!(close(s.sigma(500), (1.0 - ab).sqrt(), 1e-12));
    }

    #[test]
    fn diffusion_algebra() {
        let sched = cosine_schedule(1000);
        let mut rng = SeededRng::new(1);
        let z0 = Tensor::new(&[2, 3], rng.normals(6));
        let eps = Tensor::new(&[2, 3], rng.normals(6));
        assert_eq!(forward_diffuse(&z0, 0, &eps, &sched), z0);
        assert_eq!(v_target(&z0, &eps, 0, &sched), eps);
        let zt = forward_diffuse(&z0, 1000, &eps, &sched);
        let rel = zt.max_abs_diff(&eps) / eps.max_abs();
        assert!(rel < 0.01);
        for s in [1, 17, 500, 999] {
            let zs = forward_diffuse(&z0, s, &eps, &sched);
            let v = v_target(&z0, &eps, s, &sched);
            assert!(z0_from_v(&zs, &v, s, &sched).max_abs_diff(&z0) < 1e-12);
            assert!(eps_from_v(&zs, &v, s, &sched).max_abs_diff(&eps) < 1e-12);
            let (a, b) = (sched.alpha(s), sched.sigma(s));
            assert!(close(zs.data()[4], a * z0.data()[4] + b * eps.data()[4], 1e-15));
            assert!(close(v.data()[2], a * eps.data()[2] - b * z0.data()[2], 1e-15));
        }
    }

    struct Zero;
    impl VelocityPredictor for Zero {
        fn predict(&self, z: &Tensor, _: usize) -> Result<Tensor> {
            Ok(Tensor::zeros(z.shape()))
        }
    }

    /// Knows `z0` and returns the velocity that recovers it exactly.
    struct Exact {
        z0: Tensor,
        sched: NoiseSchedule,
    }
    impl VelocityPredictor for Exact {
        fn predict(&self, z: &Tensor, s: usize) -> Result<Tensor> {
            let (a, b) = (self.sched.alpha(s), self.sched.sigma(s));
            Ok(z.zip_map(&self.z0, |zs, z0| (a * zs - z0) / b))
        }
    }

    #[test]
    fn training_loss_oracles() {
        let sched = cosine_schedule(1000);
        let z0 = Tensor::new(&[2, 4, 3], SeededRng::new(5).normals(24));
        let exact = Exact {
            z0: z0.clone(),
            sched: sched.clone(),
        };
        assert!(training_loss(&z0, &exact, &sched, 3).unwrap() < 1e-20);
        let mut rng = SeededRng::new(3);
        let (s, eps) = sample_noise(&mut rng, 1000, z0.len());
        let v = v_target(&z0, &Tensor::new(z0.shape(), eps), s, &sched);
        let direct = v.data().iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
        assert!(close(training_loss(&z0, &Zero, &sched, 3).unwrap(), direct, 1e-12));
        assert_eq!(
            training_loss(&z0, &Zero, &sched, 3).unwrap(),
            training_loss(&z0, &Zero, &sched, 3).unwrap()
        );
    }

    #[test]
    fn ddim_with_exact_predictor_recovers_target() {
        let sched = cosine_schedule(1000);
        let z0 = Tensor::new(&[1, 3, 2], SeededRng::new(8).normals(6));
        let exact = Exact {
            z0: z0.clone(),
            sched: sched.clone(),
        };
        for n in [1000, 50, 7] {
            let out = ddim_sample(&exact, &sched, n, &[1, 3, 2], 4).unwrap();
            assert!(out.max_abs_diff(&z0) < 1e-9, "{n} steps");
        }
        let a = ddim_sample(&Zero, &sched, 10, &[2, 2], 1).unwrap();
        assert_eq!(a, ddim_sample(&Zero, &sched, 10, &[2, 2], 1).unwrap());
        assert!(ddim_sample(&Zero, &sched, 1001, &[2, 2], 1).is_err());
    }

    #[test]
    fn grid_is_uniform_and_complete() {
        assert_eq!(ddim_grid(1000, 4), vec![0, 250, 500, 750, 1000]);
        assert_eq!(ddim_grid(10, 10), (0..=10).collect::<Vec<_>>());
    }

    fn tiny() -> DitConfig {
        DitConfig {
            depth: 1,
            width: 16,
            heads: 2,
            time_dim: 8,
            num_freqs: 2,
            ..DitConfig::default()
        }
    }

    fn bundle(frames: usize, l: usize, seed: u64) -> ConditionBundle {
        let mut rng = SeededRng::new(seed);
        ConditionBundle {
            video_tokens: Tensor::new(&[frames, 4, 5], rng.normals(frames * 20)),
            gs_tokens: Tensor::new(&[l, ATTRS], rng.normals(l * ATTRS)),
            anchor_positions: (0..l).map(|_| [rng.normal(), rng.normal(), rng.normal()]).collect(),
        }
    }

    #[test]
    fn fresh_model_predicts_zero() {
        let dit = Dit::new(tiny(), 3, 5, 0).unwrap();
        let cond = bundle(2, 4, 1);
        let z = Tensor::new(&[2, 4, 3], SeededRng::new(2).normals(24));
        let v = dit.forward(&z, 500, &cond).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn patch_pool_shapes_and_values() {
        let mut img = Image::constant(16, 16, [0.25, 0.5, 0.75]);
        for x in 0..8 {
            img.pixels[(0 * 16 + x) * 3] = 1.0;
        }
        let t = PatchPool::default().tokens(&img).unwrap();
        assert_eq!(t.shape(), &[4, 5]);
        assert!(close(t.row(0)[0], 0.25 + 0.75 / 8.0, 1e-12));
        assert_eq!(&t.row(3)[1..], &[0.5, 0.75, 0.5, 0.5]);
        assert!(PatchPool::default().tokens(&Image::constant(12, 16, [0.0; 3])).is_err());
        let frame64 = Image::constant(64, 64, [0.1; 3]);
        assert_eq!(PatchPool::default().tokens(&frame64).unwrap().rows(), 64);
    }

    #[test]
    fn shape_errors() {
        let dit = Dit::new(tiny(), 3, 5, 0).unwrap();
        let z = Tensor::zeros(&[2, 4, 3]);
        assert!(matches!(dit.forward(&z, 1, &bundle(3, 4, 1)), Err(Error::Shape(_))));
        assert!(matches!(dit.forward(&z, 1, &bundle(2, 5, 1)), Err(Error::Shape(_))));
        assert!(matches!(
            DitConfig { width: 10, heads: 4, ..tiny() }.validate(),
            Err(Error::Config(_))
        ));
    }

    fn randomized(cfg: DitConfig, seed: u64) -> Dit {
        let mut dit = Dit::new(cfg, 3, 5, seed).unwrap();
        let mut rng = SeededRng::new(seed + 100);
        for (_, t) in dit.params.iter_mut() {
            for v in t.data_mut() {
                *v = 0.3 * rng.normal();
            }
        }
        dit
    }

    fn permute_rows(t: &Tensor, frames: usize, perm: &[usize]) -> Tensor {
        let per = t.len() / frames;
        let width = per / perm.len();
        let mut out = Vec::with_capacity(t.len());
        for f in 0..frames {
            for &i in perm {
                let o = f * per + i * width;
                out.extend_from_slice(&t.data()[o..o + width]);
            }
        }
        Tensor::new(t.shape(), out)
    }

    #[test]
    fn tokens_permute_with_anchors() {
        let dit = randomized(tiny(), 1);
        let cond = bundle(2, 5, 2);
        let z = Tensor::new(&[2, 5, 3], SeededRng::new(3).normals(30));
        let perm = [3, 0, 4, 1, 2];
        let v = dit.forward(&z, 321, &cond).unwrap();
        let pc = ConditionBundle {
            anchor_positions: perm.iter().map(|&i| cond.anchor_positions[i]).collect(),
            ..cond.clone()
        };
        let pv = dit.forward(&permute_rows(&z, 2, &perm), 321, &pc).unwrap();
        assert!(pv.max_abs_diff(&permute_rows(&v, 2, &perm)) < 1e-10);
    }

    #[test]
    fn conditions_are_sets() {
        let dit = randomized(tiny(), 4);
        let cond = bundle(2, 5, 5);
        let z = Tensor::new(&[2, 5, 3], SeededRng::new(6).normals(30));
        let v = dit.forward(&z, 40, &cond).unwrap();
        let shuffled = ConditionBundle {
            video_tokens: permute_rows(&cond.video_tokens, 2, &[2, 0, 3, 1]),
            gs_tokens: cond.gs_tokens.gather_rows(&[4, 2, 0, 1, 3]),
            ..cond.clone()
        };
        assert!(dit.forward(&z, 40, &shuffled).unwrap().max_abs_diff(&v) < 1e-10);
    }

    #[test]
    fn frames_interact_only_through_temporal_attention() {
        let cond = bundle(3, 4, 7);
        let z = Tensor::new(&[3, 4, 3], SeededRng::new(8).normals(36));
        let mut z2 = z.clone();
        for v in &mut z2.data_mut()[24..] {
            *v += 1.0;
        }
        let isolated = randomized(DitConfig { temporal: false, ..tiny() }, 9);
        let a = isolated.forward(&z, 10, &cond).unwrap();
        let b = isolated.forward(&z2, 10, &cond).unwrap();
        assert!(Tensor::new(&[24], a.data()[..24].to_vec())
            .max_abs_diff(&Tensor::new(&[24], b.data()[..24].to_vec()))
            < 1e-12);
        let coupled = randomized(tiny(), 9);
        let a = coupled.forward(&z, 10, &cond).unwrap();
        let b = coupled.forward(&z2, 10, &cond).unwrap();
        assert!((a.data()[0] - b.data()[0]).abs() > 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = DitConfig {
            depth: 2,
            width: 32,
            heads: 4,
            time_dim: 8,
            num_freqs: 2,
            ..DitConfig::default()
        };
        let dit = randomized(cfg, 11);
        let cond = bundle(2, 3, 12);
        let z = Tensor::new(&[6, 3], SeededRng::new(13).normals(18));
        let w = Tensor::new(&[6, 3], SeededRng::new(14).normals(18));
        let err = crate::autodiff::gradcheck::check(&[z], 1e-5, |g, xs| {
            let p = dit.params.bind_const(g);
            dit.forward_var(&p, xs[0], 77, 2, &cond)
                .unwrap()
                .mul(g.constant(w.clone()))
                .sum()
        });
        assert!(err < 1e-4, "{err}");
    }
}
