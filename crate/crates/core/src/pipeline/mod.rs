//! End-to-end commands: dataset synthesis, VAE and diffusion training,
//! generation (including autoregressive long sequences), azimuth alignment
//! and evaluation.

mod align;
mod eval;
mod generate;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::anim::{load_animation, save_animation, synthesize_animation, MotionKind, MotionParams, Primitive};
use crate::diffusion::{
    build_conditions, train_diffusion, DiffusionStep, DiffusionTrainer, DitConfig, LatentRecord,
    LatentStats, PatchPool, VideoFeatures,
};
use crate::error::{Error, Result};
use crate::gsplat::{Camera, Image, RigConfig};
use crate::nn::Checkpoint;
use crate::rng::SeededRng;
use crate::vae::{prepare_animation, train_vae, PreparedAnimation, StepLosses, TrainOptions, VaeConfig, VaeModel, VaeTrainer};

pub use align::{azimuth_align, cmd_align, AlignConfig, Alignment};
pub use eval::{cmd_evaluate, evaluate_dirs, evaluate_frames, frame_file, read_frames, write_frames, MetricsReport};
pub use generate::{autoregressive_generate, cmd_generate, generate_segment, segment_count, Generated};

pub const VAE_CHECKPOINT: &str = "vae.ckpt";
pub const DIT_CHECKPOINT: &str = "dit.ckpt";
pub const DATASET_INDEX: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub animations: usize,
    pub frames: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            animations: 8,
            frames: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    /// Dataset animation whose video and canonical Gaussians are used.
    pub animation: usize,
    /// Rig view that plays the role of the input video.
    pub video_view: usize,
    /// Video directory in the `view{VV}_frame{TTT}.png` layout; `video_view` picks
    /// the view. Overrides the dataset video.
    pub video_dir: Option<PathBuf>,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            animation: 0,
            video_view: 0,
            video_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Steps between checkpoints; zero writes only the final one.
    pub checkpoint_every: usize,
    pub rig: RigConfig,
    pub synth: SynthConfig,
    pub vae: VaeConfig,
    pub dit: DitConfig,
    pub generate: GenerateConfig,
    pub align: AlignConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            output_dir: "outputs".into(),
            seed: 0,
            checkpoint_every: 500,
            rig: RigConfig::default(),
            synth: SynthConfig::default(),
            vae: VaeConfig::default(),
            dit: DitConfig::default(),
            generate: GenerateConfig::default(),
            align: AlignConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data_dir, &mut cfg.checkpoint_dir, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in [&mut cfg.generate.video_dir, &mut cfg.align.gaussians, &mut cfg.align.reference]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.vae.validate()?;
        self.dit.validate()?;
        self.rig.cameras()?;
        if self.synth.animations == 0 || self.synth.frames < 2 {
            return Err(Error::Config("synth needs at least one animation of two frames".into()));
        }
        if self.rig.size % self.dit.patch != 0 {
            return Err(Error::Config("rig.size must be divisible by dit.patch".into()));
        }
        if self.rig.size < crate::gsplat::metrics::SSIM_WINDOW {
            return Err(Error::Config("rig.size is below the SSIM window".into()));
        }
        if self.generate.video_view >= self.rig.views {
            return Err(Error::Config("generate.video_view is not a rig view".into()));
        }
        if self.align.n_angles < 2 {
            return Err(Error::Config("align.n_angles must be at least 2".into()));
        }
        Ok(())
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        self.rig.cameras()
    }

    /// Config identity stored in the VAE checkpoint.
    pub fn vae_identity(&self) -> Value {
        json!({"vae": self.vae, "rig": self.rig, "synth": self.synth, "seed": self.seed})
    }

    /// Config identity stored in the diffusion checkpoint.
    pub fn dit_identity(&self) -> Value {
        json!({"dit": self.dit, "vae": self.vae_identity()})
    }

    pub fn features(&self) -> PatchPool {
        PatchPool { patch: self.dit.patch }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub name: String,
    pub kind: MotionKind,
    pub seed: u64,
    pub params: MotionParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub animations: Vec<DatasetEntry>,
    pub rig: RigConfig,
    pub frames: usize,
}

const KINDS: [MotionKind; 4] = [
    MotionKind::Translate,
    MotionKind::Rotate,
    MotionKind::Bend,
    MotionKind::TwoPart,
];

fn kind_name(k: MotionKind) -> &'static str {
    match k {
        MotionKind::Translate => "translate",
        MotionKind::Rotate => "rotate",
        MotionKind::Bend => "bend",
        MotionKind::TwoPart => "two_part",
    }
}

/// Randomized motion parameters that keep the object inside the rig's view.
pub fn suite_params(frames: usize, rng: &mut SeededRng) -> MotionParams {
    let primitive = match rng.below(3) {
        0 => Primitive::Cube { subdiv: 4 },
        1 => Primitive::Sphere { rings: 10, segments: 16 },
        _ => Primitive::Cylinder { rings: 4, segments: 16 },
    };
    let stretch = [0, 1, 2].map(|_| 0.6 + 0.4 * rng.uniform());
    let heading = rng.uniform() * std::f64::consts::TAU;
    let travel = 0.15 + 0.15 * rng.uniform();
    let per_frame = travel / (frames.max(2) - 1) as f64;
    let velocity = [per_frame * heading.cos(), 0.3 * per_frame * (rng.uniform() - 0.5), per_frame * heading.sin()];
    let tilt = 0.3 * (rng.uniform() - 0.5);
    MotionParams {
        frames,
        primitive,
        stretch,
        velocity,
        axis: [tilt, 1.0, 0.3 * (rng.uniform() - 0.5)],
        total_angle: (30.0 + 60.0 * rng.uniform()).to_radians(),
        bend_angle: (30.0 + 40.0 * rng.uniform()).to_radians(),
        split_axis: rng.below(3),
        ..MotionParams::default()
    }
}

pub fn synth_entries(cfg: &SynthConfig, seed: u64) -> Vec<DatasetEntry> {
    let mut rng = SeededRng::stream(seed, 0x5eed);
    (0..cfg.animations)
        .map(|i| {
            let kind = KINDS[i % KINDS.len()];
            DatasetEntry {
                name: format!("anim_{i:02}_{}", kind_name(kind)),
                kind,
                seed: seed.wrapping_mul(1000).wrapping_add(i as u64),
                params: suite_params(cfg.frames, &mut rng),
            }
        })
        .collect()
}

/// Ground-truth frames of a dataset animation.
pub fn gt_dir(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.data_dir.join(name).join("gt")
}

/// Writes the synthetic suite: meshes, then ground-truth renders per view.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<DatasetIndex> {
    let cams = cfg.cameras()?;
    let entries = synth_entries(&cfg.synth, cfg.seed);
    fs::create_dir_all(&cfg.data_dir).map_err(|e| Error::io(&cfg.data_dir, e))?;
    for e in &entries {
        let dir = cfg.data_dir.join(&e.name);
        save_animation(&synthesize_animation(e.kind, &e.params, e.seed)?, &dir)?;
        let prepared = prepare_animation(&load_animation(&dir)?, &cfg.vae, &cams, e.seed)?;
        let frames: Vec<Vec<Image>> = prepared
            .gt
            .iter()
            .map(|views| views.iter().map(Image::from_tensor).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        write_frames(&gt_dir(cfg, &e.name), &frames)?;
    }
    let index = DatasetIndex {
        animations: entries,
        rig: cfg.rig.clone(),
        frames: cfg.synth.frames,
    };
    let path = cfg.data_dir.join(DATASET_INDEX);
    fs::write(&path, serde_json::to_vec_pretty(&index)?).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

pub fn load_index(cfg: &PipelineConfig) -> Result<DatasetIndex> {
    let path = cfg.data_dir.join(DATASET_INDEX);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let index: DatasetIndex = serde_json::from_str(&text)?;
    if index.rig != cfg.rig {
        return Err(Error::Config("dataset was rendered with a different rig".into()));
    }
    Ok(index)
}

/// Meshes re-read from disk and prepared for training.
pub fn load_dataset(cfg: &PipelineConfig) -> Result<(DatasetIndex, Vec<PreparedAnimation>)> {
    let index = load_index(cfg)?;
    let cams = cfg.cameras()?;
    let prepared = index
        .animations
        .iter()
        .map(|e| prepare_animation(&load_animation(&cfg.data_dir.join(&e.name))?, &cfg.vae, &cams, e.seed))
        .collect::<Result<_>>()?;
    Ok((index, prepared))
}

/// The conditioning video of a dataset animation.
pub fn dataset_video(cfg: &PipelineConfig, entry: &DatasetEntry) -> Result<Vec<Image>> {
    let frames = read_frames(&gt_dir(cfg, &entry.name))?;
    Ok(frames.into_iter().map(|mut v| v.swap_remove(cfg.generate.video_view)).collect())
}

fn train_options(cfg: &PipelineConfig, steps: usize, name: &str, identity: Value) -> TrainOptions {
    TrainOptions {
        steps,
        metrics_path: Some(cfg.checkpoint_dir.join(format!("{name}_metrics.jsonl"))),
        checkpoint_path: Some(cfg.checkpoint_dir.join(format!("{name}.ckpt"))),
        checkpoint_every: cfg.checkpoint_every,
        config_json: identity,
    }
}

fn fresh_log(path: &Option<PathBuf>) -> Result<()> {
    if let Some(p) = path {
        if p.exists() {
            fs::remove_file(p).map_err(|e| Error::io(p, e))?;
        }
    }
    Ok(())
}

pub fn cmd_train_vae(cfg: &PipelineConfig, resume: bool) -> Result<Vec<StepLosses>> {
    let (_, data) = load_dataset(cfg)?;
    let cams = cfg.cameras()?;
    let opts = train_options(cfg, cfg.vae.steps, "vae", cfg.vae_identity());
    let mut trainer = if resume {
        let ck = Checkpoint::load(&cfg.checkpoint_dir.join(VAE_CHECKPOINT))?;
        ck.ensure_config(&opts.config_json)?;
        VaeTrainer::from_checkpoint(cfg.vae.clone(), &ck)?
    } else {
        fresh_log(&opts.metrics_path)?;
        VaeTrainer::new(cfg.vae.clone(), cfg.seed)?
    };
    train_vae(&mut trainer, &data, &cams, &opts, None)
}

pub fn load_vae(cfg: &PipelineConfig) -> Result<VaeModel> {
    let ck = Checkpoint::load(&cfg.checkpoint_dir.join(VAE_CHECKPOINT))?;
    ck.ensure_config(&cfg.vae_identity())?;
    let mut model = VaeModel::new(cfg.vae.clone(), ck.seed)?;
    ck.restore_into(&mut model.params)?;
    Ok(model)
}

pub fn load_dit(cfg: &PipelineConfig) -> Result<DiffusionTrainer> {
    let ck = Checkpoint::load(&cfg.checkpoint_dir.join(DIT_CHECKPOINT))?;
    ck.ensure_config(&cfg.dit_identity())?;
    DiffusionTrainer::from_checkpoint(cfg.dit.clone(), &ck)
}

/// Posterior-mean latents and conditions for every animation.
pub fn precompute_latents(
    vae: &VaeModel,
    data: &[PreparedAnimation],
    videos: &[Vec<Image>],
    features: &dyn VideoFeatures,
) -> Result<Vec<LatentRecord>> {
    data.iter()
        .zip(videos)
        .map(|(a, video)| {
            let lat = vae.encode(&a.tracks, &a.gaussians, &a.dp_interp)?;
            let cond = build_conditions(video, &a.gaussians, &lat.anchor_indices, features)?;
            Ok(LatentRecord {
                mean: lat.mean,
                anchor_indices: lat.anchor_indices,
                cond,
            })
        })
        .collect()
}

pub fn cmd_train_diffusion(cfg: &PipelineConfig, resume: bool) -> Result<Vec<DiffusionStep>> {
    let vae = load_vae(cfg)?;
    let (index, data) = load_dataset(cfg)?;
    let videos = index
        .animations
        .iter()
        .map(|e| dataset_video(cfg, e))
        .collect::<Result<Vec<_>>>()?;
    let features = cfg.features();
    let records = precompute_latents(&vae, &data, &videos, &features)?;
    let cache = cfg.checkpoint_dir.join("latents");
    fs::create_dir_all(&cache).map_err(|e| Error::io(&cache, e))?;
    for (e, r) in index.animations.iter().zip(&records) {
        r.save(&cache.join(format!("{}.bin", e.name)))?;
    }
    let opts = train_options(cfg, cfg.dit.steps, "dit", cfg.dit_identity());
    let mut trainer = if resume {
        let ck = Checkpoint::load(&cfg.checkpoint_dir.join(DIT_CHECKPOINT))?;
        ck.ensure_config(&opts.config_json)?;
        DiffusionTrainer::from_checkpoint(cfg.dit.clone(), &ck)?
    } else {
        fresh_log(&opts.metrics_path)?;
        let means: Vec<_> = records.iter().map(|r| &r.mean).collect();
        DiffusionTrainer::new(cfg.dit.clone(), LatentStats::compute(&means)?, features.width(), cfg.seed)?
    };
    train_diffusion(&mut trainer, &records, &opts)
}
