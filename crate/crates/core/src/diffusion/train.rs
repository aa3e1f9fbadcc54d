use std::fs::{self, OpenOptions};
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use super::{
    cosine_schedule, ddim_sample, forward_diffuse, sample_noise, v_target, ConditionBundle, Dit,
    DitConfig, NoiseSchedule,
};
use crate::autodiff::Graph;
use crate::blob::BlobFile;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::nn::optim::warmup_cosine;
use crate::nn::{AdamW, Checkpoint};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::vae::TrainOptions;

/// Per-channel mean and standard deviation of the training latents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Floor on the per-channel standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

impl LatentStats {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Statistics over every token of every latent `[T, L, C]`.
    pub fn compute(latents: &[&Tensor]) -> Result<Self> {
        let c = latents
            .first()
            .map(|t| t.cols())
            .ok_or_else(|| Error::InvalidInput("no latents".into()))?;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for t in latents {
            if t.cols() != c {
                return Err(Error::Shape("latents differ in channel count".into()));
            }
            for i in 0..t.rows() {
                for (k, &v) in t.row(i).iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            n += t.rows();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn standardize(&self, z: &Tensor) -> Tensor {
        self.per_channel(z, |v, m, s| (v - m) / s)
    }

    pub fn unstandardize(&self, z: &Tensor) -> Tensor {
        self.per_channel(z, |v, m, s| v * s + m)
    }

    fn per_channel(&self, z: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let c = self.mean.len();
        assert_eq!(z.cols(), c, "latent channel count");
        let data = z
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, self.mean[i % c], self.std[i % c]))
            .collect();
        Tensor::new(z.shape(), data)
    }
}

/// Cached posterior-mean latents and conditions for one animation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    /// `[T, L, C]`.
    pub mean: Tensor,
    pub anchor_indices: Vec<usize>,
    pub cond: ConditionBundle,
}

impl LatentRecord {
    pub fn frame_count(&self) -> usize {
        self.mean.shape()[0]
    }

    /// Frames `range` of the latents and video tokens.
    pub fn window(&self, range: Range<usize>) -> (Tensor, ConditionBundle) {
        let s = self.mean.shape();
        let per = s[1] * s[2];
        let z = Tensor::new(
            &[range.len(), s[1], s[2]],
            self.mean.data()[range.start * per..range.end * per].to_vec(),
        );
        let vs = self.cond.video_tokens.shape();
        let vper = vs[1] * vs[2];
        let video = Tensor::new(
            &[range.len(), vs[1], vs[2]],
            self.cond.video_tokens.data()[range.start * vper..range.end * vper].to_vec(),
        );
        let cond = ConditionBundle {
            video_tokens: video,
            ..self.cond.clone()
        };
        (z, cond)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = self.mean.shape();
        let mut header = Map::new();
        header.insert("kind".into(), json!("latent_record"));
        header.insert("T".into(), json!(s[0]));
        header.insert("L".into(), json!(s[1]));
        header.insert("C".into(), json!(s[2]));
        header.insert("anchor_indices".into(), json!(self.anchor_indices));
        let mut f = BlobFile::new(header);
        f.push("latent_mean", self.mean.clone());
        let ap: Vec<f64> = self.cond.anchor_positions.iter().flatten().copied().collect();
        f.push("anchor_positions", Tensor::new(&[self.cond.anchor_positions.len(), 3], ap));
        f.push("video_tokens", self.cond.video_tokens.clone());
        f.push("gs_tokens", self.cond.gs_tokens.clone());
        f.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = BlobFile::read(path)?;
        let bad = |msg: &str| Error::Header {
            path: path.to_path_buf(),
            msg: msg.into(),
        };
        if f.header.get("kind") != Some(&json!("latent_record")) {
            return Err(bad("not a latent_record file"));
        }
        let anchor_indices: Vec<usize> = serde_json::from_value(f.header["anchor_indices"].clone())
            .map_err(|_| bad("bad anchor_indices"))?;
        let ap = f.require("anchor_positions")?;
        let anchor_positions: Vec<Vec3> = (0..ap.rows())
            .map(|i| [ap.row(i)[0], ap.row(i)[1], ap.row(i)[2]])
            .collect();
        let mean = f.require("latent_mean")?.clone();
        if mean.shape().len() != 3 || mean.shape()[1] != anchor_positions.len() {
            return Err(bad("latent shape does not match anchors"));
        }
        Ok(Self {
            mean,
            anchor_indices,
            cond: ConditionBundle {
                video_tokens: f.require("video_tokens")?.clone(),
                gs_tokens: f.require("gs_tokens")?.clone(),
                anchor_positions,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionStep {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct DiffusionTrainer {
    pub model: Dit,
    pub opt: AdamW,
    pub stats: LatentStats,
    pub sched: NoiseSchedule,
    pub step: usize,
    pub seed: u64,
}

impl DiffusionTrainer {
    pub fn new(cfg: DitConfig, stats: LatentStats, video_width: usize, seed: u64) -> Result<Self> {
        let opt = AdamW::new(0.9, 0.999, 1e-8, cfg.weight_decay);
        let sched = cosine_schedule(cfg.timesteps);
        Ok(Self {
            model: Dit::new(cfg, stats.mean.len(), video_width, seed)?,
            opt,
            stats,
            sched,
            step: 0,
            seed,
        })
    }

    pub fn checkpoint(&self, config: serde_json::Value) -> Checkpoint {
        let mut extra = Map::new();
        extra.insert("latent_stats".into(), json!(self.stats));
        extra.insert("video_width".into(), json!(self.model.video_width));
        Checkpoint {
            config,
            iteration: self.step as u64,
            seed: self.seed,
            params: self.model.params.clone(),
            optimizer: Some(self.opt.clone()),
            extra,
        }
    }

    pub fn from_checkpoint(cfg: DitConfig, ck: &Checkpoint) -> Result<Self> {
        let stats: LatentStats = ck
            .extra
            .get("latent_stats")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| Error::Config("checkpoint lacks latent statistics".into()))?;
        let video_width = ck.extra.get("video_width").and_then(|v| v.as_u64()).unwrap_or(5) as usize;
        let mut t = Self::new(cfg, stats, video_width, ck.seed)?;
        ck.restore_into(&mut t.model.params)?;
        if let Some(opt) = &ck.optimizer {
            t.opt = opt.clone();
        }
        t.step = ck.iteration as usize;
        Ok(t)
    }

    pub fn train_step(&mut self, records: &[LatentRecord]) -> Result<DiffusionStep> {
        if records.is_empty() {
            return Err(Error::InvalidInput("no cached latents".into()));
        }
        let cfg = self.model.cfg.clone();
        let mut rng = SeededRng::stream(self.seed, self.step as u64);
        let mut order: Vec<usize> = (0..records.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.below(i + 1));
        }
        let graph = Graph::new();
        let p = self.model.params.bind(&graph);
        let mut total = None;
        for b in 0..cfg.batch {
            let rec = &records[order[b % order.len()]];
            let w = cfg.frames.min(rec.frame_count());
            let start = rng.below(rec.frame_count() - w + 1);
            let (z, cond) = rec.window(start..start + w);
            let z0 = self.stats.standardize(&z);
            let (s, eps) = sample_noise(&mut rng, self.sched.steps(), z0.len());
            let eps = Tensor::new(z0.shape(), eps);
            let sh = z0.shape().to_vec();
            let flat = [sh[0] * sh[1], sh[2]];
            let zs = forward_diffuse(&z0, s, &eps, &self.sched).reshape(&flat);
            let v = v_target(&z0, &eps, s, &self.sched).reshape(&flat);
            let v_hat = self.model.forward_var(&p, graph.constant(zs), s, w, &cond)?;
            let loss = v_hat.sub(graph.constant(v)).square().mean();
            total = Some(match total {
                None => loss,
                Some(acc) => loss.add(acc),
            });
        }
        let loss = total.expect("batch is positive").scale(1.0 / cfg.batch as f64);
        let value = loss.value().item();
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite diffusion loss at step {}",
                self.step
            )));
        }
        let grads = p.grads(&graph.backward(loss));
        let lr = warmup_cosine(self.step, cfg.steps, cfg.warmup, cfg.lr, cfg.min_lr_ratio);
        self.opt.update(&mut self.model.params, &grads, lr)?;
        let out = DiffusionStep {
            step: self.step,
            loss: value,
        };
        self.step += 1;
        Ok(out)
    }

    /// Latents `[T, L, C]` for `cond`, in the VAE's latent space.
    pub fn sample(&self, cond: &ConditionBundle, seed: u64) -> Result<Tensor> {
        let shape = [
            cond.frame_count(),
            cond.anchor_positions.len(),
            self.model.channels,
        ];
        let pred = self.model.predictor(cond);
        let z = ddim_sample(&pred, &self.sched, self.model.cfg.sample_steps, &shape, seed)?;
        Ok(self.stats.unstandardize(&z))
    }
}

pub fn train_diffusion(
    trainer: &mut DiffusionTrainer,
    records: &[LatentRecord],
    opts: &TrainOptions,
) -> Result<Vec<DiffusionStep>> {
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
        let s = trainer.train_step(records)?;
        if let (Some(f), Some(path)) = (log.as_mut(), &opts.metrics_path) {
            let line = json!({"step": s.step, "losses": {"v": s.loss}});
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        trace.push(s);
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
