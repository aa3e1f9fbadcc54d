use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{gt_dir, PipelineConfig};
use crate::error::{Error, Result};
use crate::gsplat::{metrics, Image};

/// `view{VV}_frame{TTT}.png`.
pub fn frame_file(view: usize, t: usize) -> String {
    format!("view{view:02}_frame{t:03}.png")
}

fn parse_frame_file(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("view")?.strip_suffix(".png")?;
    let (v, t) = rest.split_once("_frame")?;
    Some((v.parse().ok()?, t.parse().ok()?))
}

/// Writes `frames[t][view]` as PNGs.
pub fn write_frames(dir: &Path, frames: &[Vec<Image>]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, views) in frames.iter().enumerate() {
        for (v, img) in views.iter().enumerate() {
            img.write_png(&dir.join(frame_file(v, t)))?;
        }
    }
    Ok(())
}

/// Reads a directory written by [`write_frames`] as `[t][view]`.
pub fn read_frames(dir: &Path) -> Result<Vec<Vec<Image>>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let (mut frames, mut views) = (0, 0);
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some((v, t)) = entry.file_name().to_str().and_then(parse_frame_file) {
            views = views.max(v + 1);
            frames = frames.max(t + 1);
        }
    }
    if frames == 0 {
        return Err(Error::InvalidInput(format!("no frames in {}", dir.display())));
    }
    (0..frames)
        .map(|t| (0..views).map(|v| Image::read_png(&dir.join(frame_file(v, t)))).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub views: usize,
    /// Frame-major, `frames × views` entries.
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    /// Mean L1 between consecutive generated frames of the same view.
    pub temporal_coherence: f64,
    pub runtime_seconds: f64,
}

pub fn evaluate_frames(generated: &[Vec<Image>], gt: &[Vec<Image>]) -> Result<MetricsReport> {
    if generated.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} generated frames against {} ground-truth frames",
            generated.len(),
            gt.len()
        )));
    }
    let views = gt.first().map_or(0, Vec::len);
    let (mut psnr, mut ssim) = (Vec::new(), Vec::new());
    for (g, r) in generated.iter().zip(gt) {
        if g.len() != views || r.len() != views {
            return Err(Error::Shape("view counts differ between frames".into()));
        }
        for (a, b) in g.iter().zip(r) {
            psnr.push(metrics::psnr(a, b)?);
            ssim.push(metrics::ssim(a, b)?);
        }
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let mut diffs = Vec::new();
    for t in 1..generated.len() {
        for v in 0..views {
            diffs.push(metrics::l1(&generated[t][v], &generated[t - 1][v])?);
        }
    }
    Ok(MetricsReport {
        frames: gt.len(),
        views,
        mean_psnr: mean(&psnr),
        mean_ssim: mean(&ssim),
        psnr,
        ssim,
        temporal_coherence: mean(&diffs),
        runtime_seconds: 0.0,
    })
}

pub fn evaluate_dirs(generated: &Path, gt: &Path) -> Result<MetricsReport> {
    let start = Instant::now();
    let mut report = evaluate_frames(&read_frames(generated)?, &read_frames(gt)?)?;
    report.runtime_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Compares `output_dir/renders` with the generated animation's ground truth
/// and writes `output_dir/metrics.json`.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<MetricsReport> {
    let index = super::load_index(cfg)?;
    let entry = index
        .animations
        .get(cfg.generate.animation)
        .ok_or_else(|| Error::Config("generate.animation is out of range".into()))?;
    let report = evaluate_dirs(&cfg.output_dir.join("renders"), &gt_dir(cfg, &entry.name))?;
    let path = cfg.output_dir.join("metrics.json");
    fs::write(&path, serde_json::to_vec_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(frames: usize, shift: f64) -> Vec<Vec<Image>> {
        (0..frames)
            .map(|t| {
                (0..4)
                    .map(|v| Image::constant(16, 16, [0.1 * v as f64, shift * t as f64, 0.5]))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identical_sequences_hit_sentinels() {
        let a = seq(3, 0.0);
        let r = evaluate_frames(&a, &a).unwrap();
        assert_eq!((r.frames, r.views, r.psnr.len(), r.ssim.len()), (3, 4, 12, 12));
        assert!(r.psnr.iter().all(|&p| p == metrics::PSNR_IDENTICAL));
        assert!(r.ssim.iter().all(|&s| (s - 1.0).abs() < 1e-12));
        assert_eq!(r.temporal_coherence, 0.0);
        let moving = evaluate_frames(&seq(3, 0.1), &a).unwrap();
        assert!((moving.temporal_coherence - 0.1 / 3.0).abs() < 1e-12);
        assert!(evaluate_frames(&seq(2, 0.0), &a).is_err());
    }

    #[test]
    fn frames_round_trip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let a = seq(2, 0.2);
        write_frames(dir.path(), &a).unwrap();
        let b = read_frames(dir.path()).unwrap();
        assert_eq!((b.len(), b[0].len()), (2, 4));
        assert_eq!(parse_frame_file("view03_frame120.png"), Some((3, 120)));
        let r = evaluate_dirs(dir.path(), dir.path()).unwrap();
        assert_eq!(r.mean_psnr, metrics::PSNR_IDENTICAL);
    }
}
