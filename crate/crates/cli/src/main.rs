use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gvf4d_core::pipeline::{
    cmd_align, cmd_evaluate, cmd_generate, cmd_synth, cmd_train_diffusion, cmd_train_vae, PipelineConfig,
};
use gvf4d_core::{Error, Result};
use serde_json::json;

#[derive(Parser)]
#[command(name = "gvf4d", version, about = "Gaussian variation field pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed; for `generate` it only seeds sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the directory the command writes to.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Continue training from the last checkpoint.
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the synthetic animation suite and its ground-truth renders.
    Synth,
    /// Train the variation field VAE.
    TrainVae,
    /// Encode the dataset and train the latent diffusion model.
    TrainDiffusion,
    /// Generate a variation field for the configured video.
    Generate,
    /// Compare generated renders with the ground truth.
    Evaluate,
    /// Rotate a Gaussian set to best match the reference view.
    Align,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) => 3,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let cfg = PipelineConfig::default();
            cfg.validate()?;
            cfg
        }
    };
    let generation_seed = cli.seed.unwrap_or(cfg.seed);
    if let (Some(seed), false) = (cli.seed, matches!(cli.command, Command::Generate)) {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        match cli.command {
            Command::Synth => cfg.data_dir = out.clone(),
            Command::TrainVae | Command::TrainDiffusion => cfg.checkpoint_dir = out.clone(),
            Command::Generate | Command::Evaluate | Command::Align => cfg.output_dir = out.clone(),
        }
    }
    Ok(match cli.command {
        Command::Synth => {
            let index = cmd_synth(&cfg)?;
            json!({"data_dir": cfg.data_dir, "animations": index.animations.len(), "frames": index.frames})
        }
        Command::TrainVae => {
            let trace = cmd_train_vae(&cfg, cli.resume)?;
            json!({"checkpoint_dir": cfg.checkpoint_dir, "steps": trace.len(), "last": trace.last()})
        }
        Command::TrainDiffusion => {
            let trace = cmd_train_diffusion(&cfg, cli.resume)?;
            json!({"checkpoint_dir": cfg.checkpoint_dir, "steps": trace.len(), "last": trace.last()})
        }
        Command::Generate => {
            let g = cmd_generate(&cfg, generation_seed)?;
            json!({"output_dir": cfg.output_dir, "frames": g.field.frame_count(), "segments": g.segments})
        }
        Command::Evaluate => serde_json::to_value(cmd_evaluate(&cfg)?)?,
        Command::Align => {
            let a = cmd_align(&cfg)?;
            json!({"output_dir": cfg.output_dir, "angle_deg": a.angle.to_degrees()})
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
