use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use headdet_cli::commands;
use headdet_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "headdet", version, about = "Train and run a small anchor-based head detector")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pick anchor scales from a layer's receptive field.
    DesignAnchors {
        /// Theoretical receptive field of the detection layer, in pixels.
        #[arg(long)]
        rf: usize,
        /// Cumulative stride of the detection layer.
        #[arg(long, default_value_t = 16)]
        stride: usize,
        /// Divisor from theoretical to effective receptive field.
        #[arg(long, default_value_t = 3.5)]
        shrink: f64,
        /// Number of anchor scales.
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        aspect: f64,
    },
    /// Write a synthetic scene set (PPM images plus annotation list).
    MakeSynth {
        #[command(flatten)]
        common: Common,
        /// Subdirectory of the output directory to write into.
        #[arg(long, default_value = "synth")]
        name: String,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train from an annotation list, checkpointing every epoch.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Write detections for every image of an annotation list.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Image list to run on (defaults to the test annotations).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Compute AP and the precision/recall curve.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Detection file to score; without it the checkpoint is run.
        #[arg(long)]
        detections: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    image_root: Option<String>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Comma-separated anchor side lengths.
    #[arg(long)]
    anchor_sizes: Option<String>,
}

impl Common {
    /// Defaults, then the config file, then command-line values.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in {}", p.display()))?;
        }
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        let flags = [
            ("out_dir", &self.out_dir),
            ("rng_seed", &self.seed),
            ("train_annotations", &self.train),
            ("test_annotations", &self.test),
            ("image_root", &self.image_root),
            ("checkpoint", &self.checkpoint),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("anchor_sizes", &self.anchor_sizes),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v).map_err(|m| anyhow::anyhow!("--{}: {m}", key.replace('_', "-")))?;
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::DesignAnchors { rf, stride, shrink, n, aspect } => {
            print!("{}", commands::design_anchors(rf, stride, shrink, n, aspect)?);
        }
        Command::MakeSynth { common, name, count } => {
            let mut cfg = common.resolve()?;
            if let Some(c) = count {
                cfg.synth_count = c;
            }
            let path = commands::make_synth(&cfg, &name)?;
            println!("wrote {} images, annotations in {}", cfg.synth_count, path.display());
        }
        Command::Train { common } => {
            let s = commands::train(&common.resolve()?)?;
            println!("{} steps, final loss {:.4}, checkpoint {}", s.iterations, s.final_loss, s.checkpoint.display());
        }
        Command::Detect { common, input } => {
            let path = commands::detect(&common.resolve()?, input.as_deref())?;
            println!("detections in {}", path.display());
        }
        Command::Eval { common, detections } => {
            let curve = commands::eval(&common.resolve()?, detections.as_deref())?;
            println!("AP {:.4}", curve.ap);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
