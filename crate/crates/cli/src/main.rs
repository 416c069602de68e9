use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use grasp_core::anchors::mean_anchor;
use grasp_core::data::{generate_dataset, read_manifest, write_dataset, Scene, SynthConfig};
use grasp_core::geometry::{angle_diff, is_success, oriented_iou, GraspRect};
use grasp_core::model::ScoreMode;
use grasp_core::train::{
    cross_validate, evaluate, format_ablation, parse_flat, run_ablation, AblationKind, Checkpoint, RunConfig,
    TrainOptions, EVAL_ANGLE_THR, EVAL_IOU_THR,
};

#[derive(Parser)]
#[command(
    name = "grasp",
    version,
    about = "Oriented-anchor grasp detection with a graspability scorer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Flat key-value config; defaults to the desk preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Held-out manifest evaluated every `eval_period` iterations.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// JSON-lines metrics file.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Top-1 accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "scorer")]
        mode: ScoreMode,
        #[arg(long, default_value_t = EVAL_ANGLE_THR)]
        angle_thr: f64,
        #[arg(long, default_value_t = EVAL_IOU_THR)]
        iou_thr: f64,
    },
    /// Object-wise cross-validation.
    Cv {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and compare variants of one design choice.
    Ablate {
        #[arg(long)]
        name: AblationKind,
        /// Training manifest; a synthetic desk set is generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated anchor sizes such as `8x4,16x8`.
        #[arg(long, default_value = "8x4,16x8,20x10")]
        sizes: String,
    },
    /// Mean ground-truth box of a dataset.
    MeanAnchor {
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest stem, e.g. `train` or `eval`.
        #[arg(long, default_value = "train")]
        name: String,
    },
    /// Rotated IoU and angle difference of two grasps.
    Iou {
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
}

fn load_run(config: Option<&Path>) -> Result<RunConfig> {
    Ok(match config {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::desk(),
    })
}

fn load_scenes(path: &Path) -> Result<Vec<Scene>> {
    let scenes = read_manifest(path).with_context(|| format!("reading manifest {}", path.display()))?;
    if scenes.is_empty() {
        bail!("{} holds no scenes", path.display());
    }
    Ok(scenes)
}

fn parse_sizes(s: &str) -> Result<Vec<(f64, f64)>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (w, h) = p
                .trim()
                .split_once('x')
                .with_context(|| format!("bad size {p:?}, expected WxH"))?;
            Ok((w.parse()?, h.parse()?))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            data,
            config,
            out,
            eval,
            metrics,
        } => {
            let run = load_run(config.as_deref())?;
            let scenes = load_scenes(&data)?;
            let eval_scenes = match eval {
                Some(p) => load_scenes(&p)?,
                None => Vec::new(),
            };
            let mut sink = match metrics {
                Some(p) => Some(BufWriter::new(File::create(&p)?)),
                None => None,
            };
            let diagnostic = out.with_extension("diverged.ckpt");
            let outcome = grasp_core::train::train(
                &scenes,
                &run,
                TrainOptions {
                    eval: &eval_scenes,
                    metrics: sink.as_mut().map(|w| w as &mut dyn Write),
                    diagnostic: Some(diagnostic),
                },
            )?;
            if let Some(w) = sink.as_mut() {
                w.flush()?;
            }
            outcome.checkpoint.save(&out)?;
            if let Some(m) = outcome.history.last() {
                println!("{}", serde_json::to_string(m)?);
            }
            println!("wrote {}", out.display());
        }
        Command::Eval {
            ckpt,
            data,
            mode,
            angle_thr,
            iou_thr,
        } => {
            let model = Checkpoint::load(&ckpt)?.to_model()?;
            let scenes = load_scenes(&data)?;
            let acc = evaluate(&model, &scenes, mode, angle_thr, iou_thr)?;
            println!("accuracy {acc:.4} ({} scenes, mode {mode:?})", scenes.len());
        }
        Command::Cv {
            data,
            folds,
            config,
            seed,
        } => {
            let run = load_run(config.as_deref())?;
            let report = cross_validate(&load_scenes(&data)?, folds, &run, seed)?;
            print!("{}", report.to_table());
        }
        Command::Ablate {
            name,
            data,
            eval,
            config,
            sizes,
        } => {
            let run = load_run(config.as_deref())?;
            let synth = SynthConfig {
                image_size: run.model.image_size,
                ..SynthConfig::default()
            };
            let train_set = match data {
                Some(p) => load_scenes(&p)?,
                None => generate_dataset(&synth, 500, 1)?,
            };
            let eval_set = match eval {
                Some(p) => load_scenes(&p)?,
                None => generate_dataset(&synth, 100, 2)?,
            };
            let rows = run_ablation(name, &train_set, &eval_set, &run, &parse_sizes(&sizes)?)?;
            print!("{}", format_ablation(&rows));
        }
        Command::MeanAnchor { data } => {
            let scenes = load_scenes(&data)?;
            let gts: Vec<GraspRect> = scenes.iter().flat_map(|s| s.grasps.iter().copied()).collect();
            let (w, h) = mean_anchor(&gts)?;
            println!("mean box {w:.4} x {h:.4} over {} grasps", gts.len());
        }
        Command::Synth {
            config,
            count,
            out,
            seed,
            name,
        } => {
            let cfg: SynthConfig = match config {
                Some(p) => parse_flat(&std::fs::read_to_string(&p)?)?,
                None => SynthConfig::default(),
            };
            let scenes = generate_dataset(&cfg, count, seed)?;
            let manifest = write_dataset(&out, &name, &scenes)?;
            println!("wrote {count} scenes to {}", manifest.display());
        }
        Command::Iou { a, b } => {
            let (a, b) = (GraspRect::parse_csv(&a)?, GraspRect::parse_csv(&b)?);
            let iou = oriented_iou(&a, &b);
            let d = angle_diff(a.theta, b.theta);
            let ok = is_success(&a, &[b], EVAL_ANGLE_THR, EVAL_IOU_THR);
            println!("iou {iou:.6} angle_diff {d:.6} success {ok}");
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
