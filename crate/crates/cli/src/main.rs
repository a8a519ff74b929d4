use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use lfsal_core::bench::bench;
use lfsal_core::data::synth::{synth_scene, write_synth_dataset, write_synth_rgb_dataset};
use lfsal_core::data::{ingest_dataset, load_dataset, split_kfold, DatasetIndex};
use lfsal_core::detector::Profile;
use lfsal_core::lightfield::io::{read_light_field, write_gray_png, LayoutKind};
use lfsal_core::metrics::ThresholdMode;
use lfsal_core::pipeline::{InputMode, Model, Pipeline, FULL_SPATIAL};
use lfsal_core::tensor::ops::resize_bilinear;
use lfsal_core::train::{evaluate_model, train_with, TrainConfig};

#[derive(Parser)]
#[command(name = "lfsal", version, about = "Light-field salient object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pair lf/ and gt/ under a dataset root and list the entries.
    Ingest {
        root: PathBuf,
        /// Write the index as tab-separated text.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign dataset entries to cross-validation folds.
    Split {
        root: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write `fold<TAB>id` lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint.
    Train(Box<TrainArgs>),
    /// Write the saliency map of one light field as an 8-bit PNG.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Micro-lens PNG (with sidecar) or view directory.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Side of the written PNG; 0 keeps the model's own output size.
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// Score a checkpoint on a dataset and write the metrics CSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        root: PathBuf,
        #[arg(long, default_value = "adaptive")]
        mode: ThresholdMode,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        fold: FoldArgs,
    },
    /// Time full-size forward passes and count multiply-accumulates.
    Bench {
        /// Weights to time; fresh weights of --profile when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "full")]
        profile: Profile,
        #[arg(long, default_value_t = FULL_SPATIAL)]
        spatial: usize,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic light-field dataset.
    Synth {
        root: PathBuf,
        #[arg(long, default_value_t = 40)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "mla", value_parser = parse_layout)]
        layout: LayoutKind,
        /// Also write plain RGB saliency samples under <root>/rgb.
        #[arg(long)]
        rgb: bool,
    },
}

#[derive(Args)]
struct FoldArgs {
    /// Use only this fold's entries (its test part, or its train part when training).
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    root: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Key-value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    fold: FoldArgs,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    stage1_epochs: Option<String>,
    #[arg(long)]
    stage2_epochs: Option<String>,
    #[arg(long)]
    stage3_epochs: Option<String>,
    #[arg(long)]
    alpha_s: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    augment_rotation: Option<String>,
    #[arg(long)]
    augment_photometric: Option<String>,
    #[arg(long)]
    spatial: Option<String>,
    #[arg(long)]
    input_mode: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long)]
    clip_norm: Option<String>,
    #[arg(long)]
    stage1_images: Option<String>,
    #[arg(long)]
    epoch_passes: Option<String>,
    #[arg(long)]
    lr_final_ratio: Option<String>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    quiet: bool,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        let overrides = [
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("weight_decay", &self.weight_decay),
            ("batch_size", &self.batch_size),
            ("stage1_epochs", &self.stage1_epochs),
            ("stage2_epochs", &self.stage2_epochs),
            ("stage3_epochs", &self.stage3_epochs),
            ("alpha_s", &self.alpha_s),
            ("seed", &self.seed),
            ("profile", &self.profile),
            ("augment_rotation", &self.augment_rotation),
            ("augment_photometric", &self.augment_photometric),
            ("spatial", &self.spatial),
            ("input_mode", &self.input_mode),
            ("threads", &self.threads),
            ("clip_norm", &self.clip_norm),
            ("stage1_images", &self.stage1_images),
            ("epoch_passes", &self.epoch_passes),
            ("lr_final_ratio", &self.lr_final_ratio),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_layout(s: &str) -> std::result::Result<LayoutKind, String> {
    match s {
        "mla" => Ok(LayoutKind::Mla),
        "sai-dir" => Ok(LayoutKind::SaiDir),
        other => Err(format!("unknown layout `{other}` (mla or sai-dir)")),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// The dataset restricted to one fold, or all of it.
fn select(index: DatasetIndex, fold: &FoldArgs, train_part: bool) -> Result<DatasetIndex> {
    let Some(f) = fold.fold else {
        return Ok(index);
    };
    let folds = split_kfold(&index.ids(), fold.k, fold.split_seed)?;
    let Some(chosen) = folds.get(f) else {
        bail!("fold {f} out of range for k = {}", fold.k);
    };
    Ok(index.subset(if train_part { &chosen.train } else { &chosen.test }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { root, out } => {
            let index = ingest_dataset(&root)?;
            eprintln!("{} pairs, layout {}", index.len(), index.layout_kind.as_str());
            write_or_print(out.as_deref(), &index.to_tsv())
        }
        Command::Split { root, k, seed, out } => {
            let index = ingest_dataset(&root)?;
            let ids = index.ids();
            let folds = split_kfold(&ids, k, seed)?;
            let mut text = String::new();
            for (f, fold) in folds.iter().enumerate() {
                for &i in &fold.test {
                    text.push_str(&format!("{f}\t{}\n", ids[i]));
                }
            }
            write_or_print(out.as_deref(), &text)
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            let index = select(ingest_dataset(&args.root)?, &args.fold, true)?;
            let samples = load_dataset(&index)?;
            eprintln!("training on {} light fields", samples.len());
            let quiet = args.quiet;
            let outcome = train_with(&cfg, &samples, |e| {
                if !quiet {
                    eprintln!(
                        "epoch {:>3}  stage {}  loss {:.6}  ({:.1}s)",
                        e.epoch, e.stage, e.mean_loss, e.seconds
                    );
                }
            })?;
            outcome.model.save(&args.out)?;
            if let Some(log) = &args.log {
                outcome.write_log_csv(log)?;
            }
            Ok(())
        }
        Command::Predict { checkpoint, input, out, size } => {
            let model = Model::load(&checkpoint)?;
            let lf = read_light_field(&input)?;
            let map = model.predict(&lf)?.to_tensor();
            let map = if size == 0 || map.shape()[1..] == [size, size] {
                map
            } else {
                resize_bilinear(&map, size, size)?.map(|v| v.clamp(0.0, 1.0))
            };
            write_gray_png(&out, &map)?;
            Ok(())
        }
        Command::Evaluate { checkpoint, root, mode, out, fold } => {
            let model = Model::load(&checkpoint)?;
            let index = select(ingest_dataset(&root)?, &fold, false)?;
            let samples = load_dataset(&index)?;
            let report = evaluate_model(&model, &samples, mode)?;
            print!("{}", report.to_key_values());
            if let Some(p) = out {
                report.write_csv(&p)?;
            }
            Ok(())
        }
        Command::Bench { checkpoint, profile, spatial, runs, warmup, threads, out } => {
            let model = match checkpoint {
                Some(p) => {
                    let m = Model::load(&p)?;
                    // the weights do not depend on the input size
                    let pipeline = Pipeline::new(m.pipeline.detector.profile, spatial, m.pipeline.mode)?;
                    Model { pipeline, params: m.params }
                }
                None => Model::new(profile, spatial, InputMode::LightField, 0)?,
            };
            let lf = synth_scene(spatial, 0, 0)?.lf;
            let report = bench(&model, &lf, runs, warmup, threads)?;
            write_or_print(out.as_deref(), &report.to_key_values())
        }
        Command::Synth { root, count, size, seed, layout, rgb } => {
            let ids = write_synth_dataset(&root, count, size, seed, layout)?;
            if rgb {
                write_synth_rgb_dataset(&root.join("rgb"), count, size, seed)?;
            }
            eprintln!("wrote {} light fields under {}", ids.len(), root.display());
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
