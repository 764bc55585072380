//! Command-line front end: configuration loading, the pipeline commands and
//! exit-code mapping.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;
pub mod toy;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use synthaug::datasets::Ratio;

use crate::commands::TrainPaths;
use crate::config::{Overrides, PipelineConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "synthaug", version, about = "Synthetic data augmentation for image classifiers")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set augment.ratio=0.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub ratio: Option<Ratio>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StubKind {
    T2t,
    T2i,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fine-tune the text generator on keyword-prompted captions.
    FinetuneT2t,
    /// Generate descriptions for every class label.
    GenDescriptions,
    /// Generate synthetic images into the cache and write synthetic.jsonl.
    GenImages,
    /// Mix real and synthetic images; write train.jsonl and val.jsonl.
    BuildDataset,
    /// Train one classifier per seed and write run_report.json.
    Train {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Score a checkpoint on a manifest, or captions against references.
    Evaluate {
        #[arg(long, requires = "manifest", conflicts_with_all = ["hyp", "refs"])]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// JSONL of {"image_id", "sentence"} hypotheses.
        #[arg(long, requires = "refs")]
        hyp: Option<PathBuf>,
        #[arg(long)]
        refs: Option<PathBuf>,
    },
    /// Train at ratio 0 and at each sweep ratio; write sweep.csv and sweep.png.
    Sweep,
    /// Delta table over experiment.json files given as NAME=PATH.
    Report {
        #[arg(long)]
        baseline: String,
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Write a labeled set of stub images with its manifest.
    #[command(hide = true)]
    ToyData {
        #[arg(long, value_delimiter = ',', required = true)]
        labels: Vec<String>,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "real")]
        name: String,
        #[arg(long, default_value_t = 1_000_000)]
        seed_offset: u64,
        /// Prompt template with a `{label}` placeholder, e.g. "a {label} in an unusual style".
        #[arg(long, default_value = toy::LABEL_PROMPT)]
        prompt: String,
    },
    /// Serve a stub backend over stdin/stdout.
    #[command(hide = true)]
    ServeStub {
        kind: StubKind,
        /// Exit abruptly after this many base samples.
        #[arg(long)]
        fail_after: Option<usize>,
    },
}

fn load(global: &GlobalArgs) -> Result<PipelineConfig, CliError> {
    let overrides = Overrides {
        sets: global.sets.clone(),
        output_dir: global.output_dir.clone(),
        cache_dir: global.cache_dir.clone(),
        seed: global.seed,
        ratio: global.ratio,
    };
    let cfg = PipelineConfig::load(global.config.as_deref(), &overrides)?;
    commands::echo_config(&cfg)?;
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable value"));
}

/// Runs one command. The returned error carries the process exit code.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::FinetuneT2t => print_json(&commands::cmd_finetune_t2t(&load(&cli.global)?)?),
        Command::GenDescriptions => {
            for d in commands::cmd_gen_descriptions(&load(&cli.global)?)? {
                println!("{}\t{}", d.source_label.label_text, d.text);
            }
        }
        Command::GenImages => {
            let cfg = load(&cli.global)?;
            let (synth, stats) = commands::cmd_gen_images(&cfg)?;
            println!(
                "{} synthetic image(s): {} generated, {} from cache, {} repaired",
                synth.total_images(),
                stats.generated,
                stats.cache_hits,
                stats.repaired
            );
        }
        Command::BuildDataset => {
            let built = commands::cmd_build_dataset(&load(&cli.global)?)?;
            println!("train  {}", built.train.stats());
            println!("val    {}", built.val.stats());
        }
        Command::Train { train, val, test } => {
            let r = commands::cmd_train(&load(&cli.global)?, &TrainPaths { train, val, test })?;
            println!("test accuracy {:.4} ± {:.4} over {} seed(s)", r.report.mean, r.report.std, r.report.seeds.len());
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            hyp,
            refs,
        } => {
            let cfg = load(&cli.global)?;
            match (checkpoint, manifest, hyp, refs) {
                (Some(c), Some(m), None, None) => print_json(&commands::cmd_evaluate_classifier(&cfg, &c, &m)?),
                (None, None, Some(h), Some(r)) => print_json(&commands::cmd_evaluate_captions(&cfg, &h, &r)?),
                _ => {
                    return Err(CliError::Config(
                        "evaluate needs either --checkpoint with --manifest or --hyp with --refs".into(),
                    ))
                }
            }
        }
        Command::Sweep => {
            for r in commands::cmd_sweep(&load(&cli.global)?)? {
                println!("{:<10} {:>6} val {:.4} test {:.4} {}", r.name, r.ratio, r.mean_val, r.mean_test, r.delta);
            }
        }
        Command::Report { baseline, variants } => {
            print!("{}", commands::cmd_report(&load(&cli.global)?, &baseline, &variants)?);
        }
        Command::ToyData {
            labels,
            per_class,
            size,
            out,
            name,
            seed_offset,
            prompt,
        } => {
            let path = toy::make_toy_dataset(&labels, per_class, size, &out, &name, seed_offset, &prompt)?;
            println!("{}", path.display());
        }
        Command::ServeStub { kind, fail_after } => match kind {
            StubKind::T2t => toy::serve_t2t()?,
            StubKind::T2i => toy::serve_t2i(fail_after)?,
        },
    }
    Ok(())
}
