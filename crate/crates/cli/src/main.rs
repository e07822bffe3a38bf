//! `fdg`: data generation, augmentation previews, federated training,
//! evaluation and result tables for frequency-augmented federated
//! segmentation experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fdg_core::data::{load_external_dataset, read_image, DomainId};
use fdg_core::pipeline::{
    self, augment_preview, evaluate, load_corpus, select_samples, summarize_eval, train_to_dir,
    write_eval_file, write_preview, write_report_csv, ExperimentConfig, SplitPart, EVAL_FILE,
};
use fdg_core::{MixVariant, ModelParams};

#[derive(Parser)]
#[command(name = "fdg", version, about = "Frequency-augmented federated segmentation experiments")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML). Every key has a default.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the master seed (the corpus seed for `gen-data`).
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides any config key, e.g. `--set threshold_mode=soft`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    overrides: Vec<(String, String)>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic multi-domain corpus to image/mask files plus a manifest.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write the five-panel comparison: source, target, DFT-only, DFT+ST, DFT+HT.
    Augment {
        /// Image whose phase is kept (PPM or PGM).
        #[arg(long)]
        source: PathBuf,
        /// Image whose amplitude is mixed in.
        #[arg(long)]
        target: PathBuf,
        /// Output directory for the five panels.
        #[arg(short, long)]
        out: PathBuf,
        /// Mixing weight in (0, 1].
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Relative size of the low-frequency band.
        #[arg(long, default_value_t = fdg_core::augment::DEFAULT_BETA)]
        beta: f64,
        /// Threshold fraction of the per-channel peak amplitude.
        #[arg(long, default_value_t = fdg_core::threshold::DEFAULT_ALPHA)]
        alpha: f64,
        /// `literal` or `preserve-outside-mask`.
        #[arg(long, default_value = "literal")]
        variant: MixVariant,
    },
    /// Run federated training; writes checkpoint, round log and resolved config.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (defaults to the config's `output_dir`).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint; writes per-image metrics and a mean row as CSV.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Model checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory (defaults to the config's `output_dir`).
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Domains to score (defaults to the config's held-out domains).
        #[arg(long, value_delimiter = ',')]
        domains: Vec<DomainId>,
        /// Part of each domain's train/test split to score.
        #[arg(long, default_value = "all")]
        split: SplitPart,
        /// Score an `images/` + `masks/` directory instead of the configured corpus.
        #[arg(long)]
        external: Option<PathBuf>,
    },
    /// Join evaluation CSVs into a methods-by-metrics table per domain.
    Report {
        /// Output directory for `report.csv` and `report.md`.
        #[arg(short, long)]
        out: PathBuf,
        /// Evaluation files as `LABEL=PATH`.
        #[arg(required = true, value_parser = parse_key_value)]
        inputs: Vec<(String, String)>,
    },
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(format!("expected KEY=VALUE, got `{s}`")),
    }
}

impl ConfigArgs {
    fn load(&self, required: bool) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        let cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides)
                .with_context(|| format!("loading config {}", path.display()))?,
            None if required => bail!("--config is required for this command"),
            None => ExperimentConfig::from_toml("", &overrides)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, out } => {
            let mut cfg = config.load(false)?;
            // For data generation the seed flag selects the corpus.
            if let Some(seed) = config.seed {
                cfg.data_seed = seed;
            }
            let manifest = pipeline::gen_data(&cfg, &out)?;
            println!("{}", manifest.display());
        }
        Command::Augment {
            source,
            target,
            out,
            lambda,
            beta,
            alpha,
            variant,
        } => {
            let src = read_image(&source).with_context(|| format!("reading {}", source.display()))?;
            let tgt = read_image(&target).with_context(|| format!("reading {}", target.display()))?;
            let preview = augment_preview(&src, &tgt, lambda, beta, alpha, variant)?;
            for path in write_preview(&preview, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Train { config, out } => {
            let mut cfg = config.load(true)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let out = cfg.output_dir.clone();
            log::info!("training {} rounds on clients {:?}", cfg.rounds, cfg.clients);
            let outcome = train_to_dir(&cfg, &out)?;
            for record in &outcome.records {
                log::info!("round {} checksum {} ({:?})", record.round, record.checksum, record.wall_time);
            }
            println!("{}", out.join(pipeline::CHECKPOINT_FILE).display());
        }
        Command::Evaluate {
            config,
            checkpoint,
            out,
            domains,
            split,
            external,
        } => {
            let cfg = config.load(true)?;
            let params = ModelParams::load(&checkpoint)
                .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
            let samples = match &external {
                Some(dir) => load_external_dataset(dir)?,
                None => {
                    let domains = if domains.is_empty() { cfg.held_out.clone() } else { domains };
                    if domains.is_empty() {
                        bail!("no domains to evaluate: pass --domains or set held_out");
                    }
                    select_samples(&cfg, &load_corpus(&cfg)?, &domains, split)?
                }
            };
            let rows = evaluate(&params, &samples)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.clone()).join(EVAL_FILE);
            write_eval_file(&rows, &path)?;
            log::info!("mean IoU {:.4} over {} images", pipeline::mean_iou(&rows), rows.len());
            println!("{}", path.display());
        }
        Command::Report { out, inputs } => {
            let mut rows = Vec::new();
            for (label, path) in &inputs {
                rows.extend(summarize_eval(label, Path::new(path))?);
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_report_csv(&rows, &out.join("report.csv"))?;
            let table = pipeline::render_report(&rows);
            std::fs::write(out.join("report.md"), &table)
                .with_context(|| format!("writing {}", out.join("report.md").display()))?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
