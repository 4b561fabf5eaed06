use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use compfilt_cli::config::{DataSource, ExperimentConfig};
use compfilt_cli::experiment::{anchor_report, bank_path, evaluate_bank, load_dataset, run_experiment, train_mode};
use compfilt_cli::manifest::write_synthetic;
use compfilt_core::bank::{FilterBank, Routing};
use compfilt_core::distortion::Metric;
use compfilt_core::eval::{usage_csv, usage_stats, CodedSet};
use compfilt_core::trainer::TrainMode;

#[derive(Parser)]
#[command(name = "compfilt", version, about = "Competitive training and evaluation of post-processing filter banks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (key = value lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training mode(s): single, independent, joint, hard-min
    #[arg(long, value_delimiter = ',')]
    mode: Vec<String>,
    /// Block size(s) for block-wise selection
    #[arg(long = "block-size", value_delimiter = ',')]
    block_size: Vec<usize>,
    /// Distortion metric: mse or proxy
    #[arg(long)]
    metric: Option<String>,
    /// Training seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use N synthetic images per class instead of a dataset directory
    #[arg(long)]
    synthetic: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the requested modes and save their banks
    Train(Common),
    /// Evaluate a saved bank on the test split
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bank: PathBuf,
    },
    /// Train all requested modes and write the full comparison
    Compare(Common),
    /// Per-QP filter usage of a saved bank under block-wise selection
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bank: PathBuf,
    },
    /// Write the synthetic two-class dataset as PGM files
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Images per class
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if !self.mode.is_empty() {
            cfg.modes = self.mode.iter().map(|m| TrainMode::parse(m)).collect::<Result<_, _>>()?;
        }
        if !self.block_size.is_empty() {
            cfg.block_sizes = self.block_size.clone();
        }
        if let Some(m) = &self.metric {
            cfg.train.metric = Metric::parse(m)?;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(n) = self.synthetic {
            let size = match cfg.source {
                DataSource::Synthetic { size, .. } => size,
                DataSource::Directory(_) => 64,
            };
            cfg.source = DataSource::Synthetic { per_class: n, size };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn mode_of(bank: &FilterBank) -> TrainMode {
    match bank.routing {
        Routing::Competitive => TrainMode::Joint,
        Routing::Single => TrainMode::Single,
        Routing::QpRanges(_) => TrainMode::Independent,
    }
}

fn test_set(cfg: &ExperimentConfig) -> Result<CodedSet> {
    let data = load_dataset(cfg)?;
    Ok(CodedSet::new(data.test_images(), &cfg.qps)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve()?;
            let data = load_dataset(&cfg)?;
            for &mode in &cfg.modes {
                let (bank, log) = train_mode(&cfg, &data, mode)?;
                let last: Vec<String> = log
                    .epochs
                    .last()
                    .map(|e| e.mean_loss.iter().map(|l| format!("{l:.3e}")).collect())
                    .unwrap_or_default();
                println!(
                    "{mode}: {} filter(s), final mean losses [{}] -> {}",
                    bank.len(),
                    last.join(", "),
                    bank_path(&cfg.out_dir, mode).display()
                );
            }
        }
        Command::Eval { common, bank } => {
            let cfg = common.resolve()?;
            let b = FilterBank::load(&bank).with_context(|| format!("loading {}", bank.display()))?;
            let set = test_set(&cfg)?;
            let mut report = anchor_report(&cfg, &set)?;
            let mode = cfg.modes.first().copied().filter(|_| !common.mode.is_empty()).unwrap_or(mode_of(&b));
            evaluate_bank(&cfg, &set, &mut report, mode, &b)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            report.write_to(&cfg.out_dir)?;
            print!("{}", report.summary());
        }
        Command::Compare(common) => {
            let cfg = common.resolve()?;
            let report = run_experiment(&cfg)?;
            print!("{}", report.summary());
        }
        Command::Stats { common, bank } => {
            let cfg = common.resolve()?;
            let b = FilterBank::load(&bank).with_context(|| format!("loading {}", bank.display()))?;
            let set = test_set(&cfg)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            for &bs in &cfg.block_sizes {
                let table = usage_stats(&set, &b, bs, cfg.train.metric)?;
                println!("block size {bs}");
                for (qp, row) in table.qps.iter().zip(table.fractions()) {
                    let cells: Vec<String> = row.iter().map(|f| format!("{f:.3}")).collect();
                    println!("  QP {:>2}: {}", qp.value(), cells.join(" "));
                }
                let path = cfg.out_dir.join(format!("usage_b{bs}.csv"));
                std::fs::write(&path, usage_csv(&table)).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Synth { out, count, size, seed } => {
            let written = write_synthetic(&out, count, size, seed)?;
            println!("wrote {} images to {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
