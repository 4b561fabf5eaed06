//! Training, evaluation and report writing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use compfilt_core::bank::FilterBank;
use compfilt_core::eval::{
    bd_rate, bd_rate_json, build_rd_curve, evaluate_blockwise, rd_curves_csv, usage_csv, BdRateEntry, CodedSet,
    CurveMode, RdCurve, UsageTable,
};
use compfilt_core::trainer::{build_training_set, train, TrainMode, TrainingLog};

use crate::config::{DataSource, ExperimentConfig};
use crate::manifest::{ingest, synthetic, Dataset};

pub const FAILURE_MARKER: &str = "FAILED";

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.source {
        DataSource::Directory(d) => ingest(d, cfg.train.patch, cfg.test_fraction, cfg.split_seed),
        DataSource::Synthetic { per_class, size } => synthetic(*per_class, *size, cfg.test_fraction, cfg.split_seed),
    }
}

pub fn bank_path(out: &Path, mode: TrainMode) -> PathBuf {
    out.join(format!("bank_{mode}.fbnk"))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Trains one mode on the training split and saves the bank and its log.
pub fn train_mode(cfg: &ExperimentConfig, data: &Dataset, mode: TrainMode) -> Result<(FilterBank, TrainingLog)> {
    let samples = build_training_set(&data.train_images(), &cfg.qps, cfg.train.patch, cfg.coverage, cfg.train.seed)?;
    let tc = cfg.train_config(mode);
    let out = train(&tc, &samples).with_context(|| format!("training {mode} bank"))?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    out.bank.save(&bank_path(&cfg.out_dir, mode))?;
    write(&cfg.out_dir.join(format!("train_log_{mode}.csv")), out.log.to_csv())?;
    Ok((out.bank, out.log))
}

/// Everything an experiment produced so far.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub curves: Vec<RdCurve>,
    pub bd_rates: Vec<BdRateEntry>,
    /// Competitive-bank usage per (mode, block size).
    pub usage: Vec<(String, UsageTable)>,
    /// Table rows: method description and BD-rate against the anchor.
    pub rows: Vec<(String, f64)>,
}

impl Report {
    fn push_curve(&mut self, curve: RdCurve, row: String) -> Result<()> {
        let anchor = &self.curves[0];
        let bd = bd_rate(anchor, &curve).with_context(|| format!("BD-rate of {}", curve.label))?;
        self.bd_rates.push(BdRateEntry {
            anchor: anchor.label.clone(),
            test: curve.label.clone(),
            bd_rate: bd,
        });
        self.rows.push((row, bd));
        self.curves.push(curve);
        Ok(())
    }

    /// Human-readable table of BD-rates.
    pub fn summary(&self) -> String {
        let mut s = String::from("Comparison against the unfiltered codec (BD-rate, negative is better)\n\n");
        let width = self.rows.iter().map(|(r, _)| r.len()).max().unwrap_or(0).max(6);
        writeln!(s, "{:<width$}  BD-rate (%)", "method").unwrap();
        for (r, bd) in &self.rows {
            writeln!(s, "{r:<width$}  {bd:+.3}").unwrap();
        }
        s
    }

    /// Writes every artifact the report holds to `out`.
    pub fn write_to(&self, out: &Path) -> Result<()> {
        write(&out.join("rd_curves.csv"), rd_curves_csv(&self.curves))?;
        write(&out.join("bd_rate.json"), bd_rate_json(&self.bd_rates))?;
        if let Some((_, first)) = self.usage.first() {
            write(&out.join("usage.csv"), usage_csv(first))?;
        }
        for (name, table) in &self.usage {
            write(&out.join(format!("usage_{name}.csv")), usage_csv(table))?;
        }
        write(&out.join("summary.txt"), self.summary())
    }
}

fn method_name(mode: TrainMode, m: usize) -> String {
    match mode {
        TrainMode::Single => "single filter".into(),
        TrainMode::Independent => format!("{m} independent filters"),
        TrainMode::Joint => format!("{m} joint filters"),
        TrainMode::HardMin => format!("{m} hard-min filters"),
    }
}

/// Adds the whole-image curve and, for multi-filter banks, one block-wise
/// curve per block size.
pub fn evaluate_bank(
    cfg: &ExperimentConfig,
    set: &CodedSet,
    report: &mut Report,
    mode: TrainMode,
    bank: &FilterBank,
) -> Result<()> {
    let metric = cfg.train.metric;
    let name = method_name(mode, bank.len());
    let whole = build_rd_curve(&format!("{mode}/whole-image"), set, Some(bank), CurveMode::WholeImage, metric)?;
    report.push_curve(whole, name.clone())?;
    if bank.len() < 2 {
        return Ok(());
    }
    for &b in &cfg.block_sizes {
        let label = format!("{mode}/{}", CurveMode::Blockwise { block_size: b }.name());
        let run = evaluate_blockwise(&label, set, bank, b, metric)?;
        report.push_curve(run.curve, format!("{name} (block-wise, {b}x{b})"))?;
        if matches!(mode, TrainMode::Joint | TrainMode::HardMin) {
            report.usage.push((format!("{mode}_b{b}"), run.usage));
        }
    }
    Ok(())
}

pub fn anchor_report(cfg: &ExperimentConfig, set: &CodedSet) -> Result<Report> {
    let anchor = build_rd_curve("anchor", set, None, CurveMode::Anchor, cfg.train.metric)?;
    Ok(Report {
        curves: vec![anchor],
        ..Report::default()
    })
}

fn run_into(cfg: &ExperimentConfig, report: &mut Report) -> Result<()> {
    let data = load_dataset(cfg)?;
    write(&cfg.out_dir.join("manifest.csv"), data.manifest.to_csv())?;
    let set = CodedSet::new(data.test_images(), &cfg.qps)?;
    *report = anchor_report(cfg, &set)?;
    for &mode in &cfg.modes {
        let (bank, _) = train_mode(cfg, &data, mode)?;
        evaluate_bank(cfg, &set, report, mode, &bank)?;
    }
    Ok(())
}

/// Trains every requested mode and writes curves, BD-rates, usage and a
/// summary to `cfg.out_dir`. On error, whatever was finished is still written
/// along with a `FAILED` file holding the error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let marker = cfg.out_dir.join(FAILURE_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).with_context(|| format!("removing {}", marker.display()))?;
    }
    let mut report = Report::default();
    let result = run_into(cfg, &mut report);
    if !report.curves.is_empty() {
        report.write_to(&cfg.out_dir)?;
    }
    match result {
        Ok(()) => Ok(report),
        Err(e) => {
            write(&marker, format!("{e:#}\n"))?;
            Err(e)
        }
    }
}
