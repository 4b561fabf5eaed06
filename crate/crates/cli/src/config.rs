//! Flat `key = value` experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use compfilt_core::codec::QpLevel;
use compfilt_core::distortion::Metric;
use compfilt_core::filter::FilterArch;
use compfilt_core::trainer::{InitSeeds, QpCoverage, QpRangePartition, TrainConfig, TrainMode};

/// Where images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// A directory of binary PGM files.
    Directory(PathBuf),
    /// The built-in two-class generator: `per_class` smooth and textured images.
    Synthetic { per_class: usize, size: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub out_dir: PathBuf,
    pub train: TrainConfig,
    pub modes: Vec<TrainMode>,
    pub block_sizes: Vec<usize>,
    pub qps: Vec<QpLevel>,
    pub coverage: QpCoverage,
    /// Seed for the train/test split and the synthetic generator.
    pub split_seed: u64,
    pub test_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic { per_class: 20, size: 64 },
            out_dir: PathBuf::from("out"),
            train: TrainConfig {
                arch: FilterArch::default().with_base_channels(8),
                ..TrainConfig::default()
            },
            modes: TrainMode::ALL.to_vec(),
            block_sizes: vec![16, 32],
            qps: QpLevel::all().to_vec(),
            coverage: QpCoverage::RoundRobin,
            split_seed: 1,
            test_fraction: 0.2,
        }
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn number<T: std::str::FromStr>(v: &str) -> Result<T> {
    v.parse().map_err(|_| anyhow!("bad number {v:?}"))
}

fn partition(v: &str) -> Result<QpRangePartition> {
    let ranges = v
        .split(';')
        .map(|r| list(r, |q| Ok(QpLevel::new(number(q)?)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(QpRangePartition::new(ranges)?)
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "dataset_dir" => self.source = DataSource::Directory(PathBuf::from(v)),
            "synthetic" => {
                let size = match &self.source {
                    DataSource::Synthetic { size, .. } => *size,
                    DataSource::Directory(_) => 64,
                };
                self.source = DataSource::Synthetic { per_class: number(v)?, size };
            }
            "synthetic_size" => match &mut self.source {
                DataSource::Synthetic { size, .. } => *size = number(v)?,
                DataSource::Directory(_) => bail!("synthetic_size needs a synthetic source"),
            },
            "out_dir" => self.out_dir = PathBuf::from(v),
            "modes" => self.modes = list(v, |m| Ok(TrainMode::parse(m)?))?,
            "block_sizes" => self.block_sizes = list(v, number)?,
            "qps" => self.qps = list(v, |q| Ok(QpLevel::new(number(q)?)?))?,
            "coverage" => {
                self.coverage = match v {
                    "all" => QpCoverage::All,
                    "round-robin" => QpCoverage::RoundRobin,
                    _ => bail!("coverage must be all or round-robin, got {v:?}"),
                }
            }
            "split_seed" => self.split_seed = number(v)?,
            "test_fraction" => self.test_fraction = number(v)?,
            "filters" => t.filters = number(v)?,
            "t0" => t.t0 = number(v)?,
            "beta" => t.beta = number(v)?,
            "drop_step" => t.drop_step = number(v)?,
            "epochs" => t.epochs = number(v)?,
            "lr" => t.lr = number(v)?,
            "batch" => t.batch = number(v)?,
            "patch" => t.patch = number(v)?,
            "metric" => t.metric = Metric::parse(v)?,
            "seed" => t.seed = number(v)?,
            "partition" => t.partition = partition(v)?,
            "base_channels" => t.arch.base_channels = number(v)?,
            "depth" => t.arch.depth = number(v)?,
            "res_blocks" => t.arch.res_blocks = number(v)?,
            "channels" => t.arch.image_channels = number(v)?,
            "init" => {
                t.init = match v {
                    "distinct" => InitSeeds::Distinct,
                    "shared" => InitSeeds::Shared,
                    _ => bail!("init must be distinct or shared, got {v:?}"),
                }
            }
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    /// Parses config text over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", n + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Training settings for `mode`. `filters` sizes competitive banks; an
    /// independent bank always has one filter per QP range.
    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        let filters = match mode {
            TrainMode::Independent => self.train.partition.len(),
            _ => self.train.filters,
        };
        TrainConfig {
            mode,
            filters,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Directory(d) = &self.source {
            if !d.is_dir() {
                bail!("dataset directory {} does not exist", d.display());
            }
        }
        if self.modes.is_empty() {
            bail!("no training modes requested");
        }
        if self.qps.is_empty() {
            bail!("empty QP list");
        }
        if self.block_sizes.contains(&0) {
            bail!("block sizes must be positive");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bail!("test_fraction must lie in (0, 1), got {}", self.test_fraction);
        }
        for &mode in &self.modes {
            self.train_config(mode)
                .validate()
                .with_context(|| format!("{mode} mode"))?;
        }
        Ok(())
    }
}
