//! Training loops for the joint, hard-min, single and independent modes.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::bank::{FilterBank, Routing};
use crate::codec::QP_VALUES;
use crate::distortion::{distortion_and_grad, tensor_distortion, Metric};
use crate::error::{Error, Result};
use crate::filter::{filter_backward, filter_forward, filter_forward_traced, FilterParams, QpIndicator};
use crate::nn::{adam_step, AdamConfig, AdamState, LayerGrads};
use crate::rng::{derive_seed, seeded};
use crate::trainer::config::{TrainConfig, TrainMode, HARD_MIN_TEMPERATURE};
use crate::trainer::dataset::TrainingSample;
use crate::trainer::schedule::{alpha_weights, argmin, temperature, AssignmentWeights};

/// Result of one optimization step over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    /// `losses[i][j]`: distortion of filter j on sample i before the update.
    pub losses: Vec<Vec<f64>>,
    pub alphas: Vec<AssignmentWeights>,
    /// Batch mean of the alpha-weighted loss.
    pub weighted_loss: f64,
}

/// Fresh Adam state for every filter in `bank`.
pub fn optimizers_for(bank: &FilterBank, lr: f64) -> Vec<AdamState> {
    bank.filters.iter().map(|f| optimizer_for(f, lr)).collect()
}

fn optimizer_for(f: &FilterParams, lr: f64) -> AdamState {
    let config = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    AdamState::new(config, &f.tensor_sizes(), f.tensor_labels())
}

struct SampleGrads {
    losses: Vec<f64>,
    alpha: AssignmentWeights,
    grads: Vec<Option<Vec<LayerGrads>>>,
}

fn sample_pass(
    sample: &TrainingSample,
    filters: &[FilterParams],
    t: f64,
    batch_len: usize,
    metric: Metric,
) -> Result<SampleGrads> {
    let x = sample.x.to_tensor();
    let xhat = sample.xhat.to_tensor();
    let q = QpIndicator::new(sample.qp);

    let mut traces = Vec::with_capacity(filters.len());
    let mut losses = Vec::with_capacity(filters.len());
    let mut loss_grads = Vec::with_capacity(filters.len());
    for f in filters {
        let (out, trace) = filter_forward_traced(&xhat, &q, f)?;
        let (loss, g) = distortion_and_grad(&out, &x, metric)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss {loss} for sample from image {} at qp {} on filter {}",
                sample.source, sample.qp, f.id
            )));
        }
        traces.push(trace);
        losses.push(loss);
        loss_grads.push(g);
    }

    // alpha is a constant of the step: no gradient flows through the softmax
    let alpha = alpha_weights(&losses, t)?;
    let mut grads = Vec::with_capacity(filters.len());
    for (j, f) in filters.iter().enumerate() {
        let weight = alpha.values()[j] / batch_len as f64;
        if weight == 0.0 {
            // an exactly-zero weight contributes an exactly-zero gradient
            grads.push(None);
            continue;
        }
        let mut up = loss_grads[j].clone();
        up.scale(weight);
        grads.push(Some(filter_backward(&traces[j], f, &up)?));
    }
    Ok(SampleGrads {
        losses,
        alpha,
        grads,
    })
}

/// One step of the alpha-weighted objective on `filters`: per-sample losses for
/// every filter, softmax weights at temperature `t`, then one Adam update per
/// filter on the batch mean of `sum_j alpha_ij * grad l_ij`.
pub fn train_filters_step(
    batch: &[&TrainingSample],
    filters: &mut [FilterParams],
    t: f64,
    optimizers: &mut [AdamState],
    metric: Metric,
) -> Result<StepOutcome> {
    if batch.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    if optimizers.len() != filters.len() {
        return Err(Error::shape(format!(
            "{} optimizers for {} filters",
            optimizers.len(),
            filters.len()
        )));
    }
    let shared: &[FilterParams] = filters;
    let passes: Vec<SampleGrads> = batch
        .par_iter()
        .map(|s| sample_pass(s, shared, t, batch.len(), metric))
        .collect::<Result<Vec<_>>>()?;

    for f in filters.iter_mut() {
        f.zero_grad();
    }
    // fixed sample order keeps the reduction deterministic
    for p in &passes {
        for (f, g) in filters.iter_mut().zip(&p.grads) {
            if let Some(g) = g {
                f.accumulate_grads(g)?;
            }
        }
    }
    for (f, opt) in filters.iter_mut().zip(optimizers.iter_mut()) {
        let mut tensors = f.tensors_mut();
        adam_step(&mut tensors, opt)?;
    }

    let weighted_loss = passes
        .iter()
        .map(|p| {
            p.losses
                .iter()
                .zip(p.alpha.values())
                .map(|(l, a)| l * a)
                .sum::<f64>()
        })
        .sum::<f64>()
        / batch.len() as f64;
    Ok(StepOutcome {
        losses: passes.iter().map(|p| p.losses.clone()).collect(),
        alphas: passes.into_iter().map(|p| p.alpha).collect(),
        weighted_loss,
    })
}

/// [`train_filters_step`] over every filter of `bank`.
pub fn joint_train_step(
    batch: &[&TrainingSample],
    bank: &mut FilterBank,
    t: f64,
    optimizers: &mut [AdamState],
    metric: Metric,
) -> Result<StepOutcome> {
    train_filters_step(batch, &mut bank.filters, t, optimizers, metric)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Assignment temperature; `None` in modes without competition.
    pub temperature: Option<f64>,
    /// Mean pre-update loss of each filter over the samples it saw.
    pub mean_loss: Vec<f64>,
    /// Fraction of samples assigned to each filter (argmin loss, or QP routing).
    pub share: Vec<f64>,
    /// `qp_histogram[q][j]`: samples at QP index q assigned to filter j.
    pub qp_histogram: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingLog {
    pub mode: TrainMode,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// CSV with columns `epoch, temperature, loss_0.., share_0..`.
    pub fn to_csv(&self) -> String {
        let m = self.epochs.first().map_or(0, |e| e.mean_loss.len());
        let mut s = String::from("epoch,temperature");
        for j in 0..m {
            write!(s, ",loss_{j}").unwrap();
        }
        for j in 0..m {
            write!(s, ",share_{j}").unwrap();
        }
        s.push('\n');
        for e in &self.epochs {
            write!(s, "{}", e.epoch).unwrap();
            match e.temperature {
                Some(t) => write!(s, ",{t:e}").unwrap(),
                None => s.push(','),
            }
            for v in e.mean_loss.iter().chain(&e.share) {
                write!(s, ",{v:e}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub bank: FilterBank,
    pub log: TrainingLog,
}

struct EpochStats {
    loss_sum: Vec<f64>,
    loss_count: Vec<usize>,
    assigned: Vec<usize>,
    qp_histogram: Vec<Vec<usize>>,
}

impl EpochStats {
    fn new(m: usize) -> Self {
        Self {
            loss_sum: vec![0.0; m],
            loss_count: vec![0; m],
            assigned: vec![0; m],
            qp_histogram: vec![vec![0; m]; QP_VALUES.len()],
        }
    }

    fn record(&mut self, sample: &TrainingSample, losses: &[f64], offset: usize, winner: usize) {
        for (j, l) in losses.iter().enumerate() {
            self.loss_sum[offset + j] += l;
            self.loss_count[offset + j] += 1;
        }
        self.assigned[winner] += 1;
        self.qp_histogram[sample.qp.index()][winner] += 1;
    }

    fn finish(self, epoch: usize, temperature: Option<f64>) -> EpochLog {
        let total: usize = self.assigned.iter().sum();
        EpochLog {
            epoch,
            temperature,
            mean_loss: self
                .loss_sum
                .iter()
                .zip(&self.loss_count)
                .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
                .collect(),
            share: self
                .assigned
                .iter()
                .map(|&n| n as f64 / total.max(1) as f64)
                .collect(),
            qp_histogram: self.qp_histogram,
        }
    }
}

fn shuffled(indices: &[usize], seed: u64, epoch: usize, stream: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    let mut rng = seeded(derive_seed(derive_seed(seed, 0x5348_5546), (epoch as u64) << 16 | stream as u64));
    order.shuffle(&mut rng);
    order
}

fn with_epoch<T>(epoch: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}: {msg}")),
        other => other,
    })
}

/// Trains a bank according to `config.mode`.
pub fn train(config: &TrainConfig, dataset: &[TrainingSample]) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    match config.mode {
        TrainMode::Independent => train_independent(config, dataset),
        _ => train_competitive(config, dataset),
    }
}

fn train_competitive(config: &TrainConfig, dataset: &[TrainingSample]) -> Result<TrainOutcome> {
    let m = config.bank_size();
    let routing = match config.mode {
        TrainMode::Single => Routing::Single,
        _ => Routing::Competitive,
    };
    let mut bank = FilterBank::init(config.arch, m, config.seed, config.init, routing)?;
    let mut opts = optimizers_for(&bank, config.lr);
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let t = match config.mode {
            TrainMode::Joint => temperature(config.t0, config.beta, config.drop_step, epoch),
            TrainMode::HardMin => HARD_MIN_TEMPERATURE,
            // a one-filter bank gets alpha = 1 at any temperature
            _ => 1.0,
        };
        let order = shuffled(&all, config.seed, epoch, 0);
        let mut stats = EpochStats::new(m);
        for chunk in order.chunks(config.batch) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let out = with_epoch(epoch, joint_train_step(&batch, &mut bank, t, &mut opts, config.metric))?;
            for (s, losses) in batch.iter().zip(&out.losses) {
                stats.record(s, losses, 0, argmin(losses));
            }
        }
        let logged_t = (config.mode != TrainMode::Single).then_some(t);
        epochs.push(stats.finish(epoch, logged_t));
    }
    Ok(TrainOutcome {
        bank,
        log: TrainingLog {
            mode: config.mode,
            epochs,
        },
    })
}

fn train_independent(config: &TrainConfig, dataset: &[TrainingSample]) -> Result<TrainOutcome> {
    let partition = &config.partition;
    let m = partition.len();
    let mut bank = FilterBank::init(
        config.arch,
        m,
        config.seed,
        config.init,
        Routing::QpRanges(partition.clone()),
    )?;
    let mut opts = optimizers_for(&bank, config.lr);

    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, s) in dataset.iter().enumerate() {
        buckets[partition.range_of(s.qp)].push(i);
    }
    if let Some(j) = buckets.iter().position(|b| b.is_empty()) {
        let qps: Vec<u32> = partition.ranges()[j].iter().map(|q| q.value()).collect();
        return Err(Error::Config(format!(
            "no training samples for QP range {j} {qps:?}"
        )));
    }

    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut stats = EpochStats::new(m);
        for (j, bucket) in buckets.iter().enumerate() {
            let order = shuffled(bucket, config.seed, epoch, j + 1);
            for chunk in order.chunks(config.batch) {
                let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &dataset[i]).collect();
                let out = with_epoch(
                    epoch,
                    train_filters_step(
                        &batch,
                        std::slice::from_mut(&mut bank.filters[j]),
                        1.0,
                        std::slice::from_mut(&mut opts[j]),
                        config.metric,
                    ),
                )?;
                for (s, losses) in batch.iter().zip(&out.losses) {
                    stats.record(s, losses, j, j);
                }
            }
        }
        epochs.push(stats.finish(epoch, None));
    }
    Ok(TrainOutcome {
        bank,
        log: TrainingLog {
            mode: TrainMode::Independent,
            epochs,
        },
    })
}

/// `losses[i][j]`: distortion of filter j on sample i (no parameter update).
pub fn sample_losses(bank: &FilterBank, samples: &[TrainingSample], metric: Metric) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map(|s| {
            let x = s.x.to_tensor();
            let xhat = s.xhat.to_tensor();
            let q = QpIndicator::new(s.qp);
            bank.filters
                .iter()
                .map(|f| tensor_distortion(&filter_forward(&xhat, &q, f)?, &x, metric))
                .collect()
        })
        .collect()
}

/// Argmin-loss filter of every sample.
pub fn assignments(bank: &FilterBank, samples: &[TrainingSample], metric: Metric) -> Result<Vec<usize>> {
    Ok(sample_losses(bank, samples, metric)?
        .iter()
        .map(|l| argmin(l))
        .collect())
}
