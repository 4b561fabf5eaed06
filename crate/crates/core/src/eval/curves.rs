//! RD curves over a coded image set, and per-QP filter usage.

use rayon::prelude::*;

use crate::bank::FilterBank;
use crate::blockwise::{apply_blockwise, block_losses, side_info_bits};
use crate::codec::{encode_decode_padded, CodecResult, QpLevel};
use crate::distortion::{distortion, Metric};
use crate::error::{Error, Result};
use crate::eval::bdrate::{RdCurve, RdPoint};
use crate::image::{mse, ImagePlane};
use crate::trainer::argmin;

pub const PSNR_CAP: f64 = 100.0;

/// PSNR in dB for peak 1.0; identical images report [`PSNR_CAP`].
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * e.log10()).min(PSNR_CAP))
}

/// Quality axis for a metric: PSNR for MSE, negated distance for the proxy.
pub fn quality(original: &ImagePlane, recon: &ImagePlane, metric: Metric) -> Result<f64> {
    match metric {
        Metric::Mse => psnr(original, recon),
        Metric::Proxy => Ok(-distortion(recon, original, metric)?),
    }
}

/// Originals with their codec output at each evaluated QP.
#[derive(Clone, Debug)]
pub struct CodedSet {
    pub images: Vec<ImagePlane>,
    pub qps: Vec<QpLevel>,
    /// `coded[i][q]`: image i at `qps[q]`.
    pub coded: Vec<Vec<CodecResult>>,
}

impl CodedSet {
    pub fn new(images: Vec<ImagePlane>, qps: &[QpLevel]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Eval("no evaluation images".into()));
        }
        if qps.is_empty() {
            return Err(Error::Eval("no evaluation QPs".into()));
        }
        let coded = images
            .par_iter()
            .map(|img| qps.iter().map(|&qp| encode_decode_padded(img, qp)).collect())
            .collect();
        Ok(Self {
            images,
            qps: qps.to_vec(),
            coded,
        })
    }

    fn total_pixels(&self) -> usize {
        self.images.iter().map(|i| i.pixels()).sum()
    }

    fn cells(&self) -> Vec<(usize, usize)> {
        (0..self.images.len())
            .flat_map(|i| (0..self.qps.len()).map(move |q| (i, q)))
            .collect()
    }
}

/// How reconstructions are post-processed when building a curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveMode {
    /// Codec output as is.
    Anchor,
    /// One filter over the whole picture.
    WholeImage,
    /// Per-block selection with the index map counted in the rate.
    Blockwise { block_size: usize },
}

impl CurveMode {
    pub fn name(self) -> String {
        match self {
            CurveMode::Anchor => "anchor".into(),
            CurveMode::WholeImage => "whole-image".into(),
            CurveMode::Blockwise { block_size } => format!("block-{block_size}"),
        }
    }
}

/// Per-QP share of blocks assigned to each filter.
#[derive(Clone, Debug, PartialEq)]
pub struct UsageTable {
    pub qps: Vec<QpLevel>,
    /// `counts[q][j]`: blocks at `qps[q]` that selected filter j.
    pub counts: Vec<Vec<usize>>,
}

impl UsageTable {
    pub fn filters(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    /// `fractions()[q][j]`; each row sums to 1.
    pub fn fractions(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                row.iter().map(|&n| n as f64 / total.max(1) as f64).collect()
            })
            .collect()
    }
}

/// Block-wise evaluation result: the RD curve, the usage table and the
/// selection-metric distortions behind them.
#[derive(Clone, Debug)]
pub struct BlockwiseRun {
    pub curve: RdCurve,
    pub usage: UsageTable,
    /// `distortion[i][q]`: selection-metric distortion of the block-wise output.
    pub distortion: Vec<Vec<f64>>,
    /// `fixed[i][q][j]`: the same with filter j on every block.
    pub fixed: Vec<Vec<Vec<f64>>>,
}

struct CellResult {
    bits: f64,
    quality: f64,
}

fn assemble(label: &str, set: &CodedSet, cells: &[CellResult]) -> Result<RdCurve> {
    let pixels = set.total_pixels() as f64;
    let nq = set.qps.len();
    let points = (0..nq)
        .map(|q| {
            let (mut bits, mut qual) = (0.0, 0.0);
            for i in 0..set.images.len() {
                let c = &cells[i * nq + q];
                bits += c.bits;
                qual += c.quality;
            }
            RdPoint {
                qp: set.qps[q].value(),
                rate: bits / pixels,
                quality: qual / set.images.len() as f64,
            }
        })
        .collect();
    RdCurve::new(label, points)
}

/// Rate is total bits over total pixels at each QP; quality is the mean per-image quality.
pub fn build_rd_curve(
    label: &str,
    set: &CodedSet,
    bank: Option<&FilterBank>,
    mode: CurveMode,
    metric: Metric,
) -> Result<RdCurve> {
    match (mode, bank) {
        (CurveMode::Anchor, _) => {
            let cells = set
                .cells()
                .par_iter()
                .map(|&(i, q)| {
                    let c = &set.coded[i][q];
                    Ok(CellResult {
                        bits: c.rate_bits,
                        quality: quality(&set.images[i], &c.reconstruction, metric)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            assemble(label, set, &cells)
        }
        (CurveMode::WholeImage, Some(bank)) => {
            let cells = set
                .cells()
                .par_iter()
                .map(|&(i, q)| {
                    let c = &set.coded[i][q];
                    let x = &set.images[i];
                    let out = match bank.designated_filter(c.qp) {
                        Some(j) => bank.apply(j, &c.reconstruction, c.qp)?,
                        None => best_whole_image(bank, x, c, metric)?,
                    };
                    Ok(CellResult {
                        bits: c.rate_bits,
                        quality: quality(x, &out, metric)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            assemble(label, set, &cells)
        }
        (CurveMode::Blockwise { block_size }, Some(bank)) => {
            Ok(evaluate_blockwise(label, set, bank, block_size, metric)?.curve)
        }
        (_, None) => Err(Error::Eval(format!("{} curve needs a filter bank", mode.name()))),
    }
}

/// The filter whose whole-picture output is closest to the original.
fn best_whole_image(bank: &FilterBank, x: &ImagePlane, c: &CodecResult, metric: Metric) -> Result<ImagePlane> {
    let outs = (0..bank.len())
        .map(|j| bank.apply(j, &c.reconstruction, c.qp))
        .collect::<Result<Vec<_>>>()?;
    let d = outs
        .iter()
        .map(|o| distortion(o, x, metric))
        .collect::<Result<Vec<_>>>()?;
    Ok(outs.into_iter().nth(argmin(&d)).unwrap())
}

/// Selects and applies filters block-wise on every (image, QP) of `set`.
pub fn evaluate_blockwise(
    label: &str,
    set: &CodedSet,
    bank: &FilterBank,
    block_size: usize,
    metric: Metric,
) -> Result<BlockwiseRun> {
    let nq = set.qps.len();
    let mut counts = vec![vec![0usize; bank.len()]; nq];
    let mut cells = Vec::with_capacity(set.images.len() * nq);
    let mut dist = vec![Vec::with_capacity(nq); set.images.len()];
    let mut fixed = vec![Vec::with_capacity(nq); set.images.len()];
    for (i, q) in set.cells() {
        let c = &set.coded[i][q];
        let x = &set.images[i];
        let losses = block_losses(x, &c.reconstruction, c.qp, bank, block_size, metric)?;
        let map = losses.selection(bank.len())?;
        let out = apply_blockwise(&c.reconstruction, c.qp, bank, &map)?;
        for &j in &map.indices {
            counts[q][j as usize] += 1;
        }
        dist[i].push(losses.map_distortion(&map)?);
        fixed[i].push((0..bank.len()).map(|j| losses.fixed_filter_distortion(j)).collect());
        cells.push(CellResult {
            bits: c.rate_bits + side_info_bits(&map) as f64,
            quality: quality(x, &out, metric)?,
        });
    }
    Ok(BlockwiseRun {
        curve: assemble(label, set, &cells)?,
        usage: UsageTable {
            qps: set.qps.clone(),
            counts,
        },
        distortion: dist,
        fixed,
    })
}

/// Per-QP filter usage under block-wise selection.
pub fn usage_stats(set: &CodedSet, bank: &FilterBank, block_size: usize, metric: Metric) -> Result<UsageTable> {
    Ok(evaluate_blockwise("usage", set, bank, block_size, metric)?.usage)
}
