//! Block-wise filter selection and the FIDX filter-index bitstream.
//!
//! The encoder splits a reconstruction into `B x B` blocks, runs every filter
//! of the bank on every block and keeps the index of the filter with the
//! lowest distortion. The decoder only needs the index map.

use rayon::prelude::*;

use crate::bank::FilterBank;
use crate::codec::QpLevel;
use crate::distortion::{distortion, Metric};
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::nn::serialize::ByteReader;
use crate::trainer::argmin;

pub const MAP_MAGIC: &[u8; 4] = b"FIDX";
pub const MAP_VERSION: u8 = 1;
const HEADER_LEN: usize = 12;

/// Partition of an image into `block_size` squares. The last row and column of
/// blocks overhang the image; the overhang is filled by edge replication.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    pub block_size: usize,
    pub rows: usize,
    pub cols: usize,
    pub height: usize,
    pub width: usize,
}

impl BlockGrid {
    pub fn new(height: usize, width: usize, block_size: usize) -> Result<Self> {
        if block_size == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "cannot partition {height}x{width} into blocks of {block_size}"
            )));
        }
        Ok(Self {
            block_size,
            rows: height.div_ceil(block_size),
            cols: width.div_ceil(block_size),
            height,
            width,
        })
    }

    pub fn for_image(img: &ImagePlane, block_size: usize) -> Result<Self> {
        Self::new(img.height(), img.width(), block_size)
    }

    pub fn pad_bottom(&self) -> usize {
        self.rows * self.block_size - self.height
    }

    pub fn pad_right(&self) -> usize {
        self.cols * self.block_size - self.width
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(y0, x0, h, w)` of the part of block `(r, c)` inside the image.
    pub fn valid_rect(&self, r: usize, c: usize) -> (usize, usize, usize, usize) {
        let (y0, x0) = (r * self.block_size, c * self.block_size);
        (
            y0,
            x0,
            self.block_size.min(self.height - y0),
            self.block_size.min(self.width - x0),
        )
    }

    /// Full `B x B` block `i` (row-major), replication-padded past the image edge.
    fn block(&self, img: &ImagePlane, i: usize) -> ImagePlane {
        let (y0, x0, _, _) = self.valid_rect(i / self.cols, i % self.cols);
        img.crop_replicate(y0, x0, self.block_size, self.block_size)
    }
}

/// Per-block filter indices, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterIndexMap {
    pub block_size: usize,
    pub rows: usize,
    pub cols: usize,
    /// Bank size the indices refer to.
    pub filters: usize,
    pub indices: Vec<u8>,
}

impl FilterIndexMap {
    pub fn new(block_size: usize, rows: usize, cols: usize, filters: usize, indices: Vec<u8>) -> Result<Self> {
        if indices.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} indices for a {rows}x{cols} grid",
                indices.len()
            )));
        }
        if filters == 0 || filters > 255 {
            return Err(Error::Parameter(format!("bank size {filters} outside 1..=255")));
        }
        if let Some(i) = indices.iter().position(|&v| v as usize >= filters) {
            return Err(Error::Parameter(format!(
                "index {} at block {i} is not below bank size {filters}",
                indices[i]
            )));
        }
        if block_size > u16::MAX as usize || rows > u16::MAX as usize || cols > u16::MAX as usize {
            return Err(Error::Parameter(format!(
                "grid {rows}x{cols} of {block_size}-blocks exceeds the 16-bit header fields"
            )));
        }
        Ok(Self {
            block_size,
            rows,
            cols,
            filters,
            indices,
        })
    }

    pub fn get(&self, r: usize, c: usize) -> usize {
        self.indices[r * self.cols + c] as usize
    }

    fn check_grid(&self, grid: &BlockGrid) -> Result<()> {
        if (self.block_size, self.rows, self.cols) != (grid.block_size, grid.rows, grid.cols) {
            return Err(Error::shape(format!(
                "index map is {}x{} of {}-blocks but the image grid is {}x{} of {}-blocks",
                self.rows, self.cols, self.block_size, grid.rows, grid.cols, grid.block_size
            )));
        }
        Ok(())
    }
}

/// Bits used per block index: `ceil(log2 M)`.
pub fn index_bits(filters: usize) -> usize {
    if filters <= 1 {
        0
    } else {
        (usize::BITS - (filters - 1).leading_zeros()) as usize
    }
}

/// Side information carried by `map`, excluding the header.
pub fn side_info_bits(map: &FilterIndexMap) -> usize {
    map.rows * map.cols * index_bits(map.filters)
}

/// Distortion of every filter on every block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockLosses {
    pub grid: BlockGrid,
    /// `losses[b][j]`: distortion of filter j on block b (row-major), over the
    /// part of the block inside the image.
    pub losses: Vec<Vec<f64>>,
}

impl BlockLosses {
    fn block_pixels(&self, b: usize) -> usize {
        let (_, _, h, w) = self.grid.valid_rect(b / self.grid.cols, b % self.grid.cols);
        h * w
    }

    /// Pixel-weighted mean over blocks of the loss picked by `choose`.
    fn weighted_mean(&self, choose: impl Fn(&[f64]) -> f64) -> f64 {
        let mut sum = 0.0;
        for (b, l) in self.losses.iter().enumerate() {
            sum += self.block_pixels(b) as f64 * choose(l);
        }
        sum / (self.grid.height * self.grid.width) as f64
    }

    /// Image distortion when every block uses filter `j`.
    pub fn fixed_filter_distortion(&self, j: usize) -> f64 {
        self.weighted_mean(|l| l[j])
    }

    /// Image distortion under the per-block choices of `map`.
    pub fn map_distortion(&self, map: &FilterIndexMap) -> Result<f64> {
        map.check_grid(&self.grid)?;
        let mut sum = 0.0;
        for (b, l) in self.losses.iter().enumerate() {
            sum += self.block_pixels(b) as f64 * l[map.indices[b] as usize];
        }
        Ok(sum / (self.grid.height * self.grid.width) as f64)
    }

    /// Argmin map, ties to the smallest index.
    pub fn selection(&self, filters: usize) -> Result<FilterIndexMap> {
        let indices = self.losses.iter().map(|l| argmin(l) as u8).collect();
        FilterIndexMap::new(self.grid.block_size, self.grid.rows, self.grid.cols, filters, indices)
    }
}

/// Runs every filter of `bank` on every block of `xhat` and measures it against `x`.
pub fn block_losses(
    x: &ImagePlane,
    xhat: &ImagePlane,
    qp: QpLevel,
    bank: &FilterBank,
    block_size: usize,
    metric: Metric,
) -> Result<BlockLosses> {
    x.same_dims(xhat)?;
    if bank.len() > 255 {
        return Err(Error::Parameter(format!("bank of {} filters cannot be signalled", bank.len())));
    }
    let grid = BlockGrid::for_image(xhat, block_size)?;
    let losses = (0..grid.len())
        .into_par_iter()
        .map(|b| {
            let (y0, x0, h, w) = grid.valid_rect(b / grid.cols, b % grid.cols);
            let target = x.crop(y0, x0, h, w)?;
            let input = grid.block(xhat, b);
            (0..bank.len())
                .map(|j| {
                    let out = bank.apply(j, &input, qp)?.crop(0, 0, h, w)?;
                    distortion(&out, &target, metric)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockLosses { grid, losses })
}

/// Encoder-side selection: per block, the filter with the lowest distortion.
pub fn select_filters(
    x: &ImagePlane,
    xhat: &ImagePlane,
    qp: QpLevel,
    bank: &FilterBank,
    block_size: usize,
    metric: Metric,
) -> Result<FilterIndexMap> {
    block_losses(x, xhat, qp, bank, block_size, metric)?.selection(bank.len())
}

/// Decoder-side reconstruction: each block filtered by the filter `map` names.
pub fn apply_blockwise(
    xhat: &ImagePlane,
    qp: QpLevel,
    bank: &FilterBank,
    map: &FilterIndexMap,
) -> Result<ImagePlane> {
    let grid = BlockGrid::for_image(xhat, map.block_size)?;
    map.check_grid(&grid)?;
    if map.filters != bank.len() {
        return Err(Error::shape(format!(
            "index map refers to {} filters, bank has {}",
            map.filters,
            bank.len()
        )));
    }
    let blocks = (0..grid.len())
        .into_par_iter()
        .map(|b| bank.apply(map.indices[b] as usize, &grid.block(xhat, b), qp))
        .collect::<Result<Vec<_>>>()?;
    let mut out = ImagePlane::filled(grid.height, grid.width, 0.0)?;
    for (b, block) in blocks.iter().enumerate() {
        let (y0, x0, h, w) = grid.valid_rect(b / grid.cols, b % grid.cols);
        out.paste(block, y0, x0, h, w);
    }
    Ok(out)
}

/// FIDX bitstream: `"FIDX"`, version u8, block size u16, rows u16, cols u16,
/// bank size u8 (integers big-endian), then the indices row-major at
/// `ceil(log2 M)` bits each, most significant bit first, zero-padded to a byte.
pub fn serialize_map(map: &FilterIndexMap) -> Vec<u8> {
    let bits = index_bits(map.filters);
    let mut out = Vec::with_capacity(HEADER_LEN + (side_info_bits(map)).div_ceil(8));
    out.extend_from_slice(MAP_MAGIC);
    out.push(MAP_VERSION);
    for v in [map.block_size, map.rows, map.cols] {
        out.extend_from_slice(&(v as u16).to_be_bytes());
    }
    out.push(map.filters as u8);

    let mut acc = 0u16;
    let mut filled = 0;
    for &idx in &map.indices {
        for k in (0..bits).rev() {
            acc = (acc << 1) | ((idx >> k) & 1) as u16;
            filled += 1;
            if filled == 8 {
                out.push(acc as u8);
                acc = 0;
                filled = 0;
            }
        }
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
    out
}

pub fn parse_map(bytes: &[u8]) -> Result<FilterIndexMap> {
    let mut r = ByteReader::new(bytes);
    if r.take(4)? != MAP_MAGIC {
        return Err(Error::parse(0, "bad magic, expected FIDX"));
    }
    let version = r.u8()?;
    if version != MAP_VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let block_size = r.u16_be()? as usize;
    let rows = r.u16_be()? as usize;
    let cols = r.u16_be()? as usize;
    let filters = r.u8()? as usize;
    if block_size == 0 {
        return Err(Error::parse(5, "block size 0"));
    }
    if filters == 0 {
        return Err(Error::parse(11, "bank size 0"));
    }
    let bits = index_bits(filters);
    let total_bits = rows * cols * bits;
    let payload = r.take(total_bits.div_ceil(8))?;
    r.expect_end()?;

    let bit = |i: usize| (payload[i / 8] >> (7 - i % 8)) & 1;
    let mut indices = Vec::with_capacity(rows * cols);
    for b in 0..rows * cols {
        let mut v = 0usize;
        for k in 0..bits {
            v = (v << 1) | bit(b * bits + k) as usize;
        }
        if v >= filters {
            return Err(Error::parse(
                HEADER_LEN + b * bits / 8,
                format!("index {v} of block {b} is not below bank size {filters}"),
            ));
        }
        indices.push(v as u8);
    }
    if (total_bits..payload.len() * 8).any(|i| bit(i) != 0) {
        return Err(Error::parse(HEADER_LEN + total_bits / 8, "nonzero padding bits"));
    }
    FilterIndexMap::new(block_size, rows, cols, filters, indices)
}
