//! A bank of filters sharing one architecture, and its file format.
//!
//! ```text
//! "FBNK" | version u32 | M u32
//! arch: image_channels u32 | base_channels u32 | depth u32 | res_blocks u32
//!       | qp_channels u32 | kernel u32 | slope f64
//! routing: tag u32 (0 competitive, 1 single, 2 qp ranges)
//!          [ranges u32 | per range: len u32 | qp u32 x len]
//! per filter: id u32 | FBNN layer list
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::codec::QpLevel;
use crate::error::{Error, Result};
use crate::filter::{filter_forward, init_filter, FilterArch, FilterParams, QpIndicator, QP_CHANNELS};
use crate::image::ImagePlane;
use crate::nn::serialize::{read_layers, write_layers, ByteReader};
use crate::rng::derive_seed;
use crate::trainer::{InitSeeds, QpRangePartition};

pub const BANK_MAGIC: &[u8; 4] = b"FBNK";
pub const BANK_VERSION: u32 = 1;

/// How a decoder picks a filter when the whole picture uses one filter.
#[derive(Clone, Debug, PartialEq)]
pub enum Routing {
    /// Filters specialize by content; the encoder picks per picture or block.
    Competitive,
    /// A single filter handles every QP.
    Single,
    /// Filter `j` handles the QPs of range `j`.
    QpRanges(QpRangePartition),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub arch: FilterArch,
    pub filters: Vec<FilterParams>,
    pub routing: Routing,
}

impl FilterBank {
    /// `m` freshly initialized filters; filter `j` gets id `j`.
    pub fn init(arch: FilterArch, m: usize, seed: u64, seeds: InitSeeds, routing: Routing) -> Result<Self> {
        if m == 0 {
            return Err(Error::Parameter("a bank needs at least one filter".into()));
        }
        let filters = (0..m)
            .map(|j| {
                let s = match seeds {
                    InitSeeds::Distinct => derive_seed(seed, j as u64),
                    InitSeeds::Shared => derive_seed(seed, 0),
                };
                init_filter(arch, s, j)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            arch,
            filters,
            routing,
        })
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Filter a decoder uses for a whole picture at `qp`, when routing fixes one.
    pub fn designated_filter(&self, qp: QpLevel) -> Option<usize> {
        match &self.routing {
            Routing::Competitive => None,
            Routing::Single => Some(0),
            Routing::QpRanges(p) => Some(p.range_of(qp)),
        }
    }

    /// Runs filter `j` on an image plane. The input is replication-padded to the
    /// network's granularity, and the output is cropped back and clipped to `[0, 1]`.
    pub fn apply(&self, j: usize, xhat: &ImagePlane, qp: QpLevel) -> Result<ImagePlane> {
        let w = self.filters.get(j).ok_or_else(|| {
            Error::Parameter(format!("filter index {j} out of range for bank of {}", self.len()))
        })?;
        let g = self.arch.granularity();
        let (h, wd) = xhat.dims();
        let (ph, pw) = (h.div_ceil(g) * g, wd.div_ceil(g) * g);
        let padded = if (ph, pw) == (h, wd) { xhat.clone() } else { xhat.pad_to(ph, pw) };
        let out = filter_forward(&padded.to_tensor(), &QpIndicator::new(qp), w)?;
        let mut img = ImagePlane::from_tensor(&out)?;
        if (ph, pw) != (h, wd) {
            img = img.crop(0, 0, h, wd)?;
        }
        img.clamp01();
        Ok(img)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BANK_MAGIC);
        let a = &self.arch;
        for v in [
            BANK_VERSION,
            self.filters.len() as u32,
            a.image_channels as u32,
            a.base_channels as u32,
            a.depth as u32,
            a.res_blocks as u32,
            QP_CHANNELS as u32,
            a.kernel as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&a.slope.to_le_bytes());
        match &self.routing {
            Routing::Competitive => out.extend_from_slice(&0u32.to_le_bytes()),
            Routing::Single => out.extend_from_slice(&1u32.to_le_bytes()),
            Routing::QpRanges(p) => {
                out.extend_from_slice(&2u32.to_le_bytes());
                out.extend_from_slice(&(p.len() as u32).to_le_bytes());
                for r in p.ranges() {
                    out.extend_from_slice(&(r.len() as u32).to_le_bytes());
                    for qp in r {
                        out.extend_from_slice(&qp.value().to_le_bytes());
                    }
                }
            }
        }
        for f in &self.filters {
            out.extend_from_slice(&(f.id as u32).to_le_bytes());
            write_layers(&f.layers, &mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != BANK_MAGIC {
            return Err(Error::parse(0, "bad bank magic, expected \"FBNK\""));
        }
        let version = r.u32()?;
        if version != BANK_VERSION {
            return Err(Error::parse(4, format!("unsupported bank version {version}")));
        }
        let m = r.u32()? as usize;
        let arch_at = r.offset();
        let image_channels = r.u32()? as usize;
        let base_channels = r.u32()? as usize;
        let depth = r.u32()? as usize;
        let res_blocks = r.u32()? as usize;
        let qp_channels = r.u32()? as usize;
        let kernel = r.u32()? as usize;
        let slope = r.f64()?;
        if qp_channels != QP_CHANNELS {
            return Err(Error::parse(arch_at + 16, format!("expected {QP_CHANNELS} QP channels, got {qp_channels}")));
        }
        let arch = FilterArch {
            image_channels,
            base_channels,
            depth,
            res_blocks,
            kernel,
            slope,
        };
        arch.validate().map_err(|e| Error::parse(arch_at, e.to_string()))?;

        let routing_at = r.offset();
        let routing = match r.u32()? {
            0 => Routing::Competitive,
            1 => Routing::Single,
            2 => {
                let n = r.u32()? as usize;
                let mut ranges = Vec::with_capacity(n.min(7));
                for _ in 0..n {
                    let len = r.u32()? as usize;
                    let mut range = Vec::with_capacity(len.min(7));
                    for _ in 0..len {
                        let at = r.offset();
                        let qp = QpLevel::new(r.u32()?).map_err(|e| Error::parse(at, e.to_string()))?;
                        range.push(qp);
                    }
                    ranges.push(range);
                }
                Routing::QpRanges(
                    QpRangePartition::new(ranges).map_err(|e| Error::parse(routing_at, e.to_string()))?,
                )
            }
            tag => return Err(Error::parse(routing_at, format!("unknown routing tag {tag}"))),
        };

        let mut filters = Vec::with_capacity(m.min(64));
        for _ in 0..m {
            let at = r.offset();
            let id = r.u32()? as usize;
            let layers = read_layers(&mut r)?;
            filters.push(FilterParams::from_layers(id, arch, layers).map_err(|e| Error::parse(at, e.to_string()))?);
        }
        r.expect_end()?;
        if let Routing::QpRanges(p) = &routing {
            if p.len() != filters.len() {
                return Err(Error::parse(routing_at, "QP partition size differs from filter count"));
            }
        }
        Ok(Self {
            arch,
            filters,
            routing,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
