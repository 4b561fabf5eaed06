//! Little-endian binary format for layer parameter lists.
//!
//! ```text
//! "FBNN" | version u32 | layer count u32
//! per layer: out_ch u32 | in_ch u32 | k u32 | stride u32 | mode u32
//! per layer: weight f64 x (out*in*k*k) | bias f64 x out
//! ```

use crate::error::{Error, Result};
use crate::nn::conv::{ConvMode, LayerParams};

pub const LAYERS_MAGIC: &[u8; 4] = b"FBNN";
pub const LAYERS_VERSION: u32 = 1;

pub fn write_layers(layers: &[LayerParams], out: &mut Vec<u8>) {
    out.extend_from_slice(LAYERS_MAGIC);
    out.extend_from_slice(&LAYERS_VERSION.to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for l in layers {
        for v in [
            l.out_channels() as u32,
            l.in_channels() as u32,
            l.kernel_size() as u32,
            l.stride as u32,
            l.mode.tag(),
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for l in layers {
        for v in l.weight.data().iter().chain(l.bias.data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn layers_to_bytes(layers: &[LayerParams]) -> Vec<u8> {
    let mut out = Vec::new();
    write_layers(layers, &mut out);
    out
}

/// Parses one layer list starting at the reader's position.
pub(crate) fn read_layers(r: &mut ByteReader<'_>) -> Result<Vec<LayerParams>> {
    let start = r.offset();
    let magic = r.take(4)?;
    if magic != LAYERS_MAGIC {
        return Err(Error::parse(start, "bad layer magic, expected \"FBNN\""));
    }
    let version_at = r.offset();
    let version = r.u32()?;
    if version != LAYERS_VERSION {
        return Err(Error::parse(
            version_at,
            format!("unsupported layer format version {version}"),
        ));
    }
    let count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.offset();
        let (out_ch, in_ch, k, stride, mode) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let mode = ConvMode::from_tag(mode)
            .ok_or_else(|| Error::parse(at + 16, format!("unknown layer mode {mode}")))?;
        let layer = LayerParams::new(in_ch as usize, out_ch as usize, k as usize, stride as usize, mode)
            .map_err(|e| Error::parse(at, e.to_string()))?;
        shapes.push(layer);
    }
    for layer in &mut shapes {
        for v in layer.weight.data_mut() {
            *v = r.f64()?;
        }
        for v in layer.bias.data_mut() {
            *v = r.f64()?;
        }
    }
    Ok(shapes)
}

pub fn layers_from_bytes(bytes: &[u8]) -> Result<Vec<LayerParams>> {
    let mut r = ByteReader::new(bytes);
    let layers = read_layers(&mut r)?;
    r.expect_end()?;
    Ok(layers)
}

/// Cursor over a byte slice that reports offsets in its errors.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                self.pos,
                format!(
                    "truncated: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16_be(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::parse(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}
