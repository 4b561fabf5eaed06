//! Single-plane images with samples in `[0, 1]`, plus binary PGM (P5) I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Dims4, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty image {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::shape(format!(
                "{} samples for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Window of size `h x w` at `(y0, x0)`; coordinates outside the image
    /// replicate the nearest edge sample.
    pub fn crop_replicate(&self, y0: usize, x0: usize, h: usize, w: usize) -> ImagePlane {
        let mut data = Vec::with_capacity(h * w);
        for y in y0..y0 + h {
            let row = y.min(self.height - 1) * self.width;
            for x in x0..x0 + w {
                data.push(self.data[row + x.min(self.width - 1)]);
            }
        }
        ImagePlane {
            height: h,
            width: w,
            data,
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImagePlane> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "crop {h}x{w} at ({y0},{x0}) outside {}x{} image",
                self.height, self.width
            )));
        }
        Ok(self.crop_replicate(y0, x0, h, w))
    }

    /// Extends to `h x w` by replicating the bottom row and right column.
    pub fn pad_to(&self, h: usize, w: usize) -> ImagePlane {
        debug_assert!(h >= self.height && w >= self.width);
        self.crop_replicate(0, 0, h, w)
    }

    /// Copies the top-left `h x w` of `src` into this image at `(y0, x0)`.
    pub fn paste(&mut self, src: &ImagePlane, y0: usize, x0: usize, h: usize, w: usize) {
        for y in 0..h {
            let dst = (y0 + y) * self.width + x0;
            let s = y * src.width;
            self.data[dst..dst + w].copy_from_slice(&src.data[s..s + w]);
        }
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn to_tensor(&self) -> Tensor4 {
        Tensor4::from_parts(Dims4::new(1, 1, self.height, self.width), self.data.clone())
    }

    pub fn from_tensor(t: &Tensor4) -> Result<ImagePlane> {
        let d = t.dims();
        if d.n != 1 || d.c != 1 {
            return Err(Error::shape(format!(
                "expected a 1x1xHxW tensor, got {d}"
            )));
        }
        ImagePlane::new(d.h, d.w, t.data().to_vec())
    }

    pub fn same_dims(&self, other: &ImagePlane) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    a.same_dims(b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Parses an 8-bit binary PGM (P5); samples are scaled to `[0, 1]` by maxval.
pub fn parse_pgm(bytes: &[u8]) -> Result<ImagePlane> {
    let mut pos = 0usize;
    let mut fields = [0usize; 3];

    let next_token = |pos: &mut usize| -> Result<(usize, String)> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::parse(start, "unexpected end of PGM header"));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
    };

    let (at, magic) = next_token(&mut pos)?;
    if magic != "P5" {
        return Err(Error::parse(at, format!("not a binary PGM (magic {magic:?})")));
    }
    for f in fields.iter_mut() {
        let (at, tok) = next_token(&mut pos)?;
        *f = tok
            .parse()
            .map_err(|_| Error::parse(at, format!("bad PGM header field {tok:?}")))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::parse(0, "PGM has zero size"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::parse(0, format!("unsupported PGM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(Error::parse(
            bytes.len(),
            format!("PGM raster truncated: {} of {need} bytes", bytes.len().saturating_sub(pos)),
        ));
    }
    let scale = maxval as f64;
    let data = bytes[pos..pos + need]
        .iter()
        .map(|&b| (b as f64 / scale).min(1.0))
        .collect();
    ImagePlane::new(height, width, data)
}

pub fn pgm_bytes(img: &ImagePlane) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(
        img.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn read_pgm(path: &Path) -> Result<ImagePlane> {
    let bytes = std::fs::read(path)?;
    parse_pgm(&bytes)
}

pub fn write_pgm(path: &Path, img: &ImagePlane) -> Result<()> {
    std::fs::write(path, pgm_bytes(img))?;
    Ok(())
}
