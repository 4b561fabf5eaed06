use std::fmt;

use crate::error::{Error, Result};

/// Dimensions of a rank-4 array in (batch, channel, height, width) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(Error::shape(format!("all dims must be >= 1, got {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Dims4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// Dense NCHW array of doubles with optional gradient storage of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: Dims4,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor4 {
    pub fn zeros(dims: Dims4) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            data: vec![0.0; dims.len()],
            grad: None,
        })
    }

    pub fn filled(dims: Dims4, value: f64) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            dims,
            data: vec![value; dims.len()],
            grad: None,
        })
    }

    pub fn from_vec(dims: Dims4, data: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(Error::shape(format!(
                "{} values supplied for dims {dims} ({} expected)",
                data.len(),
                dims.len()
            )));
        }
        Ok(Self {
            dims,
            data,
            grad: None,
        })
    }

    // Internal constructor for shapes already known to be valid.
    pub(crate) fn from_parts(dims: Dims4, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Self {
            dims,
            data,
            grad: None,
        }
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims.c + c) * self.dims.h + y) * self.dims.w + x
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.dims.plane();
        let start = (n * self.dims.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` element-wise into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(format!(
                "gradient of length {} does not fit tensor {}",
                delta.len(),
                self.dims
            )));
        }
        for (g, d) in self.grad_mut().iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Data and gradient as disjoint borrows, for optimizers.
    pub(crate) fn data_and_grad_mut(&mut self) -> (&mut [f64], &[f64]) {
        let len = self.data.len();
        let grad = self.grad.get_or_insert_with(|| vec![0.0; len]);
        (&mut self.data, grad)
    }

    pub fn same_dims(&self, other: &Tensor4) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::shape(format!(
                "{} vs {}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    /// Element-wise sum; shapes must agree.
    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        self.same_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor4::from_parts(self.dims, data))
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        self.same_dims(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Concatenates along the channel axis. Batch and spatial dims must agree.
    pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
        let (da, db) = (a.dims, b.dims);
        if da.n != db.n || da.h != db.h || da.w != db.w {
            return Err(Error::shape(format!("cannot concat {da} with {db}")));
        }
        let dims = Dims4::new(da.n, da.c + db.c, da.h, da.w);
        let mut data = Vec::with_capacity(dims.len());
        let (sa, sb) = (da.c * da.plane(), db.c * db.plane());
        for n in 0..da.n {
            data.extend_from_slice(&a.data[n * sa..(n + 1) * sa]);
            data.extend_from_slice(&b.data[n * sb..(n + 1) * sb]);
        }
        Ok(Tensor4::from_parts(dims, data))
    }

    /// Inverse of [`Tensor4::concat_channels`]: first `c_first` channels, then the rest.
    pub fn split_channels(&self, c_first: usize) -> Result<(Tensor4, Tensor4)> {
        let d = self.dims;
        if c_first == 0 || c_first >= d.c {
            return Err(Error::shape(format!(
                "cannot split {d} after channel {c_first}"
            )));
        }
        let da = Dims4::new(d.n, c_first, d.h, d.w);
        let db = Dims4::new(d.n, d.c - c_first, d.h, d.w);
        let (sa, sb) = (da.c * d.plane(), db.c * d.plane());
        let mut a = Vec::with_capacity(da.len());
        let mut b = Vec::with_capacity(db.len());
        for n in 0..d.n {
            let base = n * (sa + sb);
            a.extend_from_slice(&self.data[base..base + sa]);
            b.extend_from_slice(&self.data[base + sa..base + sa + sb]);
        }
        Ok((Tensor4::from_parts(da, a), Tensor4::from_parts(db, b)))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
