//! 2-D convolution and transposed convolution with explicit backward passes.
//!
//! Both modes share one geometry: a "coarse" grid indexed by `a` and a "fine"
//! grid indexed by `b = a * stride + k - pad`. A strided convolution reads the
//! fine grid (input) into the coarse grid (output); a transposed convolution
//! scatters the coarse grid (input) into the fine grid (output). Forward and
//! backward passes are then built from three plane kernels: gather, scatter
//! and dot.
//!
//! Padding is fixed at `k / 2`. Stride-1 convolutions preserve spatial dims;
//! stride-s convolutions divide them by `s`; transposed convolutions multiply
//! them by `s` (an implicit output padding of `s - 1`).
//!
//! Every reduction runs in a fixed order (batch, then input channel, then
//! kernel rows and columns) so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::nn::tensor::{Dims4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    Conv,
    Transposed,
}

impl ConvMode {
    pub(crate) fn tag(self) -> u32 {
        match self {
            ConvMode::Conv => 0,
            ConvMode::Transposed => 1,
        }
    }

    pub(crate) fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(ConvMode::Conv),
            1 => Some(ConvMode::Transposed),
            _ => None,
        }
    }
}

/// Weights `(out_ch, in_ch, k, k)` and bias `(1, out_ch, 1, 1)` of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor4,
    pub bias: Tensor4,
    pub stride: usize,
    pub mode: ConvMode,
}

/// Parameter gradients, shaped like [`LayerParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weight: Tensor4,
    pub bias: Tensor4,
}

impl LayerParams {
    /// Zero-initialized layer.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        mode: ConvMode,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "kernel size must be odd, got {kernel}"
            )));
        }
        if stride == 0 {
            return Err(Error::Parameter("stride must be positive".into()));
        }
        Ok(Self {
            weight: Tensor4::zeros(Dims4::new(out_ch, in_ch, kernel, kernel))?,
            bias: Tensor4::zeros(Dims4::new(1, out_ch, 1, 1))?,
            stride,
            mode,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims().c
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims().n
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.dims().h
    }

    pub fn padding(&self) -> usize {
        self.kernel_size() / 2
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Output dims for `input`, or a shape error if the layer cannot consume it.
    pub fn output_dims(&self, input: Dims4) -> Result<Dims4> {
        if input.c != self.in_channels() {
            return Err(Error::shape(format!(
                "input {input} has {} channels but layer expects {} (weight {})",
                input.c,
                self.in_channels(),
                self.weight.dims()
            )));
        }
        let s = self.stride;
        match self.mode {
            ConvMode::Conv => {
                if !input.h.is_multiple_of(s) || !input.w.is_multiple_of(s) {
                    return Err(Error::shape(format!(
                        "input {input} spatial dims not divisible by stride {s}"
                    )));
                }
                Ok(Dims4::new(input.n, self.out_channels(), input.h / s, input.w / s))
            }
            ConvMode::Transposed => Ok(Dims4::new(
                input.n,
                self.out_channels(),
                input.h * s,
                input.w * s,
            )),
        }
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`, fan-in `in_ch * k * k`) and zero bias.
    pub fn he_init<R: rand::Rng + ?Sized>(&mut self, rng: &mut R) {
        let fan_in = (self.in_channels() * self.kernel_size() * self.kernel_size()) as f64;
        let std = (2.0 / fan_in).sqrt();
        for w in self.weight.data_mut() {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            *w = std * z;
        }
        self.bias.data_mut().iter_mut().for_each(|b| *b = 0.0);
    }

    fn zero_grads(&self) -> LayerGrads {
        LayerGrads {
            weight: Tensor4::from_parts(self.weight.dims(), vec![0.0; self.weight.len()]),
            bias: Tensor4::from_parts(self.bias.dims(), vec![0.0; self.bias.len()]),
        }
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    ha: usize,
    wa: usize,
    hb: usize,
    wb: usize,
    s: usize,
    p: usize,
}

impl Geometry {
    fn new(coarse: Dims4, fine: Dims4, params: &LayerParams) -> Self {
        Self {
            ha: coarse.h,
            wa: coarse.w,
            hb: fine.h,
            wb: fine.w,
            s: params.stride,
            p: params.padding(),
        }
    }
}

/// Half-open range of coarse indices `a` with `0 <= a*s + off - p < len_b`.
#[inline]
fn valid_range(off: usize, p: usize, s: usize, len_a: usize, len_b: usize) -> (usize, usize) {
    let lo = if p > off { (p - off).div_ceil(s) } else { 0 };
    let hi_incl = (len_b as isize - 1 + p as isize - off as isize).div_euclid(s as isize);
    let hi = (hi_incl + 1).clamp(0, len_a as isize) as usize;
    (lo.min(hi), hi)
}

/// `dst_a[a] += w * src_b[b(a)]`
#[inline]
fn gather(dst_a: &mut [f64], src_b: &[f64], w: f64, ky: usize, kx: usize, g: Geometry) {
    let (y0, y1) = valid_range(ky, g.p, g.s, g.ha, g.hb);
    let (x0, x1) = valid_range(kx, g.p, g.s, g.wa, g.wb);
    if x0 >= x1 {
        return;
    }
    for ay in y0..y1 {
        let by = ay * g.s + ky - g.p;
        let dst = &mut dst_a[ay * g.wa + x0..ay * g.wa + x1];
        let row = &src_b[by * g.wb..(by + 1) * g.wb];
        let bx0 = x0 * g.s + kx - g.p;
        if g.s == 1 {
            for (d, v) in dst.iter_mut().zip(&row[bx0..bx0 + (x1 - x0)]) {
                *d += w * v;
            }
        } else {
            for (i, d) in dst.iter_mut().enumerate() {
                *d += w * row[bx0 + i * g.s];
            }
        }
    }
}

/// `dst_b[b(a)] += w * src_a[a]`
#[inline]
fn scatter(dst_b: &mut [f64], src_a: &[f64], w: f64, ky: usize, kx: usize, g: Geometry) {
    let (y0, y1) = valid_range(ky, g.p, g.s, g.ha, g.hb);
    let (x0, x1) = valid_range(kx, g.p, g.s, g.wa, g.wb);
    if x0 >= x1 {
        return;
    }
    for ay in y0..y1 {
        let by = ay * g.s + ky - g.p;
        let src = &src_a[ay * g.wa + x0..ay * g.wa + x1];
        let row = &mut dst_b[by * g.wb..(by + 1) * g.wb];
        let bx0 = x0 * g.s + kx - g.p;
        if g.s == 1 {
            for (d, v) in row[bx0..bx0 + (x1 - x0)].iter_mut().zip(src) {
                *d += w * v;
            }
        } else {
            for (i, v) in src.iter().enumerate() {
                row[bx0 + i * g.s] += w * v;
            }
        }
    }
}

/// `sum_a x_a[a] * y_b[b(a)]`
#[inline]
fn dot(x_a: &[f64], y_b: &[f64], ky: usize, kx: usize, g: Geometry) -> f64 {
    let (y0, y1) = valid_range(ky, g.p, g.s, g.ha, g.hb);
    let (x0, x1) = valid_range(kx, g.p, g.s, g.wa, g.wb);
    let mut acc = 0.0;
    if x0 >= x1 {
        return acc;
    }
    for ay in y0..y1 {
        let by = ay * g.s + ky - g.p;
        let xa = &x_a[ay * g.wa + x0..ay * g.wa + x1];
        let row = &y_b[by * g.wb..(by + 1) * g.wb];
        let bx0 = x0 * g.s + kx - g.p;
        if g.s == 1 {
            for (a, b) in xa.iter().zip(&row[bx0..bx0 + (x1 - x0)]) {
                acc += a * b;
            }
        } else {
            for (i, a) in xa.iter().enumerate() {
                acc += a * row[bx0 + i * g.s];
            }
        }
    }
    acc
}

/// Forward pass of a convolution layer (either mode).
pub fn conv_forward(input: &Tensor4, params: &LayerParams) -> Result<Tensor4> {
    let in_dims = input.dims();
    let out_dims = params.output_dims(in_dims)?;
    let k = params.kernel_size();
    let (cin, cout) = (params.in_channels(), params.out_channels());

    let mut out = Tensor4::from_parts(out_dims, vec![0.0; out_dims.len()]);
    for n in 0..in_dims.n {
        for co in 0..cout {
            let b = params.bias.data()[co];
            out.plane_mut(n, co).iter_mut().for_each(|v| *v = b);
        }
    }

    let weights = params.weight.data();
    match params.mode {
        ConvMode::Conv => {
            let g = Geometry::new(out_dims, in_dims, params);
            for n in 0..in_dims.n {
                for co in 0..cout {
                    let dst = out.plane_mut(n, co);
                    for ci in 0..cin {
                        let src = input.plane(n, ci);
                        let wbase = (co * cin + ci) * k * k;
                        for ky in 0..k {
                            for kx in 0..k {
                                gather(dst, src, weights[wbase + ky * k + kx], ky, kx, g);
                            }
                        }
                    }
                }
            }
        }
        ConvMode::Transposed => {
            let g = Geometry::new(in_dims, out_dims, params);
            for n in 0..in_dims.n {
                for co in 0..cout {
                    let dst = out.plane_mut(n, co);
                    for ci in 0..cin {
                        let src = input.plane(n, ci);
                        let wbase = (co * cin + ci) * k * k;
                        for ky in 0..k {
                            for kx in 0..k {
                                scatter(dst, src, weights[wbase + ky * k + kx], ky, kx, g);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_upstream(input: &Tensor4, params: &LayerParams, upstream: &Tensor4) -> Result<Dims4> {
    let out_dims = params.output_dims(input.dims())?;
    if upstream.dims() != out_dims {
        return Err(Error::shape(format!(
            "upstream gradient {} does not match layer output {out_dims}",
            upstream.dims()
        )));
    }
    Ok(out_dims)
}

fn param_grads(input: &Tensor4, params: &LayerParams, upstream: &Tensor4) -> LayerGrads {
    let in_dims = input.dims();
    let out_dims = upstream.dims();
    let k = params.kernel_size();
    let (cin, cout) = (params.in_channels(), params.out_channels());
    let mut grads = params.zero_grads();

    {
        let gb = grads.bias.data_mut();
        for n in 0..out_dims.n {
            for (co, g) in gb.iter_mut().enumerate() {
                *g += upstream.plane(n, co).iter().sum::<f64>();
            }
        }
    }

    // Coarse-grid tensor on the left, fine-grid tensor on the right.
    let (coarse, fine, g) = match params.mode {
        ConvMode::Conv => (upstream, input, Geometry::new(out_dims, in_dims, params)),
        ConvMode::Transposed => (input, upstream, Geometry::new(in_dims, out_dims, params)),
    };
    let gw = grads.weight.data_mut();
    for n in 0..in_dims.n {
        for co in 0..cout {
            for ci in 0..cin {
                let (xa, yb) = match params.mode {
                    ConvMode::Conv => (coarse.plane(n, co), fine.plane(n, ci)),
                    ConvMode::Transposed => (coarse.plane(n, ci), fine.plane(n, co)),
                };
                let wbase = (co * cin + ci) * k * k;
                for ky in 0..k {
                    for kx in 0..k {
                        gw[wbase + ky * k + kx] += dot(xa, yb, ky, kx, g);
                    }
                }
            }
        }
    }
    grads
}

/// Gradients of a convolution layer with respect to its input and parameters.
pub fn conv_backward(
    input: &Tensor4,
    params: &LayerParams,
    upstream: &Tensor4,
) -> Result<(Tensor4, LayerGrads)> {
    let out_dims = check_upstream(input, params, upstream)?;
    let in_dims = input.dims();
    let k = params.kernel_size();
    let (cin, cout) = (params.in_channels(), params.out_channels());
    let weights = params.weight.data();

    let mut gin = Tensor4::from_parts(in_dims, vec![0.0; in_dims.len()]);
    match params.mode {
        ConvMode::Conv => {
            let g = Geometry::new(out_dims, in_dims, params);
            for n in 0..in_dims.n {
                for ci in 0..cin {
                    let dst = gin.plane_mut(n, ci);
                    for co in 0..cout {
                        let src = upstream.plane(n, co);
                        let wbase = (co * cin + ci) * k * k;
                        for ky in 0..k {
                            for kx in 0..k {
                                scatter(dst, src, weights[wbase + ky * k + kx], ky, kx, g);
                            }
                        }
                    }
                }
            }
        }
        ConvMode::Transposed => {
            let g = Geometry::new(in_dims, out_dims, params);
            for n in 0..in_dims.n {
                for ci in 0..cin {
                    let dst = gin.plane_mut(n, ci);
                    for co in 0..cout {
                        let src = upstream.plane(n, co);
                        let wbase = (co * cin + ci) * k * k;
                        for ky in 0..k {
                            for kx in 0..k {
                                gather(dst, src, weights[wbase + ky * k + kx], ky, kx, g);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((gin, param_grads(input, params, upstream)))
}

/// Parameter gradients only; skips the input-gradient computation.
pub fn conv_backward_params(
    input: &Tensor4,
    params: &LayerParams,
    upstream: &Tensor4,
) -> Result<LayerGrads> {
    check_upstream(input, params, upstream)?;
    Ok(param_grads(input, params, upstream))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: Dims4) -> Tensor4 {
        let data = (0..dims.len()).map(|i| i as f64).collect();
        Tensor4::from_vec(dims, data).unwrap()
    }

    /// Direct zero-padded convolution, six nested loops per batch item.
    fn direct_conv(input: &Tensor4, p: &LayerParams) -> Tensor4 {
        let d = input.dims();
        let od = p.output_dims(d).unwrap();
        let (k, s, pad) = (p.kernel_size() as isize, p.stride as isize, p.padding() as isize);
        let mut out = Tensor4::zeros(od).unwrap();
        for n in 0..d.n {
            for co in 0..od.c {
                for oy in 0..od.h {
                    for ox in 0..od.w {
                        let mut acc = p.bias.data()[co];
                        for ci in 0..d.c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = oy as isize * s + ky - pad;
                                    let ix = ox as isize * s + kx - pad;
                                    if iy < 0 || ix < 0 || iy >= d.h as isize || ix >= d.w as isize {
                                        continue;
                                    }
                                    acc += p.weight.get(co, ci, ky as usize, kx as usize)
                                        * input.get(n, ci, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.set(n, co, oy, ox, acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_1x1_kernel() {
        let mut p = LayerParams::new(2, 2, 1, 1, ConvMode::Conv).unwrap();
        p.weight.set(0, 0, 0, 0, 1.0);
        p.weight.set(1, 1, 0, 0, 1.0);
        let x = ramp(Dims4::new(1, 2, 3, 4));
        assert_eq!(conv_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut p = LayerParams::new(1, 2, 3, 1, ConvMode::Conv).unwrap();
        p.bias.data_mut().copy_from_slice(&[0.25, -1.5]);
        let y = conv_forward(&ramp(Dims4::new(1, 1, 4, 4)), &p).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 0.25));
        assert!(y.plane(0, 1).iter().all(|&v| v == -1.5));
    }

    #[test]
    fn ramp_3x3_matches_direct_oracle() {
        let mut p = LayerParams::new(1, 1, 3, 1, ConvMode::Conv).unwrap();
        let w = [0.5, -1.0, 0.25, 2.0, 1.0, -0.75, 0.125, 0.0, 3.0];
        p.weight.data_mut().copy_from_slice(&w);
        p.bias.data_mut()[0] = 0.1;
        let x = ramp(Dims4::new(1, 1, 4, 4));
        let got = conv_forward(&x, &p).unwrap();
        let want = direct_conv(&x, &p);
        assert_eq!(got.data(), want.data());
        // Centre pixel (1,1): sum of w * x over the 3x3 neighbourhood {0,1,2,4,5,6,8,9,10}.
        let centre = 0.1 + 0.0 * 0.5 - 1.0 + 0.5 + 8.0 + 5.0 - 4.5 + 1.0 + 0.0 + 30.0;
        assert!((got.get(0, 0, 1, 1) - centre).abs() < 1e-12);
    }

    #[test]
    fn strided_conv_matches_direct_oracle() {
        let mut p = LayerParams::new(2, 3, 3, 2, ConvMode::Conv).unwrap();
        for (i, v) in p.weight.data_mut().iter_mut().enumerate() {
            *v = ((i * 7 % 11) as f64 - 5.0) / 4.0;
        }
        p.bias.data_mut().copy_from_slice(&[0.1, 0.2, 0.3]);
        let x = ramp(Dims4::new(2, 2, 6, 4));
        let got = conv_forward(&x, &p).unwrap();
        assert_eq!(got.dims(), Dims4::new(2, 3, 3, 2));
        let want = direct_conv(&x, &p);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_doubles_dims() {
        let p = LayerParams::new(3, 2, 3, 2, ConvMode::Transposed).unwrap();
        let y = conv_forward(&ramp(Dims4::new(1, 3, 4, 5)), &p).unwrap();
        assert_eq!(y.dims(), Dims4::new(1, 2, 8, 10));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let p = LayerParams::new(3, 2, 3, 1, ConvMode::Conv).unwrap();
        let err = conv_forward(&ramp(Dims4::new(1, 2, 4, 4)), &p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("1x2x4x4") && msg.contains("2x3x3x3"), "{msg}");

        let p2 = LayerParams::new(1, 1, 3, 2, ConvMode::Conv).unwrap();
        assert!(conv_forward(&ramp(Dims4::new(1, 1, 5, 4)), &p2).is_err());

        let p3 = LayerParams::new(1, 1, 3, 1, ConvMode::Conv).unwrap();
        let x = ramp(Dims4::new(1, 1, 4, 4));
        let bad = Tensor4::zeros(Dims4::new(1, 1, 2, 2)).unwrap();
        assert!(conv_backward(&x, &p3, &bad).is_err());
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(LayerParams::new(1, 1, 2, 1, ConvMode::Conv).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut p = LayerParams::new(2, 2, 3, 2, ConvMode::Conv).unwrap();
        p.weight.data_mut().iter_mut().for_each(|v| *v = 0.3);
        let x = ramp(Dims4::new(1, 2, 4, 4));
        let up = Tensor4::zeros(Dims4::new(1, 2, 2, 2)).unwrap();
        let (gin, gp) = conv_backward(&x, &p, &up).unwrap();
        assert!(gin.data().iter().all(|&v| v == 0.0));
        assert!(gp.weight.data().iter().all(|&v| v == 0.0));
        assert!(gp.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_gradient_through() {
        let mut p = LayerParams::new(1, 1, 1, 1, ConvMode::Conv).unwrap();
        p.weight.data_mut()[0] = 1.0;
        let x = ramp(Dims4::new(1, 1, 3, 3));
        let up = ramp(Dims4::new(1, 1, 3, 3));
        let (gin, _) = conv_backward(&x, &p, &up).unwrap();
        assert_eq!(gin, up);
    }

    #[test]
    fn transposed_is_adjoint_of_strided_conv() {
        // <T(x), y> == <x, C(y)> when C uses the same kernels with in/out swapped.
        let mut t = LayerParams::new(2, 3, 3, 2, ConvMode::Transposed).unwrap();
        let mut c = LayerParams::new(3, 2, 3, 2, ConvMode::Conv).unwrap();
        for co in 0..3 {
            for ci in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let v = ((co * 31 + ci * 17 + ky * 5 + kx) % 13) as f64 / 7.0 - 0.9;
                        t.weight.set(co, ci, ky, kx, v);
                        c.weight.set(ci, co, ky, kx, v);
                    }
                }
            }
        }
        let x = ramp(Dims4::new(1, 2, 3, 4));
        let y = Tensor4::from_vec(
            Dims4::new(1, 3, 6, 8),
            (0..144).map(|i| ((i * 37 % 29) as f64) / 10.0 - 1.0).collect(),
        )
        .unwrap();
        let tx = conv_forward(&x, &t).unwrap();
        let cy = conv_forward(&y, &c).unwrap();
        let lhs: f64 = tx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(cy.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}
