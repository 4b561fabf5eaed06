//! Post-processing filter network.
//!
//! ```text
//! x̂ ─┬─ cat(q planes) ─ conv ─ e0 ─ down1 ─ e1 ─ … ─ downD ─ eD ─ ResBlock×R ─┐
//!    │                          │            │                                 │
//!    │                          │            └──────── cat ─ fuse ─ up ◄───────┘
//!    │                          └──────────── cat ─ fuse ─ up ◄──── …
//!    └──────────────────────────────────────────── + ◄── output conv
//! ```
//!
//! Stage `s` runs at `1/2^s` resolution with `base_channels * 2^s` channels.
//! Every convolution is followed by a leaky ReLU except the residual-block
//! outputs and the final output conv. The final conv starts at zero, so a
//! freshly initialized filter is the identity.

use crate::codec::{QpLevel, QP_VALUES};
use crate::error::{Error, Result};
use crate::nn::{
    conv_backward, conv_backward_params, conv_forward, leaky_relu_backward, leaky_relu_forward,
    ConvMode, Dims4, LayerGrads, LayerParams, Tensor4,
};
use crate::rng::seeded;

pub const QP_CHANNELS: usize = QP_VALUES.len();

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterArch {
    pub image_channels: usize,
    pub base_channels: usize,
    /// Number of stride-2 stages.
    pub depth: usize,
    pub res_blocks: usize,
    pub kernel: usize,
    pub slope: f64,
}

impl Default for FilterArch {
    fn default() -> Self {
        Self {
            image_channels: 1,
            base_channels: 16,
            depth: 2,
            res_blocks: 3,
            kernel: 3,
            slope: 0.1,
        }
    }
}

impl FilterArch {
    pub fn with_base_channels(mut self, c: usize) -> Self {
        self.base_channels = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_channels == 0 || self.base_channels == 0 {
            return Err(Error::Parameter("channel counts must be positive".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Parameter(format!("kernel {} must be odd", self.kernel)));
        }
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::Parameter(format!("slope {} outside [0, 1)", self.slope)));
        }
        if self.depth > 8 {
            return Err(Error::Parameter(format!("depth {} too large", self.depth)));
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this.
    pub fn granularity(&self) -> usize {
        1 << self.depth
    }

    pub fn channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn layer_count(&self) -> usize {
        2 + 3 * self.depth + 2 * self.res_blocks
    }

    fn idx_down(&self, s: usize) -> usize {
        s
    }

    fn idx_res(&self, r: usize) -> (usize, usize) {
        let a = self.depth + 1 + 2 * r;
        (a, a + 1)
    }

    fn idx_up(&self, s: usize) -> (usize, usize) {
        let base = self.depth + 1 + 2 * self.res_blocks + 2 * (self.depth - s);
        (base, base + 1)
    }

    fn idx_output(&self) -> usize {
        self.layer_count() - 1
    }

    /// Human-readable name of layer `i`, used in diagnostics.
    pub fn layer_name(&self, i: usize) -> String {
        let d = self.depth;
        let r_end = d + 1 + 2 * self.res_blocks;
        if i == 0 {
            "input".into()
        } else if i <= d {
            format!("down{i}")
        } else if i < r_end {
            let r = (i - d - 1) / 2;
            format!("res{r}.{}", if (i - d - 1).is_multiple_of(2) { "a" } else { "b" })
        } else if i < self.idx_output() {
            let s = d - (i - r_end) / 2;
            format!("up{s}.{}", if (i - r_end).is_multiple_of(2) { "tconv" } else { "fuse" })
        } else {
            "output".into()
        }
    }

    /// Zero-initialized layers in canonical order.
    fn empty_layers(&self) -> Result<Vec<LayerParams>> {
        let k = self.kernel;
        let mut layers = Vec::with_capacity(self.layer_count());
        layers.push(LayerParams::new(
            self.image_channels + QP_CHANNELS,
            self.channels(0),
            k,
            1,
            ConvMode::Conv,
        )?);
        for s in 1..=self.depth {
            layers.push(LayerParams::new(self.channels(s - 1), self.channels(s), k, 2, ConvMode::Conv)?);
        }
        let cb = self.channels(self.depth);
        for _ in 0..self.res_blocks {
            layers.push(LayerParams::new(cb, cb, k, 1, ConvMode::Conv)?);
            layers.push(LayerParams::new(cb, cb, k, 1, ConvMode::Conv)?);
        }
        for s in (1..=self.depth).rev() {
            let (hi, lo) = (self.channels(s), self.channels(s - 1));
            layers.push(LayerParams::new(hi, lo, k, 2, ConvMode::Transposed)?);
            layers.push(LayerParams::new(2 * lo, lo, k, 1, ConvMode::Conv)?);
        }
        layers.push(LayerParams::new(self.channels(0), self.image_channels, k, 1, ConvMode::Conv)?);
        Ok(layers)
    }
}

/// One-hot QP indicator, fed to the network as constant planes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpIndicator {
    one_hot: [f64; QP_CHANNELS],
}

impl QpIndicator {
    pub fn new(qp: QpLevel) -> Self {
        let mut one_hot = [0.0; QP_CHANNELS];
        one_hot[qp.index()] = 1.0;
        Self { one_hot }
    }

    pub fn values(&self) -> &[f64; QP_CHANNELS] {
        &self.one_hot
    }

    pub fn planes(&self, n: usize, h: usize, w: usize) -> Tensor4 {
        let dims = Dims4::new(n, QP_CHANNELS, h, w);
        let mut data = Vec::with_capacity(dims.len());
        for _ in 0..n {
            for &v in &self.one_hot {
                data.extend(std::iter::repeat_n(v, h * w));
            }
        }
        Tensor4::from_parts(dims, data)
    }
}

/// Learnable parameters of one filter.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterParams {
    pub id: usize,
    pub arch: FilterArch,
    pub layers: Vec<LayerParams>,
}

/// He-initialized filter with a zero output layer.
pub fn init_filter(arch: FilterArch, seed: u64, id: usize) -> Result<FilterParams> {
    arch.validate()?;
    let mut layers = arch.empty_layers()?;
    let mut rng = seeded(seed);
    let last = layers.len() - 1;
    for layer in &mut layers[..last] {
        layer.he_init(&mut rng);
    }
    Ok(FilterParams { id, arch, layers })
}

impl FilterParams {
    pub fn from_layers(id: usize, arch: FilterArch, layers: Vec<LayerParams>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.empty_layers()?;
        if expected.len() != layers.len() {
            return Err(Error::shape(format!(
                "architecture needs {} layers, got {}",
                expected.len(),
                layers.len()
            )));
        }
        for (i, (e, l)) in expected.iter().zip(&layers).enumerate() {
            if e.weight.dims() != l.weight.dims() || e.stride != l.stride || e.mode != l.mode {
                return Err(Error::shape(format!(
                    "layer {} ({}) is {} stride {}, architecture expects {} stride {}",
                    i,
                    arch.layer_name(i),
                    l.weight.dims(),
                    l.stride,
                    e.weight.dims(),
                    e.stride
                )));
            }
        }
        Ok(Self { id, arch, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Weight and bias tensors in layer order, for the optimizer.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor4> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect()
    }

    pub fn tensor_labels(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| {
                let name = self.arch.layer_name(i);
                [
                    format!("filter {} {name}.weight", self.id),
                    format!("filter {} {name}.bias", self.id),
                ]
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weight.zero_grad();
            l.bias.zero_grad();
        }
    }

    /// Adds `grads` (one entry per layer) into the stored gradients.
    pub fn accumulate_grads(&mut self, grads: &[LayerGrads]) -> Result<()> {
        if grads.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "{} layer gradients for {} layers",
                grads.len(),
                self.layers.len()
            )));
        }
        for (l, g) in self.layers.iter_mut().zip(grads) {
            l.weight.accumulate_grad(g.weight.data())?;
            l.bias.accumulate_grad(g.bias.data())?;
        }
        Ok(())
    }
}

struct ResTrace {
    input: Tensor4,
    pre: Tensor4,
    act: Tensor4,
}

struct UpTrace {
    stage: usize,
    input: Tensor4,
    t_pre: Tensor4,
    cat: Tensor4,
    fuse_pre: Tensor4,
}

/// Intermediate activations of one forward pass, consumed by [`filter_backward`].
pub struct FilterTrace {
    x0: Tensor4,
    z0: Tensor4,
    enc_pre: Vec<Tensor4>,
    enc: Vec<Tensor4>,
    res: Vec<ResTrace>,
    up: Vec<UpTrace>,
    last: Tensor4,
}

fn check_input(xhat: &Tensor4, arch: &FilterArch) -> Result<()> {
    let d = xhat.dims();
    if d.c != arch.image_channels {
        return Err(Error::shape(format!(
            "input {d} has {} channels, filter expects {}",
            d.c, arch.image_channels
        )));
    }
    let g = arch.granularity();
    if !d.h.is_multiple_of(g) || !d.w.is_multiple_of(g) {
        return Err(Error::shape(format!(
            "input {d} spatial dims must be multiples of {g}; pad first"
        )));
    }
    Ok(())
}

/// Filter output `x̂ + net(x̂, q)`.
pub fn filter_forward(xhat: &Tensor4, q: &QpIndicator, w: &FilterParams) -> Result<Tensor4> {
    Ok(filter_forward_traced(xhat, q, w)?.0)
}

pub fn filter_forward_traced(
    xhat: &Tensor4,
    q: &QpIndicator,
    w: &FilterParams,
) -> Result<(Tensor4, FilterTrace)> {
    let arch = &w.arch;
    check_input(xhat, arch)?;
    let d = xhat.dims();
    let slope = arch.slope;
    let layers = &w.layers;

    let x0 = Tensor4::concat_channels(xhat, &q.planes(d.n, d.h, d.w))?;
    let z0 = conv_forward(&x0, &layers[0])?;
    let mut enc = vec![leaky_relu_forward(&z0, slope)];
    let mut enc_pre = Vec::with_capacity(arch.depth);
    for s in 1..=arch.depth {
        let z = conv_forward(&enc[s - 1], &layers[arch.idx_down(s)])?;
        enc.push(leaky_relu_forward(&z, slope));
        enc_pre.push(z);
    }

    let mut h = enc[arch.depth].clone();
    let mut res = Vec::with_capacity(arch.res_blocks);
    for r in 0..arch.res_blocks {
        let (ia, ib) = arch.idx_res(r);
        let pre = conv_forward(&h, &layers[ia])?;
        let act = leaky_relu_forward(&pre, slope);
        let delta = conv_forward(&act, &layers[ib])?;
        let next = h.add(&delta)?;
        res.push(ResTrace { input: h, pre, act });
        h = next;
    }

    let mut up = Vec::with_capacity(arch.depth);
    for s in (1..=arch.depth).rev() {
        let (it, ifu) = arch.idx_up(s);
        let t_pre = conv_forward(&h, &layers[it])?;
        let t_act = leaky_relu_forward(&t_pre, slope);
        let cat = Tensor4::concat_channels(&t_act, &enc[s - 1])?;
        let fuse_pre = conv_forward(&cat, &layers[ifu])?;
        let next = leaky_relu_forward(&fuse_pre, slope);
        up.push(UpTrace {
            stage: s,
            input: h,
            t_pre,
            cat,
            fuse_pre,
        });
        h = next;
    }

    let delta = conv_forward(&h, &layers[arch.idx_output()])?;
    let out = xhat.add(&delta)?;
    Ok((
        out,
        FilterTrace {
            x0,
            z0,
            enc_pre,
            enc,
            res,
            up,
            last: h,
        },
    ))
}

/// Parameter gradients given the gradient of the loss with respect to the filter output.
pub fn filter_backward(
    trace: &FilterTrace,
    w: &FilterParams,
    upstream: &Tensor4,
) -> Result<Vec<LayerGrads>> {
    let arch = &w.arch;
    let slope = arch.slope;
    let layers = &w.layers;
    let mut grads: Vec<Option<LayerGrads>> = vec![None; layers.len()];
    let mut enc_grad: Vec<Option<Tensor4>> = vec![None; arch.depth + 1];

    let add_into = |slot: &mut Option<Tensor4>, g: Tensor4| -> Result<()> {
        match slot {
            Some(acc) => acc.add_assign(&g),
            None => {
                *slot = Some(g);
                Ok(())
            }
        }
    };

    let (mut gh, gp) = conv_backward(&trace.last, &layers[arch.idx_output()], upstream)?;
    grads[arch.idx_output()] = Some(gp);

    for u in trace.up.iter().rev() {
        let s = u.stage;
        let (it, ifu) = arch.idx_up(s);
        let g_fuse = leaky_relu_backward(&u.fuse_pre, &gh, slope)?;
        let (g_cat, gp) = conv_backward(&u.cat, &layers[ifu], &g_fuse)?;
        grads[ifu] = Some(gp);
        let (g_t_act, g_lateral) = g_cat.split_channels(arch.channels(s - 1))?;
        add_into(&mut enc_grad[s - 1], g_lateral)?;
        let g_t = leaky_relu_backward(&u.t_pre, &g_t_act, slope)?;
        let (g_in, gp) = conv_backward(&u.input, &layers[it], &g_t)?;
        grads[it] = Some(gp);
        gh = g_in;
    }

    for (r, rt) in trace.res.iter().enumerate().rev() {
        let (ia, ib) = arch.idx_res(r);
        let (g_act, gp) = conv_backward(&rt.act, &layers[ib], &gh)?;
        grads[ib] = Some(gp);
        let g_pre = leaky_relu_backward(&rt.pre, &g_act, slope)?;
        let (g_in, gp) = conv_backward(&rt.input, &layers[ia], &g_pre)?;
        grads[ia] = Some(gp);
        gh.add_assign(&g_in)?;
    }
    add_into(&mut enc_grad[arch.depth], gh)?;

    for s in (1..=arch.depth).rev() {
        let g_e = enc_grad[s].take().expect("encoder gradient is always set");
        let g_z = leaky_relu_backward(&trace.enc_pre[s - 1], &g_e, slope)?;
        let (g_prev, gp) = conv_backward(&trace.enc[s - 1], &layers[arch.idx_down(s)], &g_z)?;
        grads[arch.idx_down(s)] = Some(gp);
        add_into(&mut enc_grad[s - 1], g_prev)?;
    }

    let g_e0 = enc_grad[0].take().expect("encoder gradient is always set");
    let g_z0 = leaky_relu_backward(&trace.z0, &g_e0, slope)?;
    grads[0] = Some(conv_backward_params(&trace.x0, &layers[0], &g_z0)?);

    Ok(grads.into_iter().map(|g| g.expect("every layer visited")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> FilterArch {
        FilterArch::default().with_base_channels(2)
    }

    fn input(h: usize, w: usize) -> Tensor4 {
        let data = (0..h * w).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        Tensor4::from_vec(Dims4::new(1, 1, h, w), data).unwrap()
    }

    #[test]
    fn layer_names_cover_topology() {
        let arch = FilterArch::default();
        let names: Vec<_> = (0..arch.layer_count()).map(|i| arch.layer_name(i)).collect();
        assert_eq!(
            names,
            [
                "input", "down1", "down2", "res0.a", "res0.b", "res1.a", "res1.b", "res2.a",
                "res2.b", "up2.tconv", "up2.fuse", "up1.tconv", "up1.fuse", "output"
            ]
        );
    }

    #[test]
    fn zero_output_layer_is_identity() {
        let w = init_filter(small_arch(), 7, 1).unwrap();
        let x = input(8, 8);
        let q = QpIndicator::new(QpLevel::new(42).unwrap());
        let y = filter_forward(&x, &q, &w).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn output_dims_match_paper_patch_sizes() {
        let mut w = init_filter(FilterArch::default().with_base_channels(1), 3, 1).unwrap();
        let last = w.layers.len() - 1;
        w.layers[last].weight.data_mut().iter_mut().for_each(|v| *v = 0.01);
        let q = QpIndicator::new(QpLevel::new(22).unwrap());
        for side in [128, 256] {
            let y = filter_forward(&input(side, side), &q, &w).unwrap();
            assert_eq!(y.dims(), Dims4::new(1, 1, side, side));
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let w = init_filter(small_arch(), 7, 1).unwrap();
        let q = QpIndicator::new(QpLevel::new(22).unwrap());
        assert!(matches!(filter_forward(&input(6, 8), &q, &w), Err(Error::Shape(_))));
    }

    #[test]
    fn seeds_control_parameters() {
        let a = init_filter(small_arch(), 11, 1).unwrap();
        let b = init_filter(small_arch(), 11, 1).unwrap();
        let c = init_filter(small_arch(), 12, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.layers, c.layers);
    }

    #[test]
    fn qp_indicator_is_one_hot() {
        for qp in QpLevel::all() {
            let q = QpIndicator::new(qp);
            assert_eq!(q.values().iter().sum::<f64>(), 1.0);
            assert_eq!(q.values()[qp.index()], 1.0);
        }
        let planes = QpIndicator::new(QpLevel::new(27).unwrap()).planes(1, 2, 2);
        assert!(planes.plane(0, 1).iter().all(|&v| v == 1.0));
        assert!(planes.plane(0, 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn from_layers_checks_shapes() {
        let w = init_filter(small_arch(), 1, 0).unwrap();
        assert!(FilterParams::from_layers(0, small_arch(), w.layers.clone()).is_ok());
        assert!(FilterParams::from_layers(0, FilterArch::default(), w.layers).is_err());
    }
}
