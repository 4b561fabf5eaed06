//! Distortion measures between a filter output and the uncompressed target.
//!
//! `Mse` is the mean squared sample difference. `Proxy` is the mean squared
//! difference of feature maps from a frozen two-layer convolutional feature
//! extractor whose weights are drawn once from a fixed seed and never trained.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::nn::{
    conv_backward, conv_forward, leaky_relu_backward, leaky_relu_forward, ConvMode, LayerParams,
    Tensor4,
};
use crate::rng::seeded;

/// Seed of the frozen proxy feature extractor.
pub const PROXY_SEED: u64 = 0x5052_4F58_5946_4541;
pub const PROXY_FEATURES: usize = 8;
const PROXY_SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Metric {
    #[default]
    Mse,
    Proxy,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::Proxy => "proxy",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Metric::Mse),
            "proxy" => Ok(Metric::Proxy),
            other => Err(Error::Parameter(format!("unknown metric {other:?}"))),
        }
    }
}

/// Frozen stride-1 feature extractor: conv 3x3 (1 -> 8), leaky ReLU, conv 3x3 (8 -> 8).
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyExtractor {
    first: LayerParams,
    second: LayerParams,
}

struct ProxyTrace {
    pre: Tensor4,
    act: Tensor4,
    features: Tensor4,
}

impl ProxyExtractor {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let mut first = LayerParams::new(1, PROXY_FEATURES, 3, 1, ConvMode::Conv).unwrap();
        let mut second =
            LayerParams::new(PROXY_FEATURES, PROXY_FEATURES, 3, 1, ConvMode::Conv).unwrap();
        first.he_init(&mut rng);
        second.he_init(&mut rng);
        Self { first, second }
    }

    /// The shared extractor built from [`PROXY_SEED`].
    pub fn frozen() -> &'static ProxyExtractor {
        static EXTRACTOR: OnceLock<ProxyExtractor> = OnceLock::new();
        EXTRACTOR.get_or_init(|| ProxyExtractor::new(PROXY_SEED))
    }

    fn trace(&self, x: &Tensor4) -> Result<ProxyTrace> {
        let pre = conv_forward(x, &self.first)?;
        let act = leaky_relu_forward(&pre, PROXY_SLOPE);
        let features = conv_forward(&act, &self.second)?;
        Ok(ProxyTrace { pre, act, features })
    }

    pub fn features(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.trace(x)?.features)
    }

    pub fn distance(&self, a: &Tensor4, b: &Tensor4) -> Result<f64> {
        a.same_dims(b)?;
        let fa = self.features(a)?;
        let fb = self.features(b)?;
        Ok(mean_sq_diff(fa.data(), fb.data()))
    }

    fn distance_and_grad(&self, output: &Tensor4, target: &Tensor4) -> Result<(f64, Tensor4)> {
        output.same_dims(target)?;
        let t = self.trace(output)?;
        let ft = self.features(target)?;
        let n = ft.len() as f64;
        let loss = mean_sq_diff(t.features.data(), ft.data());
        let gf: Vec<f64> = t
            .features
            .data()
            .iter()
            .zip(ft.data())
            .map(|(a, b)| 2.0 * (a - b) / n)
            .collect();
        let gf = Tensor4::from_parts(t.features.dims(), gf);
        let (g_act, _) = conv_backward(&t.act, &self.second, &gf)?;
        let g_pre = leaky_relu_backward(&t.pre, &g_act, PROXY_SLOPE)?;
        let (g_in, _) = conv_backward(output, &self.first, &g_pre)?;
        Ok((loss, g_in))
    }
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    s / a.len() as f64
}

/// Distortion between two equally shaped tensors.
pub fn tensor_distortion(output: &Tensor4, target: &Tensor4, metric: Metric) -> Result<f64> {
    output.same_dims(target)?;
    match metric {
        Metric::Mse => Ok(mean_sq_diff(output.data(), target.data())),
        Metric::Proxy => ProxyExtractor::frozen().distance(output, target),
    }
}

/// Distortion and its gradient with respect to `output`.
pub fn distortion_and_grad(
    output: &Tensor4,
    target: &Tensor4,
    metric: Metric,
) -> Result<(f64, Tensor4)> {
    output.same_dims(target)?;
    match metric {
        Metric::Mse => {
            let n = output.len() as f64;
            let loss = mean_sq_diff(output.data(), target.data());
            let g = output
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| 2.0 * (a - b) / n)
                .collect();
            Ok((loss, Tensor4::from_parts(output.dims(), g)))
        }
        Metric::Proxy => ProxyExtractor::frozen().distance_and_grad(output, target),
    }
}

/// Distortion between two images under `metric`.
pub fn distortion(a: &ImagePlane, b: &ImagePlane, metric: Metric) -> Result<f64> {
    a.same_dims(b)?;
    tensor_distortion(&a.to_tensor(), &b.to_tensor(), metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(seed: usize) -> ImagePlane {
        ImagePlane::from_fn(8, 8, |y, x| ((x * 3 + y * 5 + seed) % 7) as f64 / 7.0).unwrap()
    }

    #[test]
    fn identical_images_have_zero_distortion() {
        let a = textured(1);
        assert_eq!(distortion(&a, &a, Metric::Mse).unwrap(), 0.0);
        assert_eq!(distortion(&a, &a, Metric::Proxy).unwrap(), 0.0);
    }

    #[test]
    fn mse_of_constant_offset() {
        let a = ImagePlane::filled(4, 4, 0.0).unwrap();
        let b = ImagePlane::filled(4, 4, 0.1).unwrap();
        assert!((distortion(&a, &b, Metric::Mse).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn proxy_is_frozen_and_seed_dependent() {
        let (a, b) = (textured(1), textured(4));
        let d1 = distortion(&a, &b, Metric::Proxy).unwrap();
        let d2 = ProxyExtractor::new(PROXY_SEED)
            .distance(&a.to_tensor(), &b.to_tensor())
            .unwrap();
        assert_eq!(d1.to_bits(), d2.to_bits());
        let d3 = ProxyExtractor::new(PROXY_SEED + 1)
            .distance(&a.to_tensor(), &b.to_tensor())
            .unwrap();
        assert_ne!(d1, d3);
        assert!(d1 > 0.0);
    }

    #[test]
    fn dim_mismatch_is_shape_error() {
        let a = ImagePlane::filled(4, 4, 0.0).unwrap();
        let b = ImagePlane::filled(4, 8, 0.0).unwrap();
        assert!(matches!(distortion(&a, &b, Metric::Mse), Err(Error::Shape(_))));
        assert!(matches!(distortion(&a, &b, Metric::Proxy), Err(Error::Shape(_))));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [Metric::Mse, Metric::Proxy] {
            assert_eq!(Metric::parse(m.name()).unwrap(), m);
        }
        assert!(Metric::parse("ssim").is_err());
    }
}
