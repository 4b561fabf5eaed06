//! Central finite-difference checks of every backward pass.

mod common;

use common::*;
use compfilt_core::codec::QpLevel;
use compfilt_core::distortion::{distortion_and_grad, tensor_distortion, Metric};
use compfilt_core::filter::{filter_backward, filter_forward, filter_forward_traced, init_filter, FilterArch, QpIndicator};
use compfilt_core::nn::{conv_backward, conv_forward, leaky_relu_backward, leaky_relu_forward, ConvMode, Dims4, LayerParams, Tensor4};
use compfilt_core::rng::seeded;

fn random_layer(cin: usize, cout: usize, k: usize, stride: usize, mode: ConvMode, seed: u64) -> LayerParams {
    let mut p = LayerParams::new(cin, cout, k, stride, mode).unwrap();
    p.he_init(&mut seeded(seed));
    p.bias = random_tensor(p.bias.dims(), seed + 1);
    p
}

fn check_conv(label: &str, p: &LayerParams, input_dims: Dims4) {
    let input = random_tensor(input_dims, 11);
    let out_dims = p.output_dims(input_dims).unwrap();
    let r = random_tensor(out_dims, 12);
    let (gin, grads) = conv_backward(&input, p, &r).unwrap();

    let mut x = input.data().to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            central_difference(&mut x, i, |v| {
                dot(&conv_forward(&Tensor4::from_vec(input_dims, v.to_vec()).unwrap(), p).unwrap(), &r)
            })
        })
        .collect();
    assert_gradient(&format!("{label} input"), gin.data(), &numeric);

    let mut w = p.weight.data().to_vec();
    let numeric: Vec<f64> = (0..w.len())
        .map(|i| {
            central_difference(&mut w, i, |v| {
                let mut q = p.clone();
                q.weight.data_mut().copy_from_slice(v);
                dot(&conv_forward(&input, &q).unwrap(), &r)
            })
        })
        .collect();
    assert_gradient(&format!("{label} weight"), grads.weight.data(), &numeric);

    let mut b = p.bias.data().to_vec();
    let numeric: Vec<f64> = (0..b.len())
        .map(|i| {
            central_difference(&mut b, i, |v| {
                let mut q = p.clone();
                q.bias.data_mut().copy_from_slice(v);
                dot(&conv_forward(&input, &q).unwrap(), &r)
            })
        })
        .collect();
    assert_gradient(&format!("{label} bias"), grads.bias.data(), &numeric);
}

#[test]
fn conv_stride_one() {
    let p = random_layer(3, 2, 3, 1, ConvMode::Conv, 1);
    check_conv("conv3x3/s1", &p, Dims4 { n: 2, c: 3, h: 6, w: 5 });
}

#[test]
fn conv_stride_two() {
    let p = random_layer(2, 3, 3, 2, ConvMode::Conv, 2);
    check_conv("conv3x3/s2", &p, Dims4 { n: 1, c: 2, h: 8, w: 6 });
}

#[test]
fn conv_one_by_one() {
    let p = random_layer(4, 2, 1, 1, ConvMode::Conv, 3);
    check_conv("conv1x1", &p, Dims4 { n: 1, c: 4, h: 3, w: 3 });
}

#[test]
fn transposed_conv_stride_two() {
    let p = random_layer(3, 2, 3, 2, ConvMode::Transposed, 4);
    check_conv("tconv3x3/s2", &p, Dims4 { n: 2, c: 3, h: 4, w: 3 });
}

#[test]
fn leaky_relu() {
    let dims = Dims4 { n: 1, c: 2, h: 4, w: 4 };
    let input = random_tensor(dims, 5);
    let r = random_tensor(dims, 6);
    let g = leaky_relu_backward(&input, &r, 0.1).unwrap();
    let mut x = input.data().to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| central_difference(&mut x, i, |v| dot(&leaky_relu_forward(&Tensor4::from_vec(dims, v.to_vec()).unwrap(), 0.1), &r)))
        .collect();
    assert_gradient("leaky relu", g.data(), &numeric);
}

fn check_distortion(metric: Metric) {
    let dims = Dims4 { n: 1, c: 1, h: 6, w: 6 };
    let target = random_tensor(dims, 7);
    let output = random_tensor(dims, 8);
    let (_, g) = distortion_and_grad(&output, &target, metric).unwrap();
    let mut x = output.data().to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            central_difference(&mut x, i, |v| {
                tensor_distortion(&Tensor4::from_vec(dims, v.to_vec()).unwrap(), &target, metric).unwrap()
            })
        })
        .collect();
    assert_gradient(metric.name(), g.data(), &numeric);
}

#[test]
fn mse_distortion() {
    check_distortion(Metric::Mse);
}

#[test]
fn proxy_distortion() {
    check_distortion(Metric::Proxy);
}

/// Every parameter of the full filter topology at base width 2 on an 8x8 input.
#[test]
fn full_filter() {
    let arch = FilterArch::default().with_base_channels(2);
    let mut f = init_filter(arch, 21, 0).unwrap();
    let last = f.layers.len() - 1;
    f.layers[last].he_init(&mut seeded(22));
    f.layers[last].bias = random_tensor(f.layers[last].bias.dims(), 23);

    let xhat = random_tensor(Dims4 { n: 1, c: 1, h: 8, w: 8 }, 24);
    let q = QpIndicator::new(QpLevel::new(37).unwrap());
    let r = random_tensor(xhat.dims(), 25);
    let (_, trace) = filter_forward_traced(&xhat, &q, &f).unwrap();
    let grads = filter_backward(&trace, &f, &r).unwrap();
    assert_eq!(grads.len(), f.layers.len());

    for l in 0..f.layers.len() {
        let name = arch.layer_name(l);
        for (part, analytic) in [("weight", &grads[l].weight), ("bias", &grads[l].bias)] {
            let mut f2 = f.clone();
            let numeric: Vec<f64> = (0..analytic.len())
                .map(|i| {
                    let t = if part == "weight" { &mut f2.layers[l].weight } else { &mut f2.layers[l].bias };
                    let orig = t.data()[i];
                    t.data_mut()[i] = orig + FD_STEP;
                    let plus = dot(&filter_forward(&xhat, &q, &f2).unwrap(), &r);
                    let t = if part == "weight" { &mut f2.layers[l].weight } else { &mut f2.layers[l].bias };
                    t.data_mut()[i] = orig - FD_STEP;
                    let minus = dot(&filter_forward(&xhat, &q, &f2).unwrap(), &r);
                    let t = if part == "weight" { &mut f2.layers[l].weight } else { &mut f2.layers[l].bias };
                    t.data_mut()[i] = orig;
                    (plus - minus) / (2.0 * FD_STEP)
                })
                .collect();
            assert_gradient(&format!("{name} {part}"), analytic.data(), &numeric);
        }
    }
}
