//! RD curves, BD-rate and usage statistics.

use compfilt_core::bank::{FilterBank, Routing};
use compfilt_core::blockwise::BlockGrid;
use compfilt_core::codec::QpLevel;
use compfilt_core::distortion::Metric;
use compfilt_core::eval::{
    bd_rate, build_rd_curve, evaluate_blockwise, usage_stats, CodedSet, CurveMode, RdCurve, RdPoint,
};
use compfilt_core::filter::FilterArch;
use compfilt_core::synth::two_class_dataset;
use compfilt_core::trainer::{InitSeeds, QpRangePartition};
use proptest::prelude::*;

fn seven_point(rates: impl Fn(usize) -> f64, quality: impl Fn(usize) -> f64) -> RdCurve {
    let pts = (0..7)
        .map(|i| RdPoint {
            qp: 22 + 5 * i as u32,
            rate: rates(i),
            quality: quality(i),
        })
        .collect();
    RdCurve::new("c", pts).unwrap()
}

fn anchor() -> RdCurve {
    seven_point(|i| 2.5 * 0.6f64.powi(i as i32), |i| 44.0 - 3.1 * i as f64 - 0.05 * (i * i) as f64)
}

#[test]
fn bd_rate_of_identical_curves_is_zero() {
    let a = anchor();
    assert!(bd_rate(&a, &a).unwrap().abs() < 1e-9);
}

#[test]
fn doubled_rate_is_plus_hundred() {
    let a = anchor();
    let t = seven_point(|i| 2.0 * a.points()[i].rate, |i| a.points()[i].quality);
    assert!((bd_rate(&a, &t).unwrap() - 100.0).abs() < 0.1);
}

#[test]
fn halved_rate_is_minus_fifty() {
    let a = anchor();
    let t = seven_point(|i| 0.5 * a.points()[i].rate, |i| a.points()[i].quality);
    assert!((bd_rate(&a, &t).unwrap() + 50.0).abs() < 0.1);
}

proptest! {
    #[test]
    fn bd_rate_sign_flips_on_swap(scale in 0.3f64..3.0, shift in -1.0f64..1.0) {
        prop_assume!((scale - 1.0).abs() > 1e-3);
        let a = anchor();
        let t = seven_point(|i| scale * a.points()[i].rate, |i| a.points()[i].quality + shift);
        let fwd = bd_rate(&a, &t).unwrap();
        let back = bd_rate(&t, &a).unwrap();
        prop_assume!(fwd.abs() > 1e-6);
        prop_assert!(fwd.signum() == -back.signum(), "{} {}", fwd, back);
    }

    #[test]
    fn bd_rate_self_is_zero(r0 in 0.5f64..5.0, decay in 0.3f64..0.9, q0 in 25.0f64..50.0, dq in 0.5f64..4.0) {
        let c = seven_point(|i| r0 * decay.powi(i as i32), |i| q0 - dq * i as f64);
        prop_assert!(bd_rate(&c, &c).unwrap().abs() < 1e-9);
    }
}

fn arch() -> FilterArch {
    FilterArch::default().with_base_channels(2)
}

fn offset_bank(offsets: &[f64], routing: Routing) -> FilterBank {
    let mut bank = FilterBank::init(arch(), offsets.len(), 2, InitSeeds::Distinct, routing).unwrap();
    for (f, &o) in bank.filters.iter_mut().zip(offsets) {
        let last = f.layers.len() - 1;
        f.layers[last].bias.data_mut()[0] = o;
    }
    bank
}

fn coded(n: usize, size: usize) -> CodedSet {
    let (imgs, _) = two_class_dataset(n, size, 23).unwrap();
    CodedSet::new(imgs, &QpLevel::all()).unwrap()
}

#[test]
fn anchor_rates_decrease_with_qp() {
    let set = coded(2, 32);
    let c = build_rd_curve("anchor", &set, None, CurveMode::Anchor, Metric::Mse).unwrap();
    assert_eq!(c.points().len(), 7);
    for w in c.points().windows(2) {
        assert!(w[1].rate < w[0].rate && w[1].quality < w[0].quality);
    }
}

#[test]
fn whole_image_shares_anchor_rates() {
    let set = coded(2, 32);
    let a = build_rd_curve("anchor", &set, None, CurveMode::Anchor, Metric::Mse).unwrap();
    let banks = [
        offset_bank(&[0.0, 0.01], Routing::Competitive),
        offset_bank(&[0.01], Routing::Single),
        offset_bank(&[0.0, 0.01, -0.01, 0.02], Routing::QpRanges(QpRangePartition::default())),
    ];
    for bank in &banks {
        let w = build_rd_curve("whole", &set, Some(bank), CurveMode::WholeImage, Metric::Mse).unwrap();
        for (p, q) in a.points().iter().zip(w.points()) {
            assert_eq!(p.rate, q.rate);
        }
    }
    // an identity filter in a competitive bank can only help per image
    let w = build_rd_curve("whole", &set, Some(&banks[0]), CurveMode::WholeImage, Metric::Mse).unwrap();
    for (p, q) in a.points().iter().zip(w.points()) {
        assert!(q.quality >= p.quality);
    }
}

#[test]
fn blockwise_rate_carries_two_bits_per_block() {
    let set = coded(2, 40);
    let bank = offset_bank(&[0.0, 0.01, -0.01, 0.0], Routing::Competitive);
    let a = build_rd_curve("anchor", &set, None, CurveMode::Anchor, Metric::Mse).unwrap();
    let run = evaluate_blockwise("block", &set, &bank, 16, Metric::Mse).unwrap();
    let blocks: usize = set.images.iter().map(|i| BlockGrid::for_image(i, 16).unwrap().len()).sum();
    let pixels: usize = set.images.iter().map(|i| i.pixels()).sum();
    for (p, q) in a.points().iter().zip(run.curve.points()) {
        let extra_bits = (q.rate - p.rate) * pixels as f64;
        assert!((extra_bits - (blocks * 2) as f64).abs() < 1e-6, "{extra_bits}");
    }
    for (d, f) in run.distortion.iter().flatten().zip(run.fixed.iter().flatten()) {
        assert!(f.iter().all(|&v| *d <= v));
    }
}

#[test]
fn usage_rows_on_simplex() {
    let set = coded(2, 32);
    let bank = offset_bank(&[0.0, 0.01, -0.01, 0.03], Routing::Competitive);
    let u = usage_stats(&set, &bank, 16, Metric::Mse).unwrap();
    for row in u.fractions() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let single = usage_stats(&set, &offset_bank(&[0.0], Routing::Single), 16, Metric::Mse).unwrap();
    assert!(single.fractions().iter().all(|r| r == &[1.0]));
}

#[test]
fn worse_rival_gets_no_usage() {
    let set = coded(3, 32);
    let bank = offset_bank(&[0.0, 0.5], Routing::Competitive);
    let u = usage_stats(&set, &bank, 16, Metric::Mse).unwrap();
    assert!(u.fractions().iter().all(|r| r == &[1.0, 0.0]));
}
