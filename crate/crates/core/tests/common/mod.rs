#![allow(dead_code)]

use compfilt_core::nn::{Dims4, Tensor4};
use compfilt_core::rng::seeded;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn random_tensor(dims: Dims4, seed: u64) -> Tensor4 {
    let mut rng = seeded(seed);
    let data = (0..dims.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor4::from_vec(dims, data).unwrap()
}

pub fn dot(a: &Tensor4, b: &Tensor4) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` with respect to `x[i]`.
pub fn central_difference(x: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let plus = f(x);
    x[i] = orig - FD_STEP;
    let minus = f(x);
    x[i] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

/// Entries smaller than this are compared against it, since the central
/// difference itself carries roundoff of order `eps / FD_STEP`.
pub const FD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Worst relative error over all entries; panics with the offending index when
/// the tolerance is exceeded.
pub fn assert_gradient(label: &str, analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "{label}: length");
    let mut worst: f64 = 0.0;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let e = relative_error(a, n);
        assert!(e < FD_TOLERANCE, "{label}[{i}]: analytic {a:e}, numeric {n:e}, rel err {e:e}");
        worst = worst.max(e);
    }
    worst
}
