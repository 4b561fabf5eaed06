//! Seeded synthetic images in two content classes: smooth gradients and
//! high-contrast periodic textures.

use rand::Rng;

use crate::error::Result;
use crate::image::ImagePlane;
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContentClass {
    Smooth,
    Textured,
}

impl ContentClass {
    pub fn name(self) -> &'static str {
        match self {
            ContentClass::Smooth => "smooth",
            ContentClass::Textured => "textured",
        }
    }
}

/// Linear ramp plus a low-frequency wave, kept inside `[0.05, 0.95]`.
pub fn smooth_image(size: usize, seed: u64) -> Result<ImagePlane> {
    let mut rng = seeded(seed);
    let base: f64 = rng.random_range(0.3..0.7);
    let gy: f64 = rng.random_range(-0.3..0.3);
    let gx: f64 = rng.random_range(-0.3..0.3);
    let amp: f64 = rng.random_range(0.02..0.1);
    let fy: f64 = rng.random_range(0.5..1.5);
    let fx: f64 = rng.random_range(0.5..1.5);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let n = size as f64;
    ImagePlane::from_fn(size, size, |y, x| {
        let (u, v) = (y as f64 / n - 0.5, x as f64 / n - 0.5);
        let wave = (std::f64::consts::TAU * (fy * u + fx * v) + phase).sin();
        (base + gy * u + gx * v + amp * wave).clamp(0.05, 0.95)
    })
}

/// Checkerboard or oriented stripes with a short period.
pub fn textured_image(size: usize, seed: u64) -> Result<ImagePlane> {
    let mut rng = seeded(seed);
    let mid: f64 = rng.random_range(0.35..0.65);
    let amp: f64 = rng.random_range(0.08..0.15);
    let (lo, hi) = (mid - amp, mid + amp);
    let period: usize = rng.random_range(2..=5);
    let checker = rng.random_bool(0.5);
    let (dy, dx): (usize, usize) = [(0, 1), (1, 0), (1, 1), (1, 2)][rng.random_range(0..4)];
    let (oy, ox) = (rng.random_range(0..period), rng.random_range(0..period));
    ImagePlane::from_fn(size, size, |y, x| {
        let on = if checker {
            ((y + oy) / period + (x + ox) / period).is_multiple_of(2)
        } else {
            ((dy * (y + oy) + dx * (x + ox)) / period).is_multiple_of(2)
        };
        if on {
            hi
        } else {
            lo
        }
    })
}

/// `per_class` smooth images followed by `per_class` textured ones.
pub fn two_class_dataset(per_class: usize, size: usize, seed: u64) -> Result<(Vec<ImagePlane>, Vec<ContentClass>)> {
    let mut images = Vec::with_capacity(2 * per_class);
    let mut classes = Vec::with_capacity(2 * per_class);
    for i in 0..per_class {
        images.push(smooth_image(size, derive_seed(seed, 2 * i as u64))?);
        classes.push(ContentClass::Smooth);
    }
    for i in 0..per_class {
        images.push(textured_image(size, derive_seed(seed, 2 * i as u64 + 1))?);
        classes.push(ContentClass::Textured);
    }
    Ok((images, classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_abs_gradient(img: &ImagePlane) -> f64 {
        let (h, w) = img.dims();
        let mut s = 0.0;
        for y in 1..h {
            for x in 1..w {
                s += (img.get(y, x) - img.get(y, x - 1)).abs() + (img.get(y, x) - img.get(y - 1, x)).abs();
            }
        }
        s / ((h - 1) * (w - 1)) as f64
    }

    #[test]
    fn classes_differ_in_activity() {
        let (imgs, classes) = two_class_dataset(10, 32, 5).unwrap();
        for (img, c) in imgs.iter().zip(&classes) {
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let g = mean_abs_gradient(img);
            match c {
                ContentClass::Smooth => assert!(g < 0.028, "{g}"),
                // weakest texture: one edge of height 0.16 every 5 px
                ContentClass::Textured => assert!(g > 0.028, "{g}"),
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(two_class_dataset(3, 16, 9).unwrap(), two_class_dataset(3, 16, 9).unwrap());
        assert_ne!(two_class_dataset(3, 16, 9).unwrap().0, two_class_dataset(3, 16, 10).unwrap().0);
    }
}
