//! Deterministic 8x8 block-DCT codec used as the conventional codec.
//!
//! Each block goes through an orthonormal DCT-II, uniform scalar quantization
//! with step `Q(qp) = 0.02 * 2^((qp - 22) / 6)`, dequantization, inverse DCT
//! and clipping to `[0, 1]`. The rate is the zero-order entropy of all
//! quantized coefficient symbols in the image.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::ImagePlane;

pub const QP_VALUES: [u32; 7] = [22, 27, 32, 37, 42, 47, 52];
pub const BLOCK: usize = 8;
const BASE_STEP: f64 = 0.02;

/// One of the seven supported quantization parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QpLevel(u32);

impl QpLevel {
    pub fn new(qp: u32) -> Result<Self> {
        if QP_VALUES.contains(&qp) {
            Ok(Self(qp))
        } else {
            Err(Error::Parameter(format!(
                "qp {qp} is not one of {QP_VALUES:?}"
            )))
        }
    }

    pub fn all() -> [QpLevel; 7] {
        QP_VALUES.map(QpLevel)
    }

    pub fn value(self) -> u32 {
        self.0
    }

    /// Position in [`QP_VALUES`].
    pub fn index(self) -> usize {
        QP_VALUES.iter().position(|&q| q == self.0).unwrap()
    }

    /// Quantizer step size; doubles every 6 QP.
    pub fn step(self) -> f64 {
        BASE_STEP * 2f64.powf((self.0 as f64 - 22.0) / 6.0)
    }
}

impl fmt::Display for QpLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecResult {
    pub reconstruction: ImagePlane,
    pub rate_bits: f64,
    pub qp: QpLevel,
}

fn dct_matrix() -> &'static [[f64; BLOCK]; BLOCK] {
    static M: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        for (u, row) in m.iter_mut().enumerate() {
            let a = if u == 0 { (1.0 / 8.0f64).sqrt() } else { (2.0 / 8.0f64).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * x + 1) * u) as f64 * PI / 16.0).cos();
            }
        }
        m
    })
}

/// Orthonormal 2-D DCT-II of a row-major 8x8 block.
pub fn forward_dct(block: &[f64; 64]) -> [f64; 64] {
    let c = dct_matrix();
    let mut tmp = [0.0; 64];
    // rows: tmp = B * C^T
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            let mut acc = 0.0;
            for x in 0..BLOCK {
                acc += block[y * BLOCK + x] * c[u][x];
            }
            tmp[y * BLOCK + u] = acc;
        }
    }
    // columns: out = C * tmp
    let mut out = [0.0; 64];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            let mut acc = 0.0;
            for y in 0..BLOCK {
                acc += c[v][y] * tmp[y * BLOCK + u];
            }
            out[v * BLOCK + u] = acc;
        }
    }
    out
}

pub fn inverse_dct(coeffs: &[f64; 64]) -> [f64; 64] {
    let c = dct_matrix();
    let mut tmp = [0.0; 64];
    for v in 0..BLOCK {
        for x in 0..BLOCK {
            let mut acc = 0.0;
            for u in 0..BLOCK {
                acc += coeffs[v * BLOCK + u] * c[u][x];
            }
            tmp[v * BLOCK + x] = acc;
        }
    }
    let mut out = [0.0; 64];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            let mut acc = 0.0;
            for v in 0..BLOCK {
                acc += c[v][y] * tmp[v * BLOCK + x];
            }
            out[y * BLOCK + x] = acc;
        }
    }
    out
}

/// Quantized DCT coefficient levels `round(c / Q(qp))` of one block.
pub fn quantize_block(block: &[f64; 64], qp: QpLevel) -> [i32; 64] {
    let step = qp.step();
    forward_dct(block).map(|c| (c / step).round() as i32)
}

pub fn dequantize_block(levels: &[i32; 64], qp: QpLevel) -> [f64; 64] {
    let step = qp.step();
    inverse_dct(&levels.map(|l| l as f64 * step))
}

/// Zero-order entropy in bits of a symbol histogram: `sum -n * log2(n / total)`.
pub fn entropy_bits(histogram: &BTreeMap<i32, u64>) -> f64 {
    let total: u64 = histogram.values().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    histogram
        .values()
        .filter(|&&n| n > 0)
        .map(|&n| {
            let n = n as f64;
            -n * (n / total).log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Codes `image` at `qp`. Dims must be multiples of 8; see [`encode_decode_padded`].
pub fn encode_decode(image: &ImagePlane, qp: QpLevel) -> Result<CodecResult> {
    let (h, w) = image.dims();
    if h % BLOCK != 0 || w % BLOCK != 0 {
        return Err(Error::Precondition(format!(
            "image {h}x{w} is not a multiple of {BLOCK}; pad before coding"
        )));
    }
    let mut recon = ImagePlane::filled(h, w, 0.0)?;
    let mut hist = BTreeMap::new();
    let mut block = [0.0; 64];
    for by in (0..h).step_by(BLOCK) {
        for bx in (0..w).step_by(BLOCK) {
            for y in 0..BLOCK {
                for x in 0..BLOCK {
                    block[y * BLOCK + x] = image.get(by + y, bx + x);
                }
            }
            let levels = quantize_block(&block, qp);
            for &l in &levels {
                *hist.entry(l).or_insert(0u64) += 1;
            }
            let rec = dequantize_block(&levels, qp);
            for y in 0..BLOCK {
                for x in 0..BLOCK {
                    recon.set(by + y, bx + x, rec[y * BLOCK + x].clamp(0.0, 1.0));
                }
            }
        }
    }
    Ok(CodecResult {
        reconstruction: recon,
        rate_bits: entropy_bits(&hist),
        qp,
    })
}

/// Pads by edge replication to a multiple of 8, codes, and crops back.
pub fn encode_decode_padded(image: &ImagePlane, qp: QpLevel) -> CodecResult {
    let (h, w) = image.dims();
    let (ph, pw) = (h.div_ceil(BLOCK) * BLOCK, w.div_ceil(BLOCK) * BLOCK);
    if (ph, pw) == (h, w) {
        return encode_decode(image, qp).expect("dims are block multiples");
    }
    let mut res = encode_decode(&image.pad_to(ph, pw), qp).expect("dims are block multiples");
    res.reconstruction = res.reconstruction.crop_replicate(0, 0, h, w);
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::mse;
    use proptest::prelude::*;

    /// Textbook DCT-II by its defining double sum.
    fn direct_dct(block: &[f64; 64]) -> [f64; 64] {
        let mut out = [0.0; 64];
        for v in 0..8 {
            for u in 0..8 {
                let cu = if u == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
                let cv = if v == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
                let mut acc = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        acc += block[y * 8 + x]
                            * (((2 * x + 1) * u) as f64 * PI / 16.0).cos()
                            * (((2 * y + 1) * v) as f64 * PI / 16.0).cos();
                    }
                }
                out[v * 8 + u] = 0.25 * cu * cv * acc;
            }
        }
        out
    }

    #[test]
    fn qp_set_is_closed() {
        assert!(QpLevel::new(23).is_err());
        assert_eq!(QpLevel::new(37).unwrap().index(), 3);
        let q22 = QpLevel::new(22).unwrap().step();
        let q28 = 0.02 * 2.0; // qp 28 would double the step
        assert!((q22 - 0.02).abs() < 1e-15);
        assert!((QpLevel::new(52).unwrap().step() - q28 * 16.0).abs() < 1e-12);
    }

    #[test]
    fn ramp_block_levels_match_direct_dct_oracle() {
        let qp = QpLevel::new(37).unwrap();
        let mut block = [0.0; 64];
        for y in 0..8 {
            for x in 0..8 {
                block[y * 8 + x] = x as f64 / 7.0;
            }
        }
        let want = direct_dct(&block).map(|c| (c / qp.step()).round() as i32);
        assert_eq!(quantize_block(&block, qp), want);
        // horizontal ramp: only the first row of coefficients is non-zero
        assert!(want[8..].iter().all(|&l| l == 0));
        assert!(want[0] > 0 && want[1] < 0);
    }

    #[test]
    fn dct_round_trip() {
        let mut block = [0.0; 64];
        for (i, v) in block.iter_mut().enumerate() {
            *v = ((i * 13) % 17) as f64 / 17.0;
        }
        let back = inverse_dct(&forward_dct(&block));
        for (a, b) in block.iter().zip(back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_image_is_dc_only() {
        for qp in QpLevel::all() {
            let img = ImagePlane::filled(16, 16, 0.37).unwrap();
            let res = encode_decode(&img, qp).unwrap();
            let err = res
                .reconstruction
                .data()
                .iter()
                .map(|v| (v - 0.37).abs())
                .fold(0.0, f64::max);
            // DC error of at most Q/2 maps to Q/16 per sample
            assert!(err <= qp.step(), "qp {qp}: {err}");
            // 4 blocks x 63 zero AC levels + 4 identical DC levels: two symbols at most
            let total = 256.0f64;
            let dc_only = -4.0 * (4.0 / total).log2() - 252.0 * (252.0 / total).log2();
            assert!(res.rate_bits == 0.0 || (res.rate_bits - dc_only).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_non_multiple_of_eight() {
        let img = ImagePlane::filled(12, 16, 0.5).unwrap();
        assert!(matches!(
            encode_decode(&img, QpLevel::new(22).unwrap()),
            Err(Error::Precondition(_))
        ));
        let res = encode_decode_padded(&img, QpLevel::new(22).unwrap());
        assert_eq!(res.reconstruction.dims(), (12, 16));
    }

    #[test]
    fn entropy_zero_iff_single_symbol() {
        let mut h = BTreeMap::new();
        h.insert(3, 10u64);
        assert_eq!(entropy_bits(&h), 0.0);
        h.insert(-1, 10u64);
        assert!((entropy_bits(&h) - 20.0).abs() < 1e-12);
    }

    fn random_image(seed: u64, h: usize, w: usize) -> ImagePlane {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let smooth_a: f64 = rng.random();
        ImagePlane::from_fn(h, w, |y, x| {
            let base = smooth_a * (x + y) as f64 / (h + w) as f64;
            (base + 0.5 * ((x * 7 + y * 13 + seed as usize) % 11) as f64 / 11.0).clamp(0.0, 1.0)
        })
        .unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn rate_and_mse_monotone_in_qp(seed in 0u64..10_000, noise in 0.0f64..0.5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base = random_image(seed, 32, 32);
            let data = base.data().iter().map(|v| (v + noise * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)).collect();
            let img = ImagePlane::new(32, 32, data).unwrap();
            let results: Vec<_> = QpLevel::all().iter().map(|&q| encode_decode(&img, q).unwrap()).collect();
            for pair in results.windows(2) {
                prop_assert!(pair[0].rate_bits >= pair[1].rate_bits);
                let e0 = mse(&pair[0].reconstruction, &img).unwrap();
                let e1 = mse(&pair[1].reconstruction, &img).unwrap();
                prop_assert!(e0 <= e1, "mse {} > {} at qp {}", e0, e1, pair[0].qp);
            }
            for r in &results {
                prop_assert!(r.rate_bits >= 0.0);
                prop_assert!(r.reconstruction.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn recoding_does_not_drift(seed in 0u64..10_000, qi in 0usize..7) {
            let img = random_image(seed, 16, 16);
            let qp = QpLevel::all()[qi];
            let first = encode_decode(&img, qp).unwrap().reconstruction;
            let second = encode_decode(&first, qp).unwrap().reconstruction;
            let e1 = mse(&first, &img).unwrap();
            let e2 = mse(&second, &img).unwrap();
            if e1 == 0.0 {
                prop_assert_eq!(e2, 0.0);
            } else {
                prop_assert!((e2 - e1).abs() < e1, "first pass {}, second pass {}", e1, e2);
            }
        }
    }
}
