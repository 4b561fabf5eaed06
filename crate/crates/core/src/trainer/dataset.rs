use crate::codec::{encode_decode_padded, QpLevel};
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::rng::{derive_seed, seeded};
use rand::Rng;

/// A clean patch, its reconstruction at `qp`, and the index of the source image.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub x: ImagePlane,
    pub xhat: ImagePlane,
    pub qp: QpLevel,
    pub source: usize,
}

impl TrainingSample {
    pub fn new(x: ImagePlane, xhat: ImagePlane, qp: QpLevel, source: usize) -> Result<Self> {
        x.same_dims(&xhat)?;
        Ok(Self { x, xhat, qp, source })
    }
}

/// Which QPs each image contributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QpCoverage {
    /// One sample per image per QP.
    #[default]
    All,
    /// One sample per image; image `i` uses `qps[i % qps.len()]`.
    RoundRobin,
}

/// Codes each image at its QPs and cuts one random `patch x patch` window per
/// (image, QP) from both the original and the reconstruction.
pub fn build_training_set(
    images: &[ImagePlane],
    qps: &[QpLevel],
    patch: usize,
    coverage: QpCoverage,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    if images.is_empty() {
        return Err(Error::Config("no training images".into()));
    }
    if qps.is_empty() {
        return Err(Error::Config("no QPs to train on".into()));
    }
    let mut out = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let (h, w) = img.dims();
        if h < patch || w < patch {
            return Err(Error::Precondition(format!(
                "image {i} is {h}x{w}, smaller than the {patch}x{patch} patch"
            )));
        }
        let chosen: Vec<QpLevel> = match coverage {
            QpCoverage::All => qps.to_vec(),
            QpCoverage::RoundRobin => vec![qps[i % qps.len()]],
        };
        for qp in chosen {
            let recon = encode_decode_padded(img, qp).reconstruction;
            let mut rng = seeded(derive_seed(seed, (i as u64) << 8 | qp.index() as u64));
            let y0 = rng.random_range(0..=h - patch);
            let x0 = rng.random_range(0..=w - patch);
            out.push(TrainingSample {
                x: img.crop(y0, x0, patch, patch)?,
                xhat: recon.crop(y0, x0, patch, patch)?,
                qp,
                source: i,
            });
        }
    }
    Ok(out)
}
