//! Dataset ingestion and the train/test split.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use compfilt_core::image::{read_pgm, write_pgm, ImagePlane};
use compfilt_core::rng::seeded;
use compfilt_core::synth::two_class_dataset;
use rand::seq::SliceRandom;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEntry {
    pub path: PathBuf,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ImageEntry>,
    /// Sorted indices into `entries`.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub split_seed: u64,
}

/// A manifest with its decoded images, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<ImagePlane>,
}

impl Dataset {
    pub fn train_images(&self) -> Vec<ImagePlane> {
        self.manifest.train.iter().map(|&i| self.images[i].clone()).collect()
    }

    pub fn test_images(&self) -> Vec<ImagePlane> {
        self.manifest.test.iter().map(|&i| self.images[i].clone()).collect()
    }
}

fn split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        bail!("need at least 2 images for a train/test split, found {n}");
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

fn assemble(entries: Vec<ImageEntry>, images: Vec<ImagePlane>, test_fraction: f64, seed: u64) -> Result<Dataset> {
    let (train, test) = split(entries.len(), test_fraction, seed)?;
    Ok(Dataset {
        manifest: DatasetManifest {
            entries,
            train,
            test,
            split_seed: seed,
        },
        images,
    })
}

/// Loads every `*.pgm` in `dir` (lexicographic order) and splits it.
pub fn ingest(dir: &Path, min_size: usize, test_fraction: f64, seed: u64) -> Result<Dataset> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading dataset directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("listing {}", dir.display()))?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")));
    paths.sort();
    if paths.is_empty() {
        bail!("no .pgm images in {}", dir.display());
    }
    let mut entries = Vec::with_capacity(paths.len());
    let mut images = Vec::with_capacity(paths.len());
    for path in paths {
        let img = read_pgm(&path).with_context(|| format!("ingesting {}", path.display()))?;
        let (height, width) = img.dims();
        if height < min_size || width < min_size {
            bail!("{} is {height}x{width}, smaller than the {min_size}px patch", path.display());
        }
        entries.push(ImageEntry { path, height, width });
        images.push(img);
    }
    assemble(entries, images, test_fraction, seed)
}

/// The built-in two-class set; entries get synthetic names.
pub fn synthetic(per_class: usize, size: usize, test_fraction: f64, seed: u64) -> Result<Dataset> {
    let (images, classes) = two_class_dataset(per_class, size, seed)?;
    let entries = images
        .iter()
        .zip(&classes)
        .enumerate()
        .map(|(i, (img, c))| ImageEntry {
            path: PathBuf::from(format!("{}_{i:04}.pgm", c.name())),
            height: img.height(),
            width: img.width(),
        })
        .collect();
    assemble(entries, images, test_fraction, seed)
}

/// Writes the two-class set to `dir` as PGM files.
pub fn write_synthetic(dir: &Path, per_class: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (images, classes) = two_class_dataset(per_class, size, seed)?;
    let mut out = Vec::with_capacity(images.len());
    for (i, (img, c)) in images.iter().zip(&classes).enumerate() {
        let p = dir.join(format!("{}_{i:04}.pgm", c.name()));
        write_pgm(&p, img).with_context(|| format!("writing {}", p.display()))?;
        out.push(p);
    }
    Ok(out)
}

impl DatasetManifest {
    /// `split,path,height,width` rows in manifest order.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# split seed {}\nsplit,path,height,width\n", self.split_seed);
        for (i, e) in self.entries.iter().enumerate() {
            let which = if self.test.binary_search(&i).is_ok() { "test" } else { "train" };
            writeln!(s, "{which},{},{},{}", e.path.display(), e.height, e.width).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_covering() {
        let (train, test) = split(10, 0.3, 4).unwrap();
        assert_eq!(test.len(), 3);
        let mut all = [train.clone(), test.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split(10, 0.3, 4).unwrap(), (train, test));
        assert!(split(1, 0.5, 0).is_err());
        assert_eq!(split(2, 0.01, 0).unwrap().1.len(), 1);
    }
}
