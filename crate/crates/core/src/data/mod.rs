//! Image datasets normalized to [-1, 1], their on-disk formats and batching.

mod batch;
pub mod cifar;
pub mod idx;

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use batch::{Augment, Batch, BatchPlan, Batches};

use crate::error::{contract_err, shape_err, Result, XcnnError};
use crate::tensor::Tensor;

/// Byte pixel to [-1, 1].
#[inline]
pub fn normalize_byte(b: u8) -> f32 {
    b as f32 / 127.5 - 1.0
}

pub const NORMALIZATION: &str = "x/127.5-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub name: String,
    pub class_names: Vec<String>,
    pub normalization: String,
}

impl DatasetMeta {
    pub fn new(name: &str, class_names: &[&str]) -> Self {
        DatasetMeta {
            name: name.to_string(),
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            normalization: NORMALIZATION.to_string(),
        }
    }

    pub fn numbered(name: &str, classes: usize) -> Self {
        DatasetMeta {
            name: name.to_string(),
            class_names: (0..classes).map(|c| c.to_string()).collect(),
            normalization: NORMALIZATION.to_string(),
        }
    }
}

pub const CIFAR10_CLASSES: [&str; 10] = [
    "airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck",
];

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `[N, C, H, W]`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, meta: DatasetMeta) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(shape_err!("images must be [N, C, H, W], got {:?}", images.shape()));
        }
        if images.shape()[0] != labels.len() {
            return Err(shape_err!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            ));
        }
        let k = meta.class_names.len();
        if let Some(l) = labels.iter().find(|&&l| l >= k) {
            return Err(contract_err!("label {l} outside {k} classes"));
        }
        Ok(Dataset { images, labels, meta })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.meta.class_names.len()
    }

    /// `[C, H, W]`.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let per: usize = self.images.shape()[1..].iter().product();
        &self.images.data()[i * per..(i + 1) * per]
    }

    /// Images and labels at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            images: self.images.gather_outer(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
        })
    }

    /// The first `n` samples, or with `stratified` the first `n / K` of each
    /// class (remainder to the lowest classes), kept in original order.
    pub fn subset(&self, n: usize, stratified: bool) -> Result<Dataset> {
        let n = n.min(self.len());
        if !stratified {
            return self.select(&(0..n).collect::<Vec<_>>());
        }
        let k = self.num_classes();
        let mut quota: Vec<usize> = (0..k).map(|c| n / k + usize::from(c < n % k)).collect();
        let mut picked = Vec::with_capacity(n);
        for (i, &l) in self.labels.iter().enumerate() {
            if quota[l] > 0 {
                quota[l] -= 1;
                picked.push(i);
                if picked.len() == n {
                    break;
                }
            }
        }
        self.select(&picked)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes()];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Per-channel mean pixel value.
    pub fn channel_means(&self) -> Vec<f32> {
        let [c, h, w] = self.image_shape();
        let hw = h * w;
        let mut sums = vec![0.0f64; c];
        for img in self.images.data().chunks(c * hw) {
            for (ch, plane) in img.chunks(hw).enumerate() {
                sums[ch] += plane.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        let count = (self.len() * hw).max(1) as f64;
        sums.iter().map(|s| (s / count) as f32).collect()
    }

    /// Learnable toy data for smoke tests: each class lights a different
    /// block of a dark, noisy image.
    pub fn synthetic(n: usize, classes: usize, shape: [usize; 3], seed: u64) -> Result<Dataset> {
        let [c, h, w] = shape;
        if classes == 0 || h < 4 || w < 4 {
            return Err(XcnnError::Config(
                "synthetic data needs at least one class and 4x4 images".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = (classes as f64).sqrt().ceil() as usize;
        let (bh, bw) = (h / grid.max(1), w / grid.max(1));
        let mut data = Vec::with_capacity(n * c * h * w);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % classes;
            let (gy, gx) = (label / grid, label % grid);
            for _ in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let lit = y / bh.max(1) == gy && x / bw.max(1) == gx;
                        let base = if lit { 0.8 } else { -0.8 };
                        data.push(base + rng.random_range(-0.2f32..0.2));
                    }
                }
            }
            labels.push(label);
        }
        Dataset::new(
            Tensor::from_vec(&[n, c, h, w], data)?,
            labels,
            DatasetMeta::numbered("synthetic", classes),
        )
    }
}

/// Reads a whole file, inflating it when the name ends in `.gz`.
pub(crate) fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| XcnnError::io(path, e))?;
    let mut bytes = Vec::new();
    let res = if path.extension().is_some_and(|e| e == "gz") {
        flate2::read::GzDecoder::new(file).read_to_end(&mut bytes)
    } else {
        let mut f = file;
        f.read_to_end(&mut bytes)
    };
    res.map_err(|e| XcnnError::io(path, e))?;
    Ok(bytes)
}

/// First existing candidate under `root` or its `sub` directory.
pub(crate) fn find_file(root: &Path, subdirs: &[&str], names: &[String]) -> Result<PathBuf> {
    let mut tried = Vec::new();
    for dir in std::iter::once(root.to_path_buf()).chain(subdirs.iter().map(|s| root.join(s))) {
        for name in names {
            let p = dir.join(name);
            if p.is_file() {
                return Ok(p);
            }
            tried.push(p);
        }
    }
    Err(XcnnError::io(
        tried.first().cloned().unwrap_or_else(|| root.to_path_buf()),
        std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("none of {} candidate files exist", tried.len()),
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_normalization_endpoints() {
        assert_eq!(normalize_byte(0), -1.0);
        assert_eq!(normalize_byte(255), 1.0);
    }

    #[test]
    fn stratified_subset_balances_classes() {
        let ds = Dataset::synthetic(100, 10, [1, 8, 8], 0).unwrap();
        let s = ds.subset(25, true).unwrap();
        assert_eq!(s.len(), 25);
        assert_eq!(s.class_histogram(), vec![3, 3, 3, 3, 3, 2, 2, 2, 2, 2]);
        let plain = ds.subset(7, false).unwrap();
        assert_eq!(plain.labels, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn mismatched_labels_rejected() {
        let images = Tensor::zeros(&[2, 1, 4, 4]).unwrap();
        assert!(Dataset::new(images.clone(), vec![0], DatasetMeta::numbered("t", 2)).is_err());
        assert!(Dataset::new(images, vec![0, 2], DatasetMeta::numbered("t", 2)).is_err());
    }

    #[test]
    fn channel_means_per_plane() {
        let mut data = vec![0.5f32; 2 * 4];
        data[4..].fill(-0.25);
        let ds = Dataset::new(
            Tensor::from_vec(&[1, 2, 2, 2], data).unwrap(),
            vec![0],
            DatasetMeta::numbered("t", 1),
        )
        .unwrap();
        assert_eq!(ds.channel_means(), vec![0.5, -0.25]);
    }
}
