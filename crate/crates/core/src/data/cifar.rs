//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixels, each plane row-major.

use std::path::{Path, PathBuf};

use super::{find_file, normalize_byte, read_maybe_gz, Dataset, DatasetMeta, Split, CIFAR10_CLASSES};
use crate::error::{Result, XcnnError};
use crate::tensor::Tensor;

pub const RECORD_BYTES: usize = 3073;
const PIXELS: usize = 3 * 32 * 32;

fn append(bytes: &[u8], source: &Path, pixels: &mut Vec<f32>, labels: &mut Vec<usize>) -> Result<()> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(XcnnError::Format(format!(
            "{}: {} bytes is not a multiple of {RECORD_BYTES}",
            source.display(),
            bytes.len()
        )));
    }
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        let label = rec[0];
        if label > 9 {
            return Err(XcnnError::Format(format!(
                "{}: record {i} has label {label}",
                source.display()
            )));
        }
        labels.push(label as usize);
        pixels.extend(rec[1..].iter().map(|&b| normalize_byte(b)));
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    append(bytes, Path::new("<memory>"), &mut pixels, &mut labels)?;
    finish(pixels, labels)
}

fn finish(pixels: Vec<f32>, labels: Vec<usize>) -> Result<Dataset> {
    if labels.is_empty() {
        return Err(XcnnError::Format("no CIFAR-10 records".into()));
    }
    let images = Tensor::from_vec(&[labels.len(), 3, 32, 32], pixels)?;
    Dataset::new(images, labels, DatasetMeta::new("cifar10", &CIFAR10_CLASSES))
}

/// Concatenates the records of every file in order.
pub fn load_cifar10_bin(paths: &[PathBuf]) -> Result<Dataset> {
    let (mut pixels, mut labels) = (Vec::new(), Vec::new());
    for p in paths {
        append(&read_maybe_gz(p)?, p, &mut pixels, &mut labels)?;
    }
    finish(pixels, labels)
}

/// `data_batch_1..5.bin` or `test_batch.bin` under `root` or
/// `root/cifar-10-batches-bin`.
pub fn load_cifar10_dir(root: &Path, split: Split) -> Result<Dataset> {
    let subdirs = ["cifar-10-batches-bin", "cifar10"];
    let paths = match split {
        Split::Train => (1..=5)
            .map(|i| find_file(root, &subdirs, &[format!("data_batch_{i}.bin")]))
            .collect::<Result<Vec<_>>>()?,
        Split::Test => vec![find_file(root, &subdirs, &["test_batch.bin".to_string()])?],
    };
    load_cifar10_bin(&paths)
}

/// One record per `(label, channel-planar pixels)`.
pub fn encode(records: &[(u8, [u8; PIXELS])]) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * RECORD_BYTES);
    for (label, px) in records {
        out.push(*label);
        out.extend_from_slice(px);
    }
    out
}
