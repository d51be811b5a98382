//! MNIST IDX files: big-endian header, then raw unsigned bytes.

use std::path::Path;

use super::{find_file, normalize_byte, read_maybe_gz, Dataset, DatasetMeta, Split};
use crate::error::{Result, XcnnError};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| XcnnError::Length(format!("{what}: header truncated at byte {at}")))
}

/// Parsed image file: `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "image file")?;
    if magic != IMAGE_MAGIC {
        return Err(XcnnError::Format(format!(
            "image file magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "image file")? as usize;
    let rows = be_u32(bytes, 8, "image file")? as usize;
    let cols = be_u32(bytes, 12, "image file")? as usize;
    let need = n * rows * cols;
    let payload = &bytes[16..];
    if payload.len() < need {
        return Err(XcnnError::Length(format!(
            "image payload has {} bytes, header declares {need}",
            payload.len()
        )));
    }
    Ok((n, rows, cols, &payload[..need]))
}

pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "label file")?;
    if magic != LABEL_MAGIC {
        return Err(XcnnError::Format(format!(
            "label file magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let n = be_u32(bytes, 4, "label file")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(XcnnError::Length(format!(
            "label payload has {} bytes, header declares {n}",
            payload.len()
        )));
    }
    Ok(&payload[..n])
}

pub fn decode(image_bytes: &[u8], label_bytes: &[u8]) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_images(image_bytes)?;
    let labels = parse_labels(label_bytes)?;
    if labels.len() != n {
        return Err(XcnnError::Format(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 9) {
        return Err(XcnnError::Format(format!("label {l} is not a digit")));
    }
    let images = Tensor::from_vec(
        &[n, 1, rows, cols],
        pixels.iter().map(|&b| normalize_byte(b)).collect(),
    )?;
    Dataset::new(
        images,
        labels.iter().map(|&l| l as usize).collect(),
        DatasetMeta::numbered("mnist", 10),
    )
}

/// Loads an image/label file pair; `.gz` files are inflated transparently.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    decode(&read_maybe_gz(images_path)?, &read_maybe_gz(labels_path)?)
}

/// Looks for the usual file names under `root` or `root/mnist`.
pub fn load_mnist_dir(root: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let names = |kind: &str, dims: u8| -> Vec<String> {
        let base = [
            format!("{prefix}-{kind}-idx{dims}-ubyte"),
            format!("{prefix}-{kind}.idx{dims}-ubyte"),
        ];
        base.iter().flat_map(|b| [b.clone(), format!("{b}.gz")]).collect()
    };
    let subdirs = ["mnist", "MNIST", "MNIST/raw"];
    let images = find_file(root, &subdirs, &names("images", 3))?;
    let labels = find_file(root, &subdirs, &names("labels", 1))?;
    load_mnist_idx(&images, &labels)
}

pub fn encode_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
