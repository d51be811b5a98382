//! Downstream of the heatmap: rendering, localization, deletion scoring and
//! the mutual-information diagnostic.

mod deletion;
pub mod image;
mod localize;
mod mi;

pub use deletion::{deletion_score, mean_deletion, DeletionScore};
pub use localize::{intensity_centroid, localize, BoundingBox, BOX_CSV_HEADER};
pub use mi::{grid_codes, mi_diagnostic, plugin_mutual_information, GridCode, MIReport, MIN_SAMPLES};

use crate::error::{contract_err, Result};

/// One heatmap with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub values: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub index: usize,
    pub pred: usize,
    pub truth: usize,
}

/// Diverging blue-white-red map: −1 is blue, 0 white, +1 red.
pub fn heat_color(v: f32) -> Result<[u8; 3]> {
    if !(-1.0..=1.0).contains(&v) {
        return Err(contract_err!("heatmap value {v} outside [-1, 1]"));
    }
    let v = v as f64;
    let fade = |t: f64| (255.0 * t).round() as u8;
    Ok(if v <= 0.0 {
        [fade(1.0 + v), fade(1.0 + v), 255]
    } else {
        [255, fade(1.0 - v), fade(1.0 - v)]
    })
}

/// Row-major RGB bytes for a heatmap.
pub fn render_heatmap(values: &[f32]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(values.len() * 3);
    for &v in values {
        out.extend_from_slice(&heat_color(v)?);
    }
    Ok(out)
}

/// Image in [-1, 1] to gray bytes; multi-channel `[C, H, W]` planes become
/// interleaved RGB when `C == 3`.
pub fn image_bytes(image: &[f32], channels: usize) -> Vec<u8> {
    let to_byte = |v: f32| ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8;
    if channels == 1 {
        return image.iter().map(|&v| to_byte(v)).collect();
    }
    let hw = image.len() / channels;
    (0..hw)
        .flat_map(|i| (0..3.min(channels)).map(move |c| to_byte(image[c * hw + i])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_endpoints() {
        assert_eq!(heat_color(-1.0).unwrap(), [0, 0, 255]);
        assert_eq!(heat_color(0.0).unwrap(), [255, 255, 255]);
        assert_eq!(heat_color(1.0).unwrap(), [255, 0, 0]);
        assert!(heat_color(1.01).is_err());
        assert!(heat_color(f32::NAN).is_err());
    }

    #[test]
    fn channels_monotone() {
        let mut prev = heat_color(-1.0).unwrap();
        for i in -99..=100 {
            let c = heat_color(i as f32 / 100.0).unwrap();
            assert!(c[0] >= prev[0], "red rises");
            assert!(c[2] <= prev[2], "blue falls");
            let rises = i <= 0;
            assert!(if rises { c[1] >= prev[1] } else { c[1] <= prev[1] });
            prev = c;
        }
    }

    #[test]
    fn gray_and_rgb_bytes() {
        assert_eq!(image_bytes(&[-1.0, 0.0, 1.0], 1), vec![0, 128, 255]);
        assert_eq!(image_bytes(&[-1.0, 1.0, 1.0, -1.0, 0.0, 0.0], 3), vec![0, 255, 128, 255, 0, 128]);
    }
}
