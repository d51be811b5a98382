//! Binary PPM (P6) and PGM (P5) writers plus box overlays.

use std::path::Path;

use super::BoundingBox;
use crate::error::{contract_err, Result, XcnnError};

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    encode(b"P6", width, height, rgb, 3)
}

pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Result<Vec<u8>> {
    encode(b"P5", width, height, gray, 1)
}

fn encode(magic: &[u8], width: usize, height: usize, pixels: &[u8], channels: usize) -> Result<Vec<u8>> {
    if pixels.len() != width * height * channels {
        return Err(contract_err!(
            "{} bytes for a {width}x{height} image with {channels} channels",
            pixels.len()
        ));
    }
    let mut out = magic.to_vec();
    out.extend_from_slice(format!("\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let bytes = encode_ppm(width, height, rgb)?;
    std::fs::write(path, bytes).map_err(|e| XcnnError::io(path, e))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    let bytes = encode_pgm(width, height, gray)?;
    std::fs::write(path, bytes).map_err(|e| XcnnError::io(path, e))
}

/// Gray bytes to RGB.
pub fn gray_to_rgb(gray: &[u8]) -> Vec<u8> {
    gray.iter().flat_map(|&g| [g, g, g]).collect()
}

/// Draws the one-pixel outline of `b` onto interleaved RGB.
pub fn draw_box(rgb: &mut [u8], width: usize, b: &BoundingBox, color: [u8; 3]) {
    let mut put = |x: usize, y: usize| {
        let i = (y * width + x) * 3;
        rgb[i..i + 3].copy_from_slice(&color);
    };
    for x in b.x0..=b.x1 {
        put(x, b.y0);
        put(x, b.y1);
    }
    for y in b.y0..=b.y1 {
        put(b.x0, y);
        put(b.x1, y);
    }
}

/// Nearest-neighbour upscale of interleaved pixels by an integer factor.
pub fn upscale(pixels: &[u8], width: usize, height: usize, channels: usize, factor: usize) -> Vec<u8> {
    let ow = width * factor;
    let mut out = Vec::with_capacity(pixels.len() * factor * factor);
    for y in 0..height * factor {
        for x in 0..ow {
            let i = ((y / factor) * width + x / factor) * channels;
            out.extend_from_slice(&pixels[i..i + channels]);
        }
    }
    out
}
