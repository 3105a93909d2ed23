use std::fs;
use std::path::Path;

use super::Image;
use crate::error::Result;

/// Quantizes a `[0, 1]` value: `floor(v·255 + 0.5)`, saturating.
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Binary P6 bytes; single-channel images are replicated to RGB.
pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", image.size, image.size);
    let mut out = Vec::with_capacity(header.len() + image.size * image.size * 3);
    out.extend_from_slice(header.as_bytes());
    for px in image.pixels.chunks(image.channels) {
        match image.channels {
            3 => out.extend(px.iter().map(|&v| to_byte(v))),
            _ => out.extend(std::iter::repeat(to_byte(px[0])).take(3)),
        }
    }
    out
}

pub fn save_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}
