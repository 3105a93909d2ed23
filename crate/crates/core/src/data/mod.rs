//! Paired samples, the procedural corpus, and file I/O (WAV in, PPM out).

mod corpus;
mod ppm;
mod wav;


pub use corpus::{
    chord_bins, prototype_image, sample_seed, synth_pair, Corpus, PairedSample, SynthCorpusConfig, SAMPLE_RATE,
};
pub use ppm::{encode_ppm, save_ppm, to_byte};
pub use wav::{encode_wav, load_wav, parse_wav, write_wav};

use crate::error::{Error, Result};

/// Square image, channel-interleaved rows (`[H×W×ch]`), values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub size: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(size: usize, channels: usize, pixels: Vec<f32>) -> Result<Image> {
        if pixels.len() != size * size * channels {
            return Err(Error::dim(format!(
                "{size}×{size}×{channels} image needs {} values, got {}",
                size * size * channels,
                pixels.len()
            )));
        }
        Ok(Image { size, channels, pixels })
    }

    pub fn filled(size: usize, channels: usize, value: f32) -> Image {
        Image { size, channels, pixels: vec![value; size * size * channels] }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.size + x) * self.channels + c]
    }

    /// Mean absolute pixel difference.
    pub fn mean_abs_diff(&self, other: &Image) -> f32 {
        self.pixels.iter().zip(&other.pixels).map(|(a, b)| (a - b).abs()).sum::<f32>()
            / self.pixels.len() as f32
    }
}
