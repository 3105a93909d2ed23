use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::{CodecConfig, UPSAMPLE_STAGES};
use crate::error::{Error, Result};
use crate::numerics::nn::join;
use crate::numerics::{Linear, Module, Parameter, Tensor, GATHER_ZERO};

/// im2col for a zero-padded 3×3 convolution over `batch` stacked
/// `[h·w × c]` maps. Output rows follow the input rows; columns are
/// `(ky, kx, channel)`.
pub fn conv3x3_index(h: usize, w: usize, c: usize, batch: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(batch * h * w * 9 * c);
    for b in 0..batch {
        for y in 0..h {
            for x in 0..w {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (sy, sx) = (y + ky, x + kx);
                        let inside = sy >= 1 && sy <= h && sx >= 1 && sx <= w;
                        for k in 0..c {
                            idx.push(if inside {
                                (((b * h + sy - 1) * w + sx - 1) * c + k) as u32
                            } else {
                                GATHER_ZERO
                            });
                        }
                    }
                }
            }
        }
    }
    idx
}

/// Rearranges `[h·w × 4c]` (columns `(dy, dx, channel)`) into the
/// `[2h·2w × c]` map, per batch item.
pub fn pixel_shuffle_index(h: usize, w: usize, c: usize, batch: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(batch * h * w * 4 * c);
    for b in 0..batch {
        for y2 in 0..2 * h {
            for x2 in 0..2 * w {
                let src = (b * h + y2 / 2) * w + x2 / 2;
                let sub = (y2 % 2) * 2 + x2 % 2;
                idx.extend((0..c).map(|k| (src * 4 * c + sub * c + k) as u32));
            }
        }
    }
    idx
}

/// Inverse of [`pixel_shuffle_index`]: `[h·w × c]` to `[h/2·w/2 × 4c]`.
pub fn space_to_depth_index(h: usize, w: usize, c: usize, batch: usize) -> Vec<u32> {
    let (h2, w2) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(batch * h * w * c);
    for b in 0..batch {
        for y in 0..h2 {
            for x in 0..w2 {
                for sub in 0..4 {
                    let (sy, sx) = (2 * y + sub / 2, 2 * x + sub % 2);
                    idx.extend((0..c).map(|k| (((b * h + sy) * w + sx) * c + k) as u32));
                }
            }
        }
    }
    idx
}

/// 3×3 convolution on the token grid followed by three 2× transposed
/// convolutions (kernel 2, stride 2), written as a linear map plus a pixel
/// shuffle. Sigmoid output.
#[derive(Debug)]
pub struct Decoder {
    pub conv_in: Linear,
    pub stages: Vec<Linear>,
    grid: usize,
    widths: Vec<usize>,
}

impl Decoder {
    pub fn new(config: &CodecConfig, rng: &mut ChaCha8Rng) -> Decoder {
        let mut widths = vec![config.width];
        for s in 1..UPSAMPLE_STAGES {
            widths.push(config.width >> s);
        }
        widths.push(config.channels);
        let conv_in = Linear::new(rng, 9 * config.code_dim, config.width);
        let stages = (0..UPSAMPLE_STAGES).map(|s| Linear::new(rng, widths[s], 4 * widths[s + 1])).collect();
        Decoder { conv_in, stages, grid: config.grid_size, widths }
    }

    /// `[batch·h·w × e]` grids to `[batch·H·W × ch]` pixels in `[0, 1]`.
    pub fn forward(&self, grid: &Tensor, batch: usize) -> Result<Tensor> {
        let (n, e) = grid.dims2()?;
        let g = self.grid;
        if n != batch * g * g || 9 * e != self.conv_in.in_dim() {
            return Err(Error::dim(format!(
                "decoder expects [{}×{}], got {:?}",
                batch * g * g,
                self.conv_in.in_dim() / 9,
                grid.shape()
            )));
        }
        let cols = grid.gather(Arc::from(conv3x3_index(g, g, e, batch)), &[n, 9 * e])?;
        let mut x = self.conv_in.forward(&cols)?.relu();
        let mut side = g;
        for (s, stage) in self.stages.iter().enumerate() {
            let c = self.widths[s + 1];
            let y = stage.forward(&x)?;
            let rows = batch * 4 * side * side;
            x = y.gather(Arc::from(pixel_shuffle_index(side, side, c, batch)), &[rows, c])?;
            side *= 2;
            x = if s + 1 == self.stages.len() { x.sigmoid() } else { x.relu() };
        }
        Ok(x)
    }
}

impl Module for Decoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        self.conv_in.collect_params(&join(prefix, "conv_in"), out);
        for (i, s) in self.stages.iter().enumerate() {
            s.collect_params(&join(prefix, &format!("stages.{i}")), out);
        }
    }
}

/// Mirror of the decoder: three space-to-depth steps each followed by a
/// linear map, then a 3×3 convolution to the code width. Used only while
/// pretraining.
#[derive(Debug)]
pub struct CodecEncoder {
    pub stages: Vec<Linear>,
    pub conv_out: Linear,
    image: usize,
    widths: Vec<usize>,
}

impl CodecEncoder {
    pub fn new(config: &CodecConfig, rng: &mut ChaCha8Rng) -> CodecEncoder {
        let mut widths = vec![config.channels];
        for s in (0..UPSAMPLE_STAGES).rev() {
            widths.push(config.width >> s);
        }
        let stages = (0..UPSAMPLE_STAGES).map(|s| Linear::new(rng, 4 * widths[s], widths[s + 1])).collect();
        let conv_out = Linear::new(rng, 9 * config.width, config.code_dim);
        CodecEncoder { stages, conv_out, image: config.image_size(), widths }
    }

    /// `[batch·H·W × ch]` pixels to `[batch·h·w × e]` continuous codes.
    pub fn forward(&self, pixels: &Tensor, batch: usize) -> Result<Tensor> {
        let (n, ch) = pixels.dims2()?;
        if n != batch * self.image * self.image || ch != self.widths[0] {
            return Err(Error::dim(format!(
                "encoder expects [{}×{}], got {:?}",
                batch * self.image * self.image,
                self.widths[0],
                pixels.shape()
            )));
        }
        let mut x = pixels.clone();
        let mut side = self.image;
        for (s, stage) in self.stages.iter().enumerate() {
            let c = self.widths[s];
            let rows = batch * side * side / 4;
            x = x.gather(Arc::from(space_to_depth_index(side, side, c, batch)), &[rows, 4 * c])?;
            side /= 2;
            x = stage.forward(&x)?.relu();
        }
        let c = *self.widths.last().expect("widths");
        let rows = batch * side * side;
        let cols = x.gather(Arc::from(conv3x3_index(side, side, c, batch)), &[rows, 9 * c])?;
        self.conv_out.forward(&cols)
    }
}

impl Module for CodecEncoder {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.collect_params(&join(prefix, &format!("stages.{i}")), out);
        }
        self.conv_out.collect_params(&join(prefix, "conv_out"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_and_space_to_depth_are_inverse() {
        let (h, w, c, b) = (4, 6, 3, 2);
        let s2d = space_to_depth_index(2 * h, 2 * w, c, b);
        let shuffle = pixel_shuffle_index(h, w, c, b);
        let roundtrip: Vec<u32> = shuffle.iter().map(|&i| s2d[i as usize]).collect();
        let identity: Vec<u32> = (0..roundtrip.len() as u32).collect();
        assert_eq!(roundtrip, identity);
    }

    #[test]
    fn conv_index_pads_borders() {
        let idx = conv3x3_index(2, 2, 1, 1);
        // Top-left output: only the bottom-right 2×2 of its window is inside.
        assert_eq!(&idx[..9], &[GATHER_ZERO, GATHER_ZERO, GATHER_ZERO, GATHER_ZERO, 0, 1, GATHER_ZERO, 2, 3]);
    }
}
