//! Small vector-quantized image codec: a codebook, straight-through
//! quantization and an upsampling decoder, plus the encoder used while
//! pretraining them.

mod net;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use net::{conv3x3_index, pixel_shuffle_index, space_to_depth_index, CodecEncoder, Decoder};
pub use train::{codec_pretrain, vq_loss, CodecPretrainConfig, CodecPretrainReport, VqLoss};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::numerics::nn::{join, push};
use crate::numerics::{Module, Parameter, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    /// Codebook entries `V`.
    pub codebook_size: usize,
    /// Entry width `e`.
    pub code_dim: usize,
    /// Side of the token grid; the decoder upsamples it 8×.
    pub grid_size: usize,
    pub channels: usize,
    /// Width after the input convolution, halved by every upsampling stage.
    pub width: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig { codebook_size: 128, code_dim: 16, grid_size: 8, channels: 3, width: 64 }
    }
}

/// Number of 2× upsampling stages between grid and image.
pub const UPSAMPLE_STAGES: usize = 3;

impl CodecConfig {
    pub fn image_size(&self) -> usize {
        self.grid_size << UPSAMPLE_STAGES
    }

    pub fn cells(&self) -> usize {
        self.grid_size * self.grid_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.codebook_size == 0 {
            return Err(Error::config("codec.codebook must be positive"));
        }
        if self.code_dim == 0 || self.grid_size == 0 {
            return Err(Error::config("codec.dim and codec.grid must be positive"));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::config(format!("codec channels must be 1 or 3, got {}", self.channels)));
        }
        if self.width < 1 << UPSAMPLE_STAGES {
            return Err(Error::config(format!("codec.width must be at least 8, got {}", self.width)));
        }
        Ok(())
    }
}

/// An `h×w` grid of `e`-dim token vectors, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub values: Vec<f32>,
}

impl LatentGrid {
    pub fn new(height: usize, width: usize, dim: usize, values: Vec<f32>) -> Result<LatentGrid> {
        if values.len() != height * width * dim {
            return Err(Error::dim(format!(
                "latent grid {height}×{width}×{dim} needs {} values, got {}",
                height * width * dim,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("latent grid holds a non-finite value".into()));
        }
        Ok(LatentGrid { height, width, dim, values })
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn cell(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// `[cells × dim]` constant tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.values.clone(), &[self.cells(), self.dim]).expect("grid shape")
    }
}

#[derive(Debug)]
pub struct Codebook {
    /// `[V × e]`.
    pub entries: Tensor,
}

impl Codebook {
    /// Entries drawn uniformly from `±1/V`.
    pub fn new(size: usize, dim: usize, rng: &mut ChaCha8Rng) -> Codebook {
        let r = 1.0 / size as f32;
        let values = (0..size * dim).map(|_| rng.gen_range(-r..r)).collect();
        Codebook { entries: Tensor::param(values, &[size, dim]).expect("codebook shape") }
    }

    pub fn size(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn entry(&self, j: usize) -> Vec<f32> {
        let e = self.dim();
        self.entries.data()[j * e..(j + 1) * e].to_vec()
    }

    /// Index of the entry closest to `cell`, lowest index on ties.
    pub fn nearest(&self, cell: &[f32]) -> usize {
        nearest_in(&self.entries.data(), self.dim(), cell)
    }

    /// Nearest index of every `dim`-wide cell in `values`.
    pub fn assign(&self, values: &[f32]) -> Vec<usize> {
        let book = self.entries.data();
        values.chunks(self.dim()).map(|c| nearest_in(&book, self.dim(), c)).collect()
    }

    /// Smallest entry norm; a trained book must keep this above zero.
    pub fn min_norm(&self) -> f32 {
        self.entries
            .data()
            .chunks(self.dim())
            .map(|e| e.iter().map(|v| v * v).sum::<f32>().sqrt())
            .fold(f32::INFINITY, f32::min)
    }

    /// Quantizes a `[cells × e]` tensor. The first output carries the entry
    /// values forward and the gradient straight back into `grid`; the second
    /// is the same rows picked from the codebook, differentiable with
    /// respect to the entries.
    pub fn quantize_tensor(&self, grid: &Tensor) -> Result<(Tensor, Tensor, Vec<usize>)> {
        let (_, e) = grid.dims2()?;
        if e != self.dim() {
            return Err(Error::dim(format!("grid cells have {e} dims, codebook entries {}", self.dim())));
        }
        let indices = self.assign(&grid.data());
        let picked = self.entries.select_rows(&indices)?;
        let through = grid.straight_through(picked.to_vec())?;
        Ok((through, picked, indices))
    }
}

fn nearest_in(book: &[f32], dim: usize, cell: &[f32]) -> usize {
    let mut best = (0, f32::INFINITY);
    for (j, entry) in book.chunks(dim).enumerate() {
        let d: f32 = entry.iter().zip(cell).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

impl Module for Codebook {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        push(out, prefix, "entries", &self.entries);
    }
}

/// Replaces every cell by its nearest codebook entry.
pub fn quantize(grid: &LatentGrid, book: &Codebook) -> Result<(LatentGrid, Vec<usize>)> {
    if book.size() == 0 {
        return Err(Error::contract("cannot quantize against an empty codebook"));
    }
    if grid.dim != book.dim() {
        return Err(Error::dim(format!("grid cells have {} dims, codebook entries {}", grid.dim, book.dim())));
    }
    let indices = book.assign(&grid.values);
    let data = book.entries.data();
    let mut values = Vec::with_capacity(grid.values.len());
    for &j in &indices {
        values.extend_from_slice(&data[j * grid.dim..(j + 1) * grid.dim]);
    }
    Ok((LatentGrid { values, ..grid.clone() }, indices))
}

/// Codebook and decoder. This is all that is kept after pretraining.
#[derive(Debug)]
pub struct Codec {
    pub config: CodecConfig,
    pub codebook: Codebook,
    pub decoder: Decoder,
}

impl Codec {
    pub fn new(config: CodecConfig, seed: u64) -> Result<Codec> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codebook = Codebook::new(config.codebook_size, config.code_dim, &mut rng);
        let decoder = Decoder::new(&config, &mut rng);
        Ok(Codec { config, codebook, decoder })
    }

    fn check(&self, grid: &LatentGrid) -> Result<()> {
        let c = &self.config;
        if grid.height != c.grid_size || grid.width != c.grid_size || grid.dim != c.code_dim {
            return Err(Error::dim(format!(
                "decoder expects a {0}×{0}×{1} grid, got {2}×{3}×{4}",
                c.grid_size, c.code_dim, grid.height, grid.width, grid.dim
            )));
        }
        Ok(())
    }

    /// Decodes `grid` as given (no quantization).
    pub fn decode(&self, grid: &LatentGrid) -> Result<Image> {
        self.check(grid)?;
        let out = self.decoder.forward(&grid.to_tensor(), 1)?;
        Image::new(self.config.image_size(), self.config.channels, out.to_vec())
    }

    /// Quantizes, then decodes.
    pub fn reconstruct(&self, grid: &LatentGrid) -> Result<Image> {
        self.check(grid)?;
        self.decode(&quantize(grid, &self.codebook)?.0)
    }

    /// Uniformly random codebook entries in every cell.
    pub fn random_grid(&self, rng: &mut ChaCha8Rng) -> LatentGrid {
        let c = &self.config;
        let data = self.codebook.entries.data();
        let mut values = Vec::with_capacity(c.cells() * c.code_dim);
        for _ in 0..c.cells() {
            let j = rng.gen_range(0..c.codebook_size);
            values.extend_from_slice(&data[j * c.code_dim..(j + 1) * c.code_dim]);
        }
        LatentGrid { height: c.grid_size, width: c.grid_size, dim: c.code_dim, values }
    }
}

impl Module for Codec {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        self.codebook.collect_params(&join(prefix, "codebook"), out);
        self.decoder.collect_params(&join(prefix, "decoder"), out);
    }
}
