use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Embedding;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::numerics::nn::{glorot, join, push};
use crate::numerics::{EncoderLayer, Linear, Mlp, Module, Parameter, Tensor, NORM_FLOOR};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageTowerConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    /// Patch feature width `c`.
    pub width: usize,
    pub sa_layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
}

impl Default for ImageTowerConfig {
    fn default() -> Self {
        ImageTowerConfig {
            image_size: 64,
            patch_size: 8,
            channels: 3,
            width: 32,
            sa_layers: 4,
            heads: 4,
            embed_dim: 64,
        }
    }
}

impl ImageTowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(Error::config(format!(
                "image.size {} is not divisible by image.patch {}",
                self.image_size, self.patch_size
            )));
        }
        if self.channels == 0 || self.width == 0 || self.embed_dim == 0 {
            return Err(Error::config("image.channels, image.width and embed_dim must be positive"));
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config(format!(
                "image.width {} is not divisible by image.heads {}",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    /// `N_p`, the number of patches.
    pub fn patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

/// Flat indices that turn an `[H×W×ch]` buffer into `[N_p × patch_len]`
/// patches, raster order, each patch flattened row-major.
pub fn patch_index(image_size: usize, patch_size: usize, channels: usize) -> Vec<u32> {
    let side = image_size / patch_size;
    let mut idx = Vec::with_capacity(image_size * image_size * channels);
    for pr in 0..side {
        for pc in 0..side {
            for y in 0..patch_size {
                for x in 0..patch_size {
                    let base = ((pr * patch_size + y) * image_size + pc * patch_size + x) * channels;
                    idx.extend((0..channels).map(|k| (base + k) as u32));
                }
            }
        }
    }
    idx
}

/// Splits an image into non-overlapping flattened patches.
pub fn patchify(image: &Image, patch_size: usize) -> Result<Tensor> {
    if patch_size == 0 || image.size % patch_size != 0 {
        return Err(Error::dim(format!(
            "image of side {} cannot be cut into {patch_size}-pixel patches",
            image.size
        )));
    }
    let side = image.size / patch_size;
    let len = patch_size * patch_size * image.channels;
    let idx = patch_index(image.size, patch_size, image.channels);
    let pixels: Vec<f32> = idx.iter().map(|&i| image.pixels[i as usize]).collect();
    Tensor::new(pixels, &[side * side, len])
}

/// Patch transformer with average pooling and a two-layer MLP projection.
#[derive(Debug)]
pub struct ImageTower {
    pub config: ImageTowerConfig,
    pub patch_embed: Linear,
    pub pos_embed: Tensor,
    pub layers: Vec<EncoderLayer>,
    pub projection: Mlp,
    patch_index: Arc<[u32]>,
}

impl ImageTower {
    pub fn new(config: ImageTowerConfig, seed: u64) -> Result<ImageTower> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_p = config.patches();
        let patch_embed = Linear::new(&mut rng, config.patch_len(), config.width);
        let pos_embed = Tensor::param(glorot(&mut rng, n_p, config.width), &[n_p, config.width])?;
        let layers = (0..config.sa_layers)
            .map(|_| EncoderLayer::new(&mut rng, config.width, config.heads))
            .collect::<Result<Vec<_>>>()?;
        let projection = Mlp::new(&mut rng, config.width, config.embed_dim, config.embed_dim);
        let patch_index = patch_index(config.image_size, config.patch_size, config.channels).into();
        Ok(ImageTower { config, patch_embed, pos_embed, layers, projection, patch_index })
    }

    fn check(&self, image: &Image) -> Result<()> {
        let c = &self.config;
        if image.size != c.image_size || image.channels != c.channels {
            return Err(Error::dim(format!(
                "image tower expects {}×{}×{}, got {}×{}×{}",
                c.image_size, c.image_size, c.channels, image.size, image.size, image.channels
            )));
        }
        Ok(())
    }

    /// Pooled patch features `r = (1/N_p) Σ S_j` for already patchified input.
    pub fn pool(&self, patches: &Tensor) -> Result<Tensor> {
        let mut s = self.patch_embed.forward(patches)?.add(&self.pos_embed)?;
        for layer in &self.layers {
            s = layer.forward(&s)?;
        }
        s.mean_rows()
    }

    /// Unit-norm `[1×d]` embedding of an `[H×W×ch]`-shaped tensor, differentiable
    /// with respect to the pixels.
    pub fn embed_pixels(&self, pixels: &Tensor) -> Result<Tensor> {
        let c = &self.config;
        if pixels.numel() != c.image_size * c.image_size * c.channels {
            return Err(Error::dim(format!(
                "image tower expects {}×{}×{} pixels, got shape {:?}",
                c.image_size,
                c.image_size,
                c.channels,
                pixels.shape()
            )));
        }
        let patches = pixels.gather(self.patch_index.clone(), &[c.patches(), c.patch_len()])?;
        self.project(&self.pool(&patches)?)
    }

    fn project(&self, pooled: &Tensor) -> Result<Tensor> {
        self.projection.forward(pooled)?.l2_normalize_rows(NORM_FLOOR)
    }

    /// Differentiable `[1×d]` embedding of a concrete image.
    pub fn embed(&self, image: &Image) -> Result<Tensor> {
        self.check(image)?;
        self.project(&self.pool(&patchify(image, self.config.patch_size)?)?)
    }

    pub fn encode(&self, image: &Image) -> Result<Embedding> {
        Ok(Embedding::from_row(&self.embed(image)?))
    }

    /// `[B×d]` stack of embeddings.
    pub fn embed_batch(&self, images: &[Image]) -> Result<Tensor> {
        let rows = images.iter().map(|im| self.embed(im)).collect::<Result<Vec<_>>>()?;
        Tensor::concat(&rows, 0)
    }
}

impl Module for ImageTower {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        self.patch_embed.collect_params(&join(prefix, "patch_embed"), out);
        push(out, prefix, "pos_embed", &self.pos_embed);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect_params(&join(prefix, &format!("layers.{i}")), out);
        }
        self.projection.collect_params(&join(prefix, "projection"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(size: usize, f: impl Fn(usize, usize) -> f32) -> Image {
        let px = (0..size * size).map(|i| f(i / size, i % size)).collect();
        Image::new(size, 1, px).unwrap()
    }

    #[test]
    fn gray_64_gives_64_patches_of_64() {
        let t = patchify(&Image::filled(64, 1, 0.3), 8).unwrap();
        assert_eq!(t.shape(), &[64, 64]);
    }

    #[test]
    fn constant_image_patches_identical() {
        let t = patchify(&Image::filled(16, 3, 0.7), 8).unwrap().to_vec();
        let first = t[..192].to_vec();
        assert!(t.chunks(192).all(|p| p == first.as_slice()));
    }

    #[test]
    fn checkerboard_alternates_two_patches() {
        let im = gray(32, |y, x| ((y / 8 + x / 8) % 2) as f32);
        let t = patchify(&im, 8).unwrap().to_vec();
        let patches: Vec<&[f32]> = t.chunks(64).collect();
        for (i, p) in patches.iter().enumerate() {
            let (r, c) = (i / 4, i % 4);
            let expect = ((r + c) % 2) as f32;
            assert!(p.iter().all(|&v| v == expect));
        }
        assert_ne!(patches[0], patches[1]);
        assert_eq!(patches[0], patches[2]);
    }

    #[test]
    fn patch_is_row_major_within_patch() {
        let im = gray(16, |y, x| (y * 16 + x) as f32);
        let t = patchify(&im, 8).unwrap().to_vec();
        // Second patch (top row, second column) starts at pixel (0, 8).
        assert_eq!(t[64], 8.0);
        assert_eq!(t[64 + 8], 24.0);
    }

    #[test]
    fn wrong_size_is_a_dimension_error() {
        let tower = ImageTower::new(ImageTowerConfig::default(), 0).unwrap();
        assert!(matches!(tower.encode(&Image::filled(32, 3, 0.0)), Err(Error::Dimension(_))));
    }
}
