//! Audio-guided image generation by optimizing a token grid against a
//! frozen codec and image tower.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codec::{Codec, LatentGrid};
use crate::data::Image;
use crate::encoders::{Embedding, ImageTower};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, is_frozen, AdamConfig, AdamState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridOptimizer {
    /// Fixed-step gradient ascent on the similarity.
    Sgd,
    /// Adam on the grid, `step_size` as the learning rate.
    Adam,
}

impl fmt::Display for GridOptimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridOptimizer::Sgd => "sgd",
            GridOptimizer::Adam => "adam",
        })
    }
}

impl FromStr for GridOptimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(GridOptimizer::Sgd),
            "adam" => Ok(GridOptimizer::Adam),
            _ => Err(Error::config(format!("gen.optimizer must be sgd or adam, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    pub steps: usize,
    pub step_size: f32,
    pub seed: u64,
    /// Quantize (straight-through) on every n-th step; 1 means always.
    pub quantize_every: usize,
    pub record_every: usize,
    pub optimizer: GridOptimizer,
    /// Keep a decoded image with every trace record.
    pub snapshots: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            steps: 200,
            step_size: 0.05,
            seed: 0,
            quantize_every: 1,
            record_every: 1,
            optimizer: GridOptimizer::Adam,
            snapshots: false,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("gen.steps must be ≥ 1"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::config(format!("gen.step_size must be > 0, got {}", self.step_size)));
        }
        if self.quantize_every == 0 {
            return Err(Error::config("gen.quantize_every must be ≥ 1"));
        }
        if self.record_every == 0 {
            return Err(Error::config("gen.record_every must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub similarity: f32,
    pub snapshot: Option<Image>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationTrace {
    pub records: Vec<TraceRecord>,
    pub best_step: usize,
    pub best_similarity: f32,
}

impl GenerationTrace {
    pub fn initial_similarity(&self) -> f32 {
        self.records.first().map_or(f32::NAN, |r| r.similarity)
    }

    /// Running maximum over the records.
    pub fn best_so_far(&self) -> Vec<f32> {
        let mut best = f32::NEG_INFINITY;
        self.records
            .iter()
            .map(|r| {
                best = best.max(r.similarity);
                best
            })
            .collect()
    }

    /// One `step,similarity` line per record.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            writeln!(s, "{},{:.6}", r.step, r.similarity).expect("write to string");
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Every cell set to a uniformly drawn codebook entry.
pub fn init_latent(seed: u64, codec: &Codec) -> LatentGrid {
    codec.random_grid(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn check_frozen(codec: &Codec, tower: &ImageTower) -> Result<()> {
    if !is_frozen(codec) {
        return Err(Error::State("generation needs a frozen codec".into()));
    }
    if !is_frozen(tower) {
        return Err(Error::State("generation needs a frozen image tower".into()));
    }
    Ok(())
}

fn check_target(target: &Embedding, tower: &ImageTower) -> Result<()> {
    if target.dim() != tower.config.embed_dim {
        return Err(Error::dim(format!(
            "target has {} dims, image embeddings {}",
            target.dim(),
            tower.config.embed_dim
        )));
    }
    Ok(())
}

/// `1 − cos(image_encode(decode(grid)), target)` as a scalar tensor, with
/// straight-through quantization of `grid` when `quantize` is set.
pub fn generation_loss(
    grid: &Tensor,
    target: &Embedding,
    codec: &Codec,
    tower: &ImageTower,
    quantize: bool,
) -> Result<Tensor> {
    let tokens = if quantize { codec.codebook.quantize_tensor(grid)?.0 } else { grid.clone() };
    let pixels = codec.decoder.forward(&tokens, 1)?;
    let emb = tower.embed_pixels(&pixels)?;
    let sim = emb.matmul(&target.to_tensor().transpose()?)?.sum();
    Tensor::scalar(1.0).sub(&sim)
}

fn similarity_of(loss: &Tensor) -> f32 {
    (1.0 - loss.item()).clamp(-1.0, 1.0)
}

/// Similarity of the decoded grid to `target` and its gradient with respect
/// to the grid values.
pub fn similarity_grad(
    grid: &LatentGrid,
    target: &Embedding,
    codec: &Codec,
    tower: &ImageTower,
    quantize: bool,
) -> Result<(f32, Vec<f32>)> {
    check_target(target, tower)?;
    let g = Tensor::param(grid.values.clone(), &[grid.cells(), grid.dim])?;
    let loss = generation_loss(&g, target, codec, tower, quantize)?;
    loss.backward()?;
    let grad = g.grad().unwrap_or_else(|| vec![0.0; grid.values.len()]);
    Ok((similarity_of(&loss), grad.into_iter().map(|v| -v).collect()))
}

/// One fixed-size gradient step on the grid that lowers `1 − cos`. Returns
/// the updated grid and the similarity before the step.
pub fn generation_step(
    grid: &LatentGrid,
    target: &Embedding,
    codec: &Codec,
    tower: &ImageTower,
    step_size: f32,
) -> Result<(LatentGrid, f32)> {
    check_frozen(codec, tower)?;
    let (sim, grad) = similarity_grad(grid, target, codec, tower, true)?;
    let mut next = grid.clone();
    for (v, g) in next.values.iter_mut().zip(&grad) {
        *v += step_size * g;
    }
    Ok((next, sim))
}

/// Decoded image of `grid`, quantized first when `quantize` is set.
fn render(codec: &Codec, grid: &LatentGrid, quantize: bool) -> Result<Image> {
    if quantize {
        codec.reconstruct(grid)
    } else {
        codec.decode(grid)
    }
}

/// Optimizes a grid toward `target` and returns the image at the best
/// recorded step.
pub fn generate(
    target: &Embedding,
    codec: &Codec,
    tower: &ImageTower,
    config: &GenerationConfig,
) -> Result<(Image, GenerationTrace)> {
    config.validate()?;
    check_frozen(codec, tower)?;
    check_target(target, tower)?;
    let init = init_latent(config.seed, codec);
    let grid = Tensor::param(init.values.clone(), &[init.cells(), init.dim])?;
    let mut adam = AdamState::new(std::slice::from_ref(&grid));
    let adam_cfg = AdamConfig::with_lr(config.step_size);

    let mut records = Vec::new();
    let mut best: Option<(usize, f32, (LatentGrid, bool))> = None;
    for step in 0..=config.steps {
        let quantize = step % config.quantize_every == 0;
        grid.zero_grad();
        let loss = generation_loss(&grid, target, codec, tower, quantize)?;
        let sim = similarity_of(&loss);
        if step % config.record_every == 0 || step == config.steps {
            let state = (LatentGrid { values: grid.to_vec(), ..init.clone() }, quantize);
            let snapshot = if config.snapshots { Some(render(codec, &state.0, quantize)?) } else { None };
            records.push(TraceRecord { step, similarity: sim, snapshot });
            if best.as_ref().is_none_or(|b| sim > b.1) {
                best = Some((step, sim, state));
            }
        }
        if step == config.steps {
            break;
        }
        loss.backward()?;
        match config.optimizer {
            GridOptimizer::Sgd => {
                let g = grid.grad().unwrap_or_default();
                grid.update(|v| {
                    for (x, d) in v.iter_mut().zip(&g) {
                        *x -= config.step_size * d;
                    }
                });
            }
            GridOptimizer::Adam => adam_step(std::slice::from_ref(&grid), &mut adam, &adam_cfg)?,
        }
    }
    let (best_step, best_similarity, (best_grid, quantized)) = best.expect("at least one record");
    let image = render(codec, &best_grid, quantized)?;
    Ok((image, GenerationTrace { records, best_step, best_similarity }))
}
