//! The two towers. The image tower is trained once and frozen; the audio
//! tower learns to land in the same embedding space.

mod audio;
mod image;
mod spectrogram;

pub use audio::{unfold_frames, AudioOutput, AudioTower, AudioTowerConfig};
pub use image::{patch_index, patchify, ImageTower, ImageTowerConfig};
pub use spectrogram::{Spectrogram, LOG_FLOOR};

use crate::error::{Error, Result};
use crate::numerics::{cosine, Tensor, NORM_FLOOR};

/// Unit-norm vector in the shared embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// Normalizes `values` (norm floor 1e-8).
    pub fn new(values: Vec<f32>) -> Embedding {
        let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt().max(NORM_FLOOR);
        Embedding(values.into_iter().map(|v| v / norm).collect())
    }

    /// Takes the first row of a `[1×d]` (or `[d]`) tensor as-is.
    pub fn from_row(t: &Tensor) -> Embedding {
        let d = *t.shape().last().expect("non-empty shape");
        Embedding(t.data()[..d].to_vec())
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f32 {
        cosine(&self.0, &other.0)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.0.clone(), &[1, self.0.len()]).expect("non-empty embedding")
    }
}

/// Logits of the masked-prediction head:
/// `logits[t][c] = cos(W_P·h_t, e_c) / τ`. Row-wise softmax of the result is
/// the categorical distribution over the `C` classes.
pub fn masked_prediction_logits(
    hidden: &Tensor,
    class_embeds: &Tensor,
    head_proj: &Tensor,
    temperature: f32,
) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::config(format!("temperature must be > 0, got {temperature}")));
    }
    let projected = hidden.matmul(&head_proj.transpose()?)?.l2_normalize_rows(NORM_FLOOR)?;
    let classes = class_embeds.l2_normalize_rows(NORM_FLOOR)?;
    Ok(projected.matmul(&classes.transpose()?)?.scale(1.0 / temperature))
}
