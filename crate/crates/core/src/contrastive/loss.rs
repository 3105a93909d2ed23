use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::NegativeQueue;
use crate::error::{Error, Result};
use crate::numerics::nn::join;
use crate::numerics::{Mlp, Module, Parameter, Tensor, NORM_FLOOR};

/// Batched InfoNCE: row `i` of `query` is scored against row `i` of
/// `positive` and against every key in `negatives`, at temperature `t`.
/// Returns the batch mean of
/// `−log(exp(q·k⁺/t) / (exp(q·k⁺/t) + Σ_j exp(q·k⁻_j/t)))`.
pub fn info_nce(query: &Tensor, positive: &Tensor, negatives: &NegativeQueue, temperature: f32) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::contract(format!("temperature must be > 0, got {temperature}")));
    }
    if negatives.is_empty() {
        return Err(Error::contract("InfoNCE needs at least one queued negative"));
    }
    if query.shape() != positive.shape() {
        return Err(Error::contract(format!(
            "query {:?} and positive {:?} are not aligned",
            query.shape(),
            positive.shape()
        )));
    }
    let (batch, _) = query.dims2()?;
    let pos = query.mul(positive)?.sum_cols()?;
    let neg = query.matmul(&negatives.as_tensor()?.transpose()?)?;
    let logits = Tensor::concat(&[pos, neg], 1)?.scale(1.0 / temperature);
    logits.cross_entropy(&vec![0; batch])
}

/// Projection heads: `f` maps image embeddings toward the audio side,
/// `g` maps audio embeddings toward the image side. Outputs are re-normalized.
#[derive(Debug)]
pub struct CrossProjection {
    pub f: Mlp,
    pub g: Mlp,
}

impl CrossProjection {
    pub fn new(dim: usize, seed: u64) -> CrossProjection {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CrossProjection { f: Mlp::new(&mut rng, dim, dim, dim), g: Mlp::new(&mut rng, dim, dim, dim) }
    }

    /// Both heads start as `relu(x)` followed by normalization: identity
    /// weights, zero biases.
    pub fn identity(dim: usize) -> CrossProjection {
        let p = CrossProjection::new(dim, 0);
        let eye: Vec<f32> = (0..dim * dim).map(|i| if i / dim == i % dim { 1.0 } else { 0.0 }).collect();
        for lin in [&p.f.fc1, &p.f.fc2, &p.g.fc1, &p.g.fc2] {
            lin.weight.update(|w| w.copy_from_slice(&eye));
            lin.bias.update(|b| b.fill(0.0));
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.f.fc1.in_dim()
    }

    pub fn image_to_audio(&self, image: &Tensor) -> Result<Tensor> {
        self.f.forward(image)?.l2_normalize_rows(NORM_FLOOR)
    }

    pub fn audio_to_image(&self, audio: &Tensor) -> Result<Tensor> {
        self.g.forward(audio)?.l2_normalize_rows(NORM_FLOOR)
    }
}

impl Module for CrossProjection {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        self.f.collect_params(&join(prefix, "f"), out);
        self.g.collect_params(&join(prefix, "g"), out);
    }
}

/// The two directional terms of the cross-projection loss.
#[derive(Debug)]
pub struct CxLoss {
    /// `L(f(image), audio) + L(image, g(audio))`.
    pub total: Tensor,
    /// `L(f(image), audio)` against the audio queue; 0 while it warms up.
    pub image_to_audio: f32,
    /// `L(image, g(audio))` against the image queue; 0 while it warms up.
    pub audio_to_image: f32,
}

/// Cross-projection loss over an aligned batch. A direction whose queue holds
/// fewer keys than the batch size contributes 0.
pub fn cx_loss(
    image: &Tensor,
    audio: &Tensor,
    projection: &CrossProjection,
    audio_queue: &NegativeQueue,
    image_queue: &NegativeQueue,
    temperature: f32,
) -> Result<CxLoss> {
    if image.shape() != audio.shape() {
        return Err(Error::contract(format!(
            "image batch {:?} and audio batch {:?} are not aligned",
            image.shape(),
            audio.shape()
        )));
    }
    let (batch, _) = image.dims2()?;
    let mut total = Tensor::scalar(0.0);
    let mut image_to_audio = 0.0;
    let mut audio_to_image = 0.0;
    if audio_queue.fill() >= batch {
        let term = info_nce(&projection.image_to_audio(image)?, audio, audio_queue, temperature)?;
        image_to_audio = term.item();
        total = total.add(&term)?;
    }
    if image_queue.fill() >= batch {
        let term = info_nce(&projection.audio_to_image(audio)?, image, image_queue, temperature)?;
        audio_to_image = term.item();
        total = total.add(&term)?;
    }
    Ok(CxLoss { total, image_to_audio, audio_to_image })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(dim: usize, i: usize) -> Vec<f32> {
        (0..dim).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn uniform_similarities_give_log_k_plus_one() {
        let mut q = NegativeQueue::new(8, 4).unwrap();
        let key = unit(4, 1);
        q.push(&key.repeat(8)).unwrap();
        let query = Tensor::new(unit(4, 0), &[1, 4]).unwrap();
        let pos = Tensor::new(key, &[1, 4]).unwrap();
        let l = info_nce(&query, &pos, &q, 0.07).unwrap().item();
        assert!((l - 9f32.ln()).abs() < 1e-5, "{l}");
    }

    #[test]
    fn empty_queue_is_a_contract_error() {
        let q = NegativeQueue::new(4, 2).unwrap();
        let x = Tensor::new(unit(2, 0), &[1, 2]).unwrap();
        assert!(matches!(info_nce(&x, &x, &q, 0.07), Err(Error::Contract(_))));
    }

    #[test]
    fn warmup_skips_directions() {
        let p = CrossProjection::new(4, 1);
        let q = NegativeQueue::new(8, 4).unwrap();
        let x = Tensor::new(unit(4, 0).repeat(2), &[2, 4]).unwrap();
        let l = cx_loss(&x, &x, &p, &q, &q, 0.07).unwrap();
        assert_eq!(l.total.item(), 0.0);
        assert!(!l.total.requires_grad());
    }

    #[test]
    fn misaligned_batch_is_rejected() {
        let p = CrossProjection::new(4, 1);
        let q = NegativeQueue::new(8, 4).unwrap();
        let a = Tensor::zeros(&[2, 4]);
        let b = Tensor::zeros(&[3, 4]);
        assert!(matches!(cx_loss(&a, &b, &p, &q, &q, 0.07), Err(Error::Contract(_))));
    }
}
