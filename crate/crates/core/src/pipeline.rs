//! End-to-end stages shared by the command-line driver and the examples.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::contrastive::{ContrastiveTrainer, CrossProjection, StepReport};
use crate::data::{Corpus, PairedSample};
use crate::encoders::{AudioTower, ImageTower};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, freeze, AdamConfig, AdamState, Linear, Module, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ImagePretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
}

impl Default for ImagePretrainConfig {
    fn default() -> Self {
        ImagePretrainConfig { epochs: 6, batch_size: 16, lr: 2e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImagePretrainReport {
    pub train_accuracy: f32,
    pub held_out_accuracy: f32,
    pub final_loss: f32,
}

/// Deterministic epoch-wise shuffled batches over `n` items.
pub struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(n: usize, batch: usize, seed: u64) -> Batcher {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Batcher { order, cursor: 0, batch: batch.min(n).max(1), rng }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.cursor + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let out = self.order[self.cursor..self.cursor + self.batch].to_vec();
        self.cursor += self.batch;
        out
    }
}

/// Trains the image tower with a temporary linear class head on top of its
/// embedding, discards the head and freezes the tower.
pub fn pretrain_image_tower(
    tower: &ImageTower,
    corpus: &Corpus,
    config: &ImagePretrainConfig,
    seed: u64,
) -> Result<ImagePretrainReport> {
    if corpus.train.is_empty() {
        return Err(Error::Input("image pretraining needs a non-empty corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head = Linear::new(&mut rng, tower.config.embed_dim, corpus.class_count());
    let mut params = tower.tensors();
    params.extend(head.tensors());
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig::with_lr(config.lr);
    let n = corpus.train.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let mut batcher = Batcher::new(n, config.batch_size, seed ^ 0x5eed);
    let mut final_loss = f32::NAN;
    for _ in 0..config.epochs * steps_per_epoch {
        for p in &params {
            p.zero_grad();
        }
        let idx = batcher.next_batch();
        let images: Vec<_> = idx.iter().map(|&i| corpus.train[i].image.clone()).collect();
        let targets: Vec<usize> = idx.iter().map(|&i| corpus.train[i].class_id).collect();
        let logits = head.forward(&tower.embed_batch(&images)?.scale(CLASS_LOGIT_SCALE))?;
        let loss = logits.cross_entropy(&targets)?;
        final_loss = loss.item();
        loss.backward()?;
        adam_step(&params, &mut adam, &adam_cfg)?;
    }
    freeze(tower);
    let accuracy = |samples: &[PairedSample]| -> Result<f32> {
        let mut correct = 0usize;
        for s in samples {
            let logits = head.forward(&tower.embed(&s.image)?.scale(CLASS_LOGIT_SCALE))?.to_vec();
            let pred = argmax(&logits);
            correct += usize::from(pred == s.class_id);
        }
        Ok(correct as f32 / samples.len().max(1) as f32)
    };
    Ok(ImagePretrainReport {
        train_accuracy: accuracy(&corpus.train)?,
        held_out_accuracy: accuracy(&corpus.held_out)?,
        final_loss,
    })
}

/// Unit-norm embeddings are scaled before the class head.
const CLASS_LOGIT_SCALE: f32 = 8.0;

pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs `steps` contrastive steps over the corpus's train split, writing one
/// `step,loss,grad_norm,queue_fill` line per step to `log`.
pub fn train_audio(
    trainer: &mut ContrastiveTrainer,
    image_tower: &ImageTower,
    corpus: &Corpus,
    steps: usize,
    seed: u64,
    log: &mut dyn Write,
) -> Result<Vec<StepReport>> {
    // Batches continue deterministically from the trainer's step count.
    let mut batcher = Batcher::new(corpus.train.len(), trainer.config.batch_size, seed ^ 0xa0d1);
    for _ in 0..trainer.step {
        batcher.next_batch();
    }
    let mut reports = Vec::with_capacity(steps);
    for _ in 0..steps {
        let idx = batcher.next_batch();
        let batch: Vec<&PairedSample> = idx.iter().map(|&i| &corpus.train[i]).collect();
        let report = trainer.train_step(image_tower, &batch)?;
        writeln!(log, "{report}")?;
        reports.push(report);
    }
    Ok(reports)
}

/// Cross-modal similarity used everywhere audio is compared with images:
/// the audio embedding is mapped into the image space by `g` first.
pub fn audio_query(projection: &CrossProjection, audio_embedding: &Tensor) -> Result<Tensor> {
    projection.audio_to_image(audio_embedding)
}

/// Fresh audio tower and projection heads seeded from `seed`.
pub fn fresh_audio_side(
    audio: crate::encoders::AudioTowerConfig,
    seed: u64,
) -> Result<(AudioTower, CrossProjection)> {
    let dim = audio.embed_dim;
    Ok((AudioTower::new(audio, seed ^ 0xa0d10)?, CrossProjection::new(dim, seed ^ 0xc805)))
}
