use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{cx_loss, CrossProjection, MomentumEncoder, NegativeQueue};
use crate::data::PairedSample;
use crate::encoders::{AudioTower, ImageTower};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, global_grad_norm, is_frozen, AdamConfig, AdamState, Module, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastiveConfig {
    pub queue_size: usize,
    pub momentum: f32,
    pub temperature: f32,
    pub batch_size: usize,
    pub lr: f32,
    /// Weight of the auxiliary masked-prediction loss; 0 disables it.
    pub masked_weight: f32,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            queue_size: 512,
            momentum: 0.99,
            temperature: 0.07,
            batch_size: 16,
            lr: 1e-3,
            masked_weight: 0.0,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch must be positive"));
        }
        if self.queue_size < self.batch_size {
            return Err(Error::config(format!(
                "queue_size {} must be at least train.batch {}",
                self.queue_size, self.batch_size
            )));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1], got {}", self.momentum)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config(format!("contrastive.temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        if !(self.masked_weight >= 0.0) {
            return Err(Error::config(format!("train.masked_weight must be ≥ 0, got {}", self.masked_weight)));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub step: u64,
    pub loss: f32,
    pub grad_norm: f32,
    pub queue_fill: usize,
}

impl fmt::Display for StepReport {
    /// `step,loss,grad_norm,queue_fill`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{:.6},{:.6},{}", self.step, self.loss, self.grad_norm, self.queue_fill)
    }
}

/// Trainable state of the contrastive stage: live audio tower, its momentum
/// copy, the projection heads, both queues and the optimizer.
#[derive(Debug)]
pub struct ContrastiveTrainer {
    pub config: ContrastiveConfig,
    pub audio: AudioTower,
    pub momentum: MomentumEncoder,
    pub projection: CrossProjection,
    pub audio_queue: NegativeQueue,
    pub image_queue: NegativeQueue,
    pub adam: AdamState,
    pub step: u64,
    mask_rng: ChaCha8Rng,
}

impl ContrastiveTrainer {
    pub fn new(config: ContrastiveConfig, audio: AudioTower, projection: CrossProjection, seed: u64) -> Result<Self> {
        config.validate()?;
        let dim = audio.config.embed_dim;
        if projection.dim() != dim {
            return Err(Error::config(format!(
                "projection width {} differs from embedding width {dim}",
                projection.dim()
            )));
        }
        let momentum = MomentumEncoder::new(&audio, config.momentum)?;
        let audio_queue = NegativeQueue::new(config.queue_size, dim)?;
        let image_queue = NegativeQueue::new(config.queue_size, dim)?;
        let mut trainer = ContrastiveTrainer {
            config,
            audio,
            momentum,
            projection,
            audio_queue,
            image_queue,
            adam: AdamState::new(&[]),
            step: 0,
            mask_rng: ChaCha8Rng::seed_from_u64(seed),
        };
        trainer.adam = AdamState::new(&trainer.trainable());
        Ok(trainer)
    }

    /// Word position of the masking RNG, for checkpointing.
    pub fn mask_rng_position(&self) -> u128 {
        self.mask_rng.get_word_pos()
    }

    pub fn set_mask_rng_position(&mut self, pos: u128) {
        self.mask_rng.set_word_pos(pos);
    }

    /// Audio tower parameters followed by projection parameters, the order the
    /// optimizer state is kept in.
    pub fn trainable(&self) -> Vec<Tensor> {
        let mut t = self.audio.tensors();
        t.extend(self.projection.tensors());
        t
    }

    /// Forward both towers, CX loss, backward, Adam on the audio tower and
    /// projections, momentum update, then enqueue the batch's keys.
    pub fn train_step(&mut self, image_tower: &ImageTower, batch: &[&PairedSample]) -> Result<StepReport> {
        if !is_frozen(image_tower) {
            return Err(Error::State("the image tower must be frozen before contrastive training".into()));
        }
        if batch.is_empty() {
            return Err(Error::contract("empty training batch"));
        }
        if image_tower.config.embed_dim != self.audio.config.embed_dim {
            return Err(Error::config(format!(
                "image embed_dim {} differs from audio embed_dim {}",
                image_tower.config.embed_dim, self.audio.config.embed_dim
            )));
        }
        let params = self.trainable();
        for p in &params {
            p.zero_grad();
        }
        let images: Vec<_> = batch.iter().map(|s| s.image.clone()).collect();
        let image_emb = image_tower.embed_batch(&images)?;
        let spectrograms =
            batch.iter().map(|s| self.audio.spectrogram(&s.waveform)).collect::<Result<Vec<_>>>()?;
        let audio_rows = spectrograms
            .iter()
            .map(|s| Ok(self.audio.forward_spectrogram(s)?.embedding))
            .collect::<Result<Vec<_>>>()?;
        let audio_emb = Tensor::concat(&audio_rows, 0)?;

        let cx = cx_loss(
            &image_emb,
            &audio_emb,
            &self.projection,
            &self.audio_queue,
            &self.image_queue,
            self.config.temperature,
        )?;
        let mut loss = cx.total;
        if self.config.masked_weight > 0.0 {
            let mut masked = Tensor::scalar(0.0);
            for s in &spectrograms {
                masked = masked.add(&self.audio.masked_prediction_loss(s, &mut self.mask_rng)?)?;
            }
            loss = loss.add(&masked.scale(self.config.masked_weight / spectrograms.len() as f32))?;
        }
        loss.backward()?;
        let grad_norm = global_grad_norm(&params);
        adam_step(&params, &mut self.adam, &AdamConfig::with_lr(self.config.lr))?;
        self.momentum.update(&self.audio)?;

        let keys = spectrograms
            .iter()
            .map(|s| Ok(self.momentum.shadow.forward_spectrogram(s)?.embedding))
            .collect::<Result<Vec<_>>>()?;
        let keys = Tensor::concat(&keys, 0)?;
        self.audio_queue.push(&keys.data())?;
        self.image_queue.push(&image_emb.data())?;
        self.step += 1;
        Ok(StepReport { step: self.step, loss: loss.item(), grad_norm, queue_fill: self.audio_queue.fill() })
    }
}
