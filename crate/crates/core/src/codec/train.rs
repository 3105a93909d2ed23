use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Codec, CodecEncoder};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, freeze, AdamConfig, AdamState, Module, Tensor};
use crate::pipeline::Batcher;

#[derive(Clone, Debug, PartialEq)]
pub struct CodecPretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Commitment weight.
    pub beta: f32,
}

impl Default for CodecPretrainConfig {
    fn default() -> Self {
        CodecPretrainConfig { epochs: 20, batch_size: 16, lr: 2e-3, beta: 0.25 }
    }
}

/// Loss components of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VqLoss {
    pub reconstruction: f32,
    pub codebook: f32,
    pub commitment: f32,
}

#[derive(Clone, Debug)]
pub struct CodecPretrainReport {
    /// Mean squared error of quantize-then-decode over all training images.
    pub reconstruction_mse: f32,
    pub history: Vec<VqLoss>,
    /// Distinct entries used when encoding the training images.
    pub codes_used: usize,
}

fn stack_pixels(images: &[&Image]) -> Result<Tensor> {
    let ch = images[0].channels;
    let mut data = Vec::with_capacity(images.len() * images[0].pixels.len());
    for im in images {
        data.extend_from_slice(&im.pixels);
    }
    let rows = data.len() / ch;
    Tensor::new(data, &[rows, ch])
}

/// Reconstruction + codebook + `beta`·commitment for one stacked batch.
pub fn vq_loss(
    codec: &Codec,
    encoder: &CodecEncoder,
    pixels: &Tensor,
    batch: usize,
    beta: f32,
) -> Result<(Tensor, VqLoss, Vec<usize>)> {
    let z = encoder.forward(pixels, batch)?;
    let (through, picked, indices) = codec.codebook.quantize_tensor(&z)?;
    let recon = codec.decoder.forward(&through, batch)?;
    let sq = |t: &Tensor| t.mul(t).map(|t| t.mean());
    let reconstruction = sq(&recon.sub(pixels)?)?;
    let codebook = sq(&picked.sub(&z.detach())?)?;
    let commitment = sq(&picked.detach().sub(&z)?)?;
    let parts = VqLoss {
        reconstruction: reconstruction.item(),
        codebook: codebook.item(),
        commitment: commitment.item(),
    };
    let total = reconstruction.add(&codebook)?.add(&commitment.scale(beta))?;
    Ok((total, parts, indices))
}

/// Trains codebook and decoder together with a throwaway encoder, then
/// freezes the codec. Codebook entries start from encoder outputs of the
/// first batch, and entries left unused by an epoch are moved onto codes
/// from that epoch's last batch.
pub fn codec_pretrain(
    codec: &Codec,
    images: &[Image],
    config: &CodecPretrainConfig,
    seed: u64,
) -> Result<CodecPretrainReport> {
    if images.is_empty() {
        return Err(Error::Input("codec pretraining needs at least one image".into()));
    }
    let size = codec.config.image_size();
    if let Some(bad) = images.iter().find(|im| im.size != size || im.channels != codec.config.channels) {
        return Err(Error::dim(format!(
            "codec expects {size}×{size}×{} images, got {}×{}×{}",
            codec.config.channels, bad.size, bad.size, bad.channels
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = CodecEncoder::new(&codec.config, &mut rng);
    let mut params = codec.tensors();
    params.extend(encoder.tensors());
    let mut adam = AdamState::new(&params);
    let adam_cfg = AdamConfig::with_lr(config.lr);
    let mut batcher = Batcher::new(images.len(), config.batch_size, seed ^ 0xc0de);
    let steps_per_epoch = images.len().div_ceil(config.batch_size).max(1);
    let (v, e) = (codec.codebook.size(), codec.codebook.dim());

    let mut history = Vec::new();
    for epoch in 0..config.epochs {
        let mut used = vec![false; v];
        let mut last_codes = Vec::new();
        for step in 0..steps_per_epoch {
            let idx = batcher.next_batch();
            let batch: Vec<&Image> = idx.iter().map(|&i| &images[i]).collect();
            let pixels = stack_pixels(&batch)?;
            if epoch == 0 && step == 0 {
                let z = encoder.forward(&pixels, batch.len())?.to_vec();
                reseed_entries(codec, &z, e, (0..v).collect(), &mut rng);
            }
            for p in &params {
                p.zero_grad();
            }
            let (loss, parts, indices) = vq_loss(codec, &encoder, &pixels, batch.len(), config.beta)?;
            loss.backward()?;
            adam_step(&params, &mut adam, &adam_cfg)?;
            history.push(parts);
            for j in indices {
                used[j] = true;
            }
            if step + 1 == steps_per_epoch {
                last_codes = encoder.forward(&pixels, batch.len())?.to_vec();
            }
        }
        let dead: Vec<usize> = (0..v).filter(|&j| !used[j]).collect();
        if !dead.is_empty() && epoch + 1 < config.epochs {
            reseed_entries(codec, &last_codes, e, dead, &mut rng);
        }
    }
    freeze(codec);

    let mut sq_err = 0.0f64;
    let mut count = 0usize;
    let mut used = vec![false; v];
    for chunk in images.chunks(config.batch_size.max(1)) {
        let batch: Vec<&Image> = chunk.iter().collect();
        let pixels = stack_pixels(&batch)?;
        let z = encoder.forward(&pixels, batch.len())?;
        let (through, _, indices) = codec.codebook.quantize_tensor(&z)?;
        for j in indices {
            used[j] = true;
        }
        let recon = codec.decoder.forward(&through, batch.len())?;
        for (a, b) in recon.data().iter().zip(pixels.data().iter()) {
            sq_err += ((a - b) as f64).powi(2);
        }
        count += pixels.numel();
    }
    Ok(CodecPretrainReport {
        reconstruction_mse: (sq_err / count as f64) as f32,
        history,
        codes_used: used.iter().filter(|u| **u).count(),
    })
}

fn reseed_entries(codec: &Codec, codes: &[f32], dim: usize, targets: Vec<usize>, rng: &mut ChaCha8Rng) {
    let rows = codes.len() / dim;
    codec.codebook.entries.update(|book| {
        for j in targets {
            let r = rng.gen_range(0..rows);
            for k in 0..dim {
                book[j * dim + k] = codes[r * dim + k] + rng.gen_range(-1e-3..1e-3);
            }
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::CodecConfig;

    #[test]
    fn empty_corpus_is_rejected() {
        let codec = Codec::new(CodecConfig::default(), 0).unwrap();
        let r = codec_pretrain(&codec, &[], &CodecPretrainConfig::default(), 0);
        assert!(matches!(r, Err(Error::Input(_))));
    }
}
