use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spectrogram::Spectrogram;
use super::{masked_prediction_logits, Embedding};
use crate::error::{Error, Result};
use crate::numerics::nn::{glorot, join, push};
use crate::numerics::{EncoderLayer, Linear, Mlp, Module, Parameter, Tensor, NORM_FLOOR};

#[derive(Clone, Debug, PartialEq)]
pub struct AudioTowerConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub conv_layers: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub hidden: usize,
    /// Transformer blocks `L`.
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    /// Categories `C` of the masked-prediction head.
    pub classes: usize,
    /// Width `p` the head projects hidden states into.
    pub head_dim: usize,
    /// Logit temperature `τ` of the masked-prediction head.
    pub temperature: f32,
    /// Fraction of frontend frames masked by the auxiliary objective.
    pub mask_prob: f32,
}

impl Default for AudioTowerConfig {
    fn default() -> Self {
        AudioTowerConfig {
            n_fft: 400,
            hop: 160,
            conv_layers: 2,
            conv_kernel: 3,
            conv_stride: 2,
            hidden: 32,
            layers: 4,
            heads: 4,
            embed_dim: 64,
            classes: 16,
            head_dim: 16,
            temperature: 0.1,
            mask_prob: 0.15,
        }
    }
}

impl AudioTowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || self.hop == 0 {
            return Err(Error::config(format!("audio.n_fft {} / audio.hop {} invalid", self.n_fft, self.hop)));
        }
        if self.conv_layers == 0 || self.conv_kernel == 0 || self.conv_stride == 0 {
            return Err(Error::config("audio.conv_layers, audio.conv_kernel and audio.conv_stride must be positive"));
        }
        if self.hidden == 0 || self.embed_dim == 0 || self.classes == 0 || self.head_dim == 0 {
            return Err(Error::config("audio.hidden, embed_dim, audio.classes and audio.head_dim must be positive"));
        }
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::config(format!(
                "audio.hidden {} is not divisible by audio.heads {}",
                self.hidden, self.heads
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config(format!("audio.tau must be > 0, got {}", self.temperature)));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::config(format!("audio.mask_prob must lie in [0, 1), got {}", self.mask_prob)));
        }
        Ok(())
    }
}

/// Everything the audio tower computes on one clip.
#[derive(Debug)]
pub struct AudioOutput {
    /// Unit-norm `[1×d]`.
    pub embedding: Tensor,
    /// `h^0` (frontend) through `h^L`, each `[T×hidden]`.
    pub layer_outputs: Vec<Tensor>,
    /// Time-mean of each entry of `layer_outputs`, stacked `[(L+1)×hidden]`.
    pub summaries: Tensor,
    /// Softmax-weighted combination of `summaries`, `[1×hidden]`.
    pub pooled: Tensor,
}

/// Spectrogram frontend, strided 1-D convolutions, `L` transformer blocks,
/// learned layer weighting and a two-layer MLP projection.
#[derive(Debug)]
pub struct AudioTower {
    pub config: AudioTowerConfig,
    pub convs: Vec<Linear>,
    pub layers: Vec<EncoderLayer>,
    /// Logits of the `L+1` layer weights.
    pub layer_logits: Tensor,
    pub projection: Mlp,
    /// Class embeddings `e_c`, `[C×p]`.
    pub class_embeds: Tensor,
    /// `W_P`, `[p×hidden]`.
    pub head_proj: Tensor,
    spectrogram: Spectrogram,
}

impl AudioTower {
    pub fn new(config: AudioTowerConfig, seed: u64) -> Result<AudioTower> {
        config.validate()?;
        let spectrogram = Spectrogram::new(config.n_fft, config.hop)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut width = spectrogram.bins();
        let mut convs = Vec::with_capacity(config.conv_layers);
        for _ in 0..config.conv_layers {
            convs.push(Linear::new(&mut rng, config.conv_kernel * width, config.hidden));
            width = config.hidden;
        }
        let layers = (0..config.layers)
            .map(|_| EncoderLayer::new(&mut rng, config.hidden, config.heads))
            .collect::<Result<Vec<_>>>()?;
        let layer_logits = Tensor::param(vec![0.0; config.layers + 1], &[config.layers + 1])?;
        let projection = Mlp::new(&mut rng, config.hidden, config.embed_dim, config.embed_dim);
        let class_embeds =
            Tensor::param(glorot(&mut rng, config.classes, config.head_dim), &[config.classes, config.head_dim])?;
        let head_proj =
            Tensor::param(glorot(&mut rng, config.head_dim, config.hidden), &[config.head_dim, config.hidden])?;
        Ok(AudioTower { config, convs, layers, layer_logits, projection, class_embeds, head_proj, spectrogram })
    }

    pub fn spectrogram(&self, waveform: &[f32]) -> Result<Tensor> {
        self.spectrogram.compute(waveform)
    }

    /// Frontend frames produced for a spectrogram with `frames` rows.
    pub fn frontend_frames(&self, frames: usize) -> Option<usize> {
        let (k, s) = (self.config.conv_kernel, self.config.conv_stride);
        (0..self.config.conv_layers).try_fold(frames, |t, _| (t >= k).then(|| 1 + (t - k) / s))
    }

    /// Per-utterance standardization, then the strided convolutions.
    pub fn frontend(&self, spec: &Tensor) -> Result<Tensor> {
        let (frames, bins) = spec.dims2()?;
        if bins != self.spectrogram.bins() {
            return Err(Error::dim(format!(
                "audio tower expects {} frequency bins, got {bins}",
                self.spectrogram.bins()
            )));
        }
        if self.frontend_frames(frames).is_none() {
            return Err(Error::Input(format!("{frames} spectrogram frames are too few for the frontend")));
        }
        let values = spec.data();
        let n = values.len() as f32;
        let mean = values.iter().sum::<f32>() / n;
        let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n).sqrt().max(1e-5);
        let normalized: Vec<f32> = values.iter().map(|v| (v - mean) / std).collect();
        drop(values);
        let mut x = Tensor::new(normalized, &[frames, bins])?;
        for conv in &self.convs {
            x = conv.forward(&unfold_frames(&x, self.config.conv_kernel, self.config.conv_stride)?)?.relu();
        }
        Ok(x)
    }

    /// Full forward pass on a spectrogram.
    pub fn forward_spectrogram(&self, spec: &Tensor) -> Result<AudioOutput> {
        let x = self.frontend(spec)?;
        self.forward_frontend(x)
    }

    fn forward_frontend(&self, x: Tensor) -> Result<AudioOutput> {
        let mut layer_outputs = Vec::with_capacity(self.layers.len() + 1);
        layer_outputs.push(x);
        for layer in &self.layers {
            let h = layer.forward(layer_outputs.last().expect("frontend output present"))?;
            layer_outputs.push(h);
        }
        let rows = layer_outputs.iter().map(|h| h.mean_rows()).collect::<Result<Vec<_>>>()?;
        let summaries = Tensor::concat(&rows, 0)?;
        let weights = self.layer_logits.softmax(0)?.reshape(&[1, layer_outputs.len()])?;
        let pooled = weights.matmul(&summaries)?;
        let embedding = self.projection.forward(&pooled)?.l2_normalize_rows(NORM_FLOOR)?;
        Ok(AudioOutput { embedding, layer_outputs, summaries, pooled })
    }

    pub fn forward(&self, waveform: &[f32]) -> Result<AudioOutput> {
        self.forward_spectrogram(&self.spectrogram(waveform)?)
    }

    /// Embedding plus the per-layer hidden states.
    pub fn encode(&self, waveform: &[f32]) -> Result<(Embedding, Vec<Tensor>)> {
        let out = self.forward(waveform)?;
        Ok((Embedding::from_row(&out.embedding), out.layer_outputs))
    }

    pub fn embed(&self, waveform: &[f32]) -> Result<Tensor> {
        Ok(self.forward(waveform)?.embedding)
    }

    /// `[B×d]` stack of embeddings.
    pub fn embed_batch(&self, waveforms: &[&[f32]]) -> Result<Tensor> {
        let rows = waveforms.iter().map(|w| self.embed(w)).collect::<Result<Vec<_>>>()?;
        Tensor::concat(&rows, 0)
    }

    /// Normalized layer weights.
    pub fn layer_weights(&self) -> Vec<f32> {
        self.layer_logits.softmax(0).expect("1-D logits").to_vec()
    }

    /// Masked-prediction objective: a random subset of frontend frames is
    /// zeroed, and the last block's states at those frames must predict the
    /// frame's dominant frequency band (one of `C` equal-width bands).
    pub fn masked_prediction_loss(&self, spec: &Tensor, rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let x = self.frontend(spec)?;
        let (t, hidden) = x.dims2()?;
        let count = ((t as f32 * self.config.mask_prob).round() as usize).clamp(1, t);
        let mut masked: Vec<usize> = sample(rng, t, count).into_vec();
        masked.sort_unstable();
        let mut keep = vec![1.0f32; t * hidden];
        for &m in &masked {
            keep[m * hidden..(m + 1) * hidden].fill(0.0);
        }
        let x = x.mul(&Tensor::new(keep, &[t, hidden])?)?;
        let out = self.forward_frontend(x)?;
        let last = out.layer_outputs.last().expect("at least the frontend output");
        let logits = masked_prediction_logits(
            &last.select_rows(&masked)?,
            &self.class_embeds,
            &self.head_proj,
            self.config.temperature,
        )?;
        let targets = self.frame_targets(spec, &masked)?;
        logits.cross_entropy(&targets)
    }

    fn frame_targets(&self, spec: &Tensor, frames: &[usize]) -> Result<Vec<usize>> {
        let (n, bins) = spec.dims2()?;
        let stride = self.config.conv_stride.pow(self.config.conv_layers as u32);
        let data = spec.data();
        Ok(frames
            .iter()
            .map(|&f| {
                let row = (f * stride).min(n - 1);
                let frame = &data[row * bins..(row + 1) * bins];
                let peak = frame
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                (peak * self.config.classes / bins).min(self.config.classes - 1)
            })
            .collect())
    }
}

/// `[T×c] → [T'×(k·c)]` windows of `k` consecutive frames taken every
/// `stride` frames.
pub fn unfold_frames(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (t, c) = x.dims2()?;
    if t < kernel {
        return Err(Error::Input(format!("{t} frames are fewer than the kernel width {kernel}")));
    }
    let out_t = 1 + (t - kernel) / stride;
    let mut idx = Vec::with_capacity(out_t * kernel * c);
    for o in 0..out_t {
        let start = o * stride * c;
        idx.extend((start..start + kernel * c).map(|i| i as u32));
    }
    x.gather(idx.into(), &[out_t, kernel * c])
}

impl Module for AudioTower {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Parameter>) {
        for (i, conv) in self.convs.iter().enumerate() {
            conv.collect_params(&join(prefix, &format!("convs.{i}")), out);
        }
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect_params(&join(prefix, &format!("layers.{i}")), out);
        }
        push(out, prefix, "layer_logits", &self.layer_logits);
        self.projection.collect_params(&join(prefix, "projection"), out);
        push(out, prefix, "class_embeds", &self.class_embeds);
        push(out, prefix, "head_proj", &self.head_proj);
    }
}
