//! Everything a checkpoint holds: configuration, the frozen image tower, the
//! codec and, after the contrastive stage, the audio-side training state.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::checkpoint::{Checkpoint, TensorRecord};
use crate::codec::Codec;
use crate::config::Config;
use crate::contrastive::{ContrastiveTrainer, NegativeQueue};
use crate::data::Image;
use crate::encoders::{AudioTower, Embedding, ImageTower};
use crate::error::{Error, Result};
use crate::generator::{generate, GenerationConfig, GenerationTrace};
use crate::numerics::{freeze, is_frozen, Module, Parameter, Tensor};
use crate::pipeline::fresh_audio_side;

/// Seed offsets for each randomly initialized part, mixed into the master seed.
pub(crate) mod seeds {
    pub const IMAGE_INIT: u64 = 0x1a9e;
    pub const IMAGE_TRAIN: u64 = 0x9e7;
    pub const CODEC_INIT: u64 = 0xc0dec;
    pub const CODEC_TRAIN: u64 = 0xc0de5;
    pub const MASKING: u64 = 0x3a5c;
}

#[derive(Debug)]
pub struct Model {
    pub config: Config,
    pub image: ImageTower,
    pub codec: Codec,
    /// Present once the contrastive stage has started.
    pub trainer: Option<ContrastiveTrainer>,
}

fn named(m: &dyn Module, prefix: &str) -> Vec<Parameter> {
    let mut out = Vec::new();
    m.collect_params(prefix, &mut out);
    out
}

fn records(out: &mut Vec<TensorRecord>, prefix: &str, m: &dyn Module) {
    for Parameter { name, tensor } in named(m, prefix) {
        out.push(TensorRecord { name, shape: tensor.shape().to_vec(), data: tensor.to_vec() });
    }
}

struct Loader {
    records: BTreeMap<String, TensorRecord>,
}

impl Loader {
    fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let r = self
            .records
            .remove(name)
            .ok_or_else(|| Error::Integrity(format!("checkpoint lacks tensor `{name}`")))?;
        if r.shape != shape {
            return Err(Error::Integrity(format!("tensor `{name}` has shape {:?}, model expects {shape:?}", r.shape)));
        }
        Ok(r.data)
    }

    fn fill(&mut self, prefix: &str, m: &dyn Module) -> Result<()> {
        for p in named(m, prefix) {
            let data = self.take(&p.name, p.tensor.shape())?;
            p.tensor.update(|v| v.copy_from_slice(&data));
        }
        Ok(())
    }
}

fn state_value<T: std::str::FromStr>(state: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = state.get(key).ok_or_else(|| Error::Integrity(format!("checkpoint state lacks `{key}`")))?;
    raw.parse().map_err(|_| Error::Integrity(format!("checkpoint state `{key}` = `{raw}` is malformed")))
}

impl Model {
    /// Untrained image tower and codec; no audio side yet.
    pub fn new(config: Config) -> Result<Model> {
        config.validate()?;
        let image = ImageTower::new(config.image.clone(), config.seed ^ seeds::IMAGE_INIT)?;
        let codec = Codec::new(config.codec_config(), config.seed ^ seeds::CODEC_INIT)?;
        Ok(Model { config, image, codec, trainer: None })
    }

    /// Fresh audio side, to be trained against the current image tower.
    pub fn start_audio(&mut self) -> Result<()> {
        let (audio, projection) = fresh_audio_side(self.config.audio.clone(), self.config.seed)?;
        self.trainer = Some(ContrastiveTrainer::new(
            self.config.contrastive.clone(),
            audio,
            projection,
            self.config.seed ^ seeds::MASKING,
        )?);
        Ok(())
    }

    pub fn trainer(&self) -> Result<&ContrastiveTrainer> {
        self.trainer.as_ref().ok_or_else(|| Error::State("checkpoint has no trained audio tower".into()))
    }

    pub fn audio(&self) -> Result<&AudioTower> {
        Ok(&self.trainer()?.audio)
    }

    /// Audio embedding, in the audio tower's own space.
    pub fn audio_embedding(&self, waveform: &[f32]) -> Result<Embedding> {
        Ok(self.audio()?.encode(waveform)?.0)
    }

    /// `g(audio)`: the audio clip mapped into the image embedding space.
    pub fn audio_query(&self, waveform: &[f32]) -> Result<Embedding> {
        let t = self.trainer()?;
        Ok(Embedding::from_row(&t.projection.audio_to_image(&t.audio.embed(waveform)?)?))
    }

    pub fn image_embedding(&self, image: &Image) -> Result<Embedding> {
        self.image.encode(image)
    }

    /// `f(image)`: the image embedding mapped into the audio space.
    pub fn image_query(&self, image: &Image) -> Result<Embedding> {
        let t = self.trainer()?;
        Ok(Embedding::from_row(&t.projection.image_to_audio(&self.image.embed(image)?)?))
    }

    /// Generates an image for `waveform`.
    pub fn generate(&self, waveform: &[f32], config: &GenerationConfig) -> Result<(Image, GenerationTrace)> {
        let target = self.audio_query(waveform)?;
        generate(&target, &self.codec, &self.image, config)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut snapshot = self.config.to_text();
        let mut tensors = Vec::new();
        let frozen = is_frozen(&self.image) && is_frozen(&self.codec);
        writeln!(snapshot, "state.image_frozen = {frozen}").expect("write to string");
        records(&mut tensors, "image", &self.image);
        records(&mut tensors, "codec", &self.codec);
        if let Some(t) = &self.trainer {
            let mut state = String::new();
            writeln!(state, "state.step = {}", t.step).expect("write to string");
            writeln!(state, "state.adam_step = {}", t.adam.step).expect("write to string");
            for (name, q) in [("audio", &t.audio_queue), ("image", &t.image_queue)] {
                writeln!(state, "state.queue.{name}.head = {}", q.head()).expect("write to string");
                writeln!(state, "state.queue.{name}.fill = {}", q.fill()).expect("write to string");
            }
            writeln!(state, "state.mask_rng = {}", t.mask_rng_position()).expect("write to string");
            snapshot.push_str(&state);
            records(&mut tensors, "audio", &t.audio);
            records(&mut tensors, "momentum", &t.momentum.shadow);
            records(&mut tensors, "projection", &t.projection);
            for (name, q) in [("audio", &t.audio_queue), ("image", &t.image_queue)] {
                tensors.push(TensorRecord {
                    name: format!("queue.{name}"),
                    shape: vec![q.capacity(), q.dim()],
                    data: q.storage().to_vec(),
                });
            }
            for (i, p) in trainable_params(t).iter().enumerate() {
                let shape = p.tensor.shape().to_vec();
                tensors.push(TensorRecord {
                    name: format!("adam.first.{}", p.name),
                    shape: shape.clone(),
                    data: t.adam.first[i].clone(),
                });
                tensors.push(TensorRecord {
                    name: format!("adam.second.{}", p.name),
                    shape,
                    data: t.adam.second[i].clone(),
                });
            }
        }
        Checkpoint { snapshot, tensors }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
        let mut config_text = String::new();
        let mut state = BTreeMap::new();
        for line in ckpt.snapshot.lines() {
            match line.split_once('=') {
                Some((k, v)) if k.trim().starts_with("state.") => {
                    state.insert(k.trim().to_string(), v.trim().to_string());
                }
                _ => {
                    config_text.push_str(line);
                    config_text.push('\n');
                }
            }
        }
        let config = Config::from_text(&config_text)?;
        let mut model = Model::new(config)?;
        let mut names = HashSet::new();
        for r in &ckpt.tensors {
            if !names.insert(r.name.as_str()) {
                return Err(Error::Integrity(format!("tensor `{}` appears twice", r.name)));
            }
        }
        let mut loader = Loader { records: ckpt.tensors.iter().map(|r| (r.name.clone(), r.clone())).collect() };
        loader.fill("image", &model.image)?;
        loader.fill("codec", &model.codec)?;
        if state_value::<bool>(&state, "state.image_frozen")? {
            freeze(&model.image);
            freeze(&model.codec);
        }
        if state.contains_key("state.step") {
            model.start_audio()?;
            let t = model.trainer.as_mut().expect("just started");
            loader.fill("audio", &t.audio)?;
            loader.fill("momentum", &t.momentum.shadow)?;
            loader.fill("projection", &t.projection)?;
            let (k, d) = (t.config.queue_size, t.audio.config.embed_dim);
            for name in ["audio", "image"] {
                let storage = loader.take(&format!("queue.{name}"), &[k, d])?;
                let head = state_value(&state, &format!("state.queue.{name}.head"))?;
                let fill = state_value(&state, &format!("state.queue.{name}.fill"))?;
                let q = NegativeQueue::from_parts(k, d, storage, head, fill)
                    .map_err(|e| Error::Integrity(e.to_string()))?;
                if name == "audio" {
                    t.audio_queue = q;
                } else {
                    t.image_queue = q;
                }
            }
            let params = trainable_params(t);
            for (i, p) in params.iter().enumerate() {
                t.adam.first[i] = loader.take(&format!("adam.first.{}", p.name), p.tensor.shape())?;
                t.adam.second[i] = loader.take(&format!("adam.second.{}", p.name), p.tensor.shape())?;
            }
            t.adam.step = state_value(&state, "state.adam_step")?;
            t.step = state_value(&state, "state.step")?;
            t.set_mask_rng_position(state_value(&state, "state.mask_rng")?);
        }
        if let Some(extra) = loader.records.keys().next() {
            return Err(Error::Integrity(format!("checkpoint holds unknown tensor `{extra}`")));
        }
        Ok(model)
    }

    /// Checksum-style fingerprint of every frozen weight (image tower and
    /// codec), for immutability checks.
    pub fn frozen_fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for t in self.image.tensors().iter().chain(self.codec.tensors().iter()) {
            for v in t.data().iter() {
                h.update(&v.to_le_bytes());
            }
        }
        h.finalize()
    }
}

/// Named trainable parameters in optimizer order.
fn trainable_params(t: &ContrastiveTrainer) -> Vec<Parameter> {
    let mut out = Vec::new();
    t.audio.collect_params("audio", &mut out);
    t.projection.collect_params("projection", &mut out);
    debug_assert!(out.iter().zip(t.trainable()).all(|(p, q): (&Parameter, Tensor)| p.tensor.ptr_eq(&q)));
    out
}
