//! Flat `key = value` configuration covering every tunable of the pipeline.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::codec::{CodecConfig, CodecPretrainConfig, UPSAMPLE_STAGES};
use crate::contrastive::ContrastiveConfig;
use crate::data::SynthCorpusConfig;
use crate::encoders::{AudioTowerConfig, ImageTowerConfig, Spectrogram};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::generator::GenerationConfig;
use crate::pipeline::ImagePretrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    /// Master seed: corpus, initializations and batch order all derive from it.
    pub seed: u64,
    pub corpus: SynthCorpusConfig,
    pub image: ImageTowerConfig,
    pub image_pretrain: ImagePretrainConfig,
    pub audio: AudioTowerConfig,
    pub contrastive: ContrastiveConfig,
    pub train_steps: usize,
    pub codec: CodecConfig,
    pub codec_pretrain: CodecPretrainConfig,
    pub generation: GenerationConfig,
    pub eval: EvalConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 7,
            corpus: SynthCorpusConfig::default(),
            image: ImageTowerConfig::default(),
            image_pretrain: ImagePretrainConfig::default(),
            audio: AudioTowerConfig::default(),
            contrastive: ContrastiveConfig::default(),
            train_steps: 600,
            codec: CodecConfig::default(),
            codec_pretrain: CodecPretrainConfig::default(),
            generation: GenerationConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::config(format!("{key}: cannot parse `{value}`")))
}

macro_rules! config_keys {
    ($($key:literal => $($path:ident).+;)*) => {
        /// Every key accepted in a config file, in the order they are written.
        pub const KEYS: &[&str] = &[$($key),*];

        impl Config {
            /// Sets one key from its text form. Unknown keys are rejected.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($path).+ = parse_value($key, value)?,)*
                    _ => return Err(Error::config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    $($key => Some(self.$($path).+.to_string()),)*
                    _ => None,
                }
            }
        }
    };
}

config_keys! {
    "seed" => seed;
    "corpus.classes" => corpus.class_count;
    "corpus.per_class" => corpus.per_class;
    "corpus.split" => corpus.train_fraction;
    "corpus.clip_len" => corpus.clip_len;
    "image.size" => image.image_size;
    "image.patch" => image.patch_size;
    "image.channels" => image.channels;
    "image.width" => image.width;
    "image.layers" => image.sa_layers;
    "image.heads" => image.heads;
    "image.embed_dim" => image.embed_dim;
    "image.epochs" => image_pretrain.epochs;
    "image.batch" => image_pretrain.batch_size;
    "image.lr" => image_pretrain.lr;
    "audio.n_fft" => audio.n_fft;
    "audio.hop" => audio.hop;
    "audio.conv_layers" => audio.conv_layers;
    "audio.conv_kernel" => audio.conv_kernel;
    "audio.conv_stride" => audio.conv_stride;
    "audio.hidden" => audio.hidden;
    "audio.layers" => audio.layers;
    "audio.heads" => audio.heads;
    "audio.embed_dim" => audio.embed_dim;
    "audio.classes" => audio.classes;
    "audio.head_dim" => audio.head_dim;
    "audio.tau" => audio.temperature;
    "audio.mask_prob" => audio.mask_prob;
    "queue_size" => contrastive.queue_size;
    "momentum" => contrastive.momentum;
    "temperature" => contrastive.temperature;
    "train.batch" => contrastive.batch_size;
    "train.lr" => contrastive.lr;
    "train.masked_weight" => contrastive.masked_weight;
    "train.steps" => train_steps;
    "codec.codebook" => codec.codebook_size;
    "codec.dim" => codec.code_dim;
    "codec.grid" => codec.grid_size;
    "codec.width" => codec.width;
    "codec.epochs" => codec_pretrain.epochs;
    "codec.batch" => codec_pretrain.batch_size;
    "codec.lr" => codec_pretrain.lr;
    "codec.beta" => codec_pretrain.beta;
    "gen.steps" => generation.steps;
    "gen.step_size" => generation.step_size;
    "gen.seed" => generation.seed;
    "gen.quantize_every" => generation.quantize_every;
    "gen.record_every" => generation.record_every;
    "gen.optimizer" => generation.optimizer;
    "gen.snapshots" => generation.snapshots;
    "eval.trials" => eval.trials;
    "eval.seeds" => eval.seeds;
    "topk" => eval.topk;
    "eval.pool" => eval.pool;
    "eval.images" => eval.images;
}

fn require(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

fn positive(key: &str, v: usize) -> Result<()> {
    require(v > 0, || format!("{key} must be positive, got {v}"))
}

fn positive_f(key: &str, v: f32) -> Result<()> {
    require(v > 0.0 && v.is_finite(), || format!("{key} must be > 0, got {v}"))
}

impl Config {
    /// Defaults overridden by the lines of `text`.
    pub fn from_text(text: &str) -> Result<Config> {
        let mut c = Config::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        Config::from_text(&std::fs::read_to_string(path)?)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            writeln!(s, "{key} = {}", self.get(key).expect("listed key")).expect("write to string");
        }
        s
    }

    /// Corpus settings with the master seed and image shape filled in.
    pub fn corpus_config(&self) -> SynthCorpusConfig {
        SynthCorpusConfig {
            seed: self.seed,
            image_size: self.image.image_size,
            channels: self.image.channels,
            ..self.corpus.clone()
        }
    }

    pub fn codec_config(&self) -> CodecConfig {
        CodecConfig { channels: self.image.channels, ..self.codec.clone() }
    }

    /// Checks every field; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        require(c.class_count >= 2, || format!("corpus.classes must be ≥ 2, got {}", c.class_count))?;
        require(c.per_class >= 2, || format!("corpus.per_class must be ≥ 2, got {}", c.per_class))?;
        require(c.train_fraction > 0.0 && c.train_fraction < 1.0, || {
            format!("corpus.split must lie in (0, 1), got {}", c.train_fraction)
        })?;
        let train = c.train_per_class();
        require(train > 0 && train < c.per_class, || {
            format!("corpus.split {} leaves an empty train or held-out split", c.train_fraction)
        })?;

        let im = &self.image;
        positive("image.size", im.image_size)?;
        positive("image.patch", im.patch_size)?;
        require(im.image_size % im.patch_size == 0, || {
            format!("image.patch {} does not divide image.size {}", im.patch_size, im.image_size)
        })?;
        require(im.channels == 1 || im.channels == 3, || format!("image.channels must be 1 or 3, got {}", im.channels))?;
        positive("image.width", im.width)?;
        positive("image.layers", im.sa_layers)?;
        positive("image.heads", im.heads)?;
        require(im.width % im.heads == 0, || {
            format!("image.heads {} does not divide image.width {}", im.heads, im.width)
        })?;
        positive("image.embed_dim", im.embed_dim)?;
        positive("image.epochs", self.image_pretrain.epochs)?;
        positive("image.batch", self.image_pretrain.batch_size)?;
        positive_f("image.lr", self.image_pretrain.lr)?;

        let a = &self.audio;
        require(a.n_fft >= 2, || format!("audio.n_fft must be ≥ 2, got {}", a.n_fft))?;
        positive("audio.hop", a.hop)?;
        positive("audio.conv_layers", a.conv_layers)?;
        positive("audio.conv_kernel", a.conv_kernel)?;
        positive("audio.conv_stride", a.conv_stride)?;
        positive("audio.hidden", a.hidden)?;
        positive("audio.layers", a.layers)?;
        positive("audio.heads", a.heads)?;
        require(a.hidden % a.heads == 0, || {
            format!("audio.heads {} does not divide audio.hidden {}", a.heads, a.hidden)
        })?;
        positive("audio.embed_dim", a.embed_dim)?;
        require(a.embed_dim == im.embed_dim, || {
            format!("audio.embed_dim {} differs from image.embed_dim {}", a.embed_dim, im.embed_dim)
        })?;
        positive("audio.classes", a.classes)?;
        positive("audio.head_dim", a.head_dim)?;
        positive_f("audio.tau", a.temperature)?;
        require((0.0..1.0).contains(&a.mask_prob), || {
            format!("audio.mask_prob must lie in [0, 1), got {}", a.mask_prob)
        })?;
        require(c.clip_len >= a.n_fft, || {
            format!("corpus.clip_len {} is shorter than audio.n_fft {}", c.clip_len, a.n_fft)
        })?;
        let frames = Spectrogram::new(a.n_fft, a.hop)?.frames(c.clip_len).unwrap_or(0);
        let mut t = frames;
        for _ in 0..a.conv_layers {
            t = if t >= a.conv_kernel { (t - a.conv_kernel) / a.conv_stride + 1 } else { 0 };
        }
        require(t > 0, || format!("corpus.clip_len {} leaves no frames after the audio convolutions", c.clip_len))?;

        let k = &self.contrastive;
        positive("train.batch", k.batch_size)?;
        require(k.queue_size >= k.batch_size, || {
            format!("queue_size {} must be at least train.batch {}", k.queue_size, k.batch_size)
        })?;
        require((0.0..=1.0).contains(&k.momentum), || format!("momentum must lie in [0, 1], got {}", k.momentum))?;
        positive_f("temperature", k.temperature)?;
        positive_f("train.lr", k.lr)?;
        require(k.masked_weight >= 0.0 && k.masked_weight.is_finite(), || {
            format!("train.masked_weight must be ≥ 0, got {}", k.masked_weight)
        })?;
        positive("train.steps", self.train_steps)?;

        let cd = &self.codec;
        positive("codec.codebook", cd.codebook_size)?;
        positive("codec.dim", cd.code_dim)?;
        positive("codec.grid", cd.grid_size)?;
        require(cd.grid_size << UPSAMPLE_STAGES == im.image_size, || {
            format!("codec.grid {} times 8 must equal image.size {}", cd.grid_size, im.image_size)
        })?;
        require(cd.width >= 1 << UPSAMPLE_STAGES, || format!("codec.width must be ≥ 8, got {}", cd.width))?;
        positive("codec.epochs", self.codec_pretrain.epochs)?;
        positive("codec.batch", self.codec_pretrain.batch_size)?;
        positive_f("codec.lr", self.codec_pretrain.lr)?;
        require(self.codec_pretrain.beta >= 0.0 && self.codec_pretrain.beta.is_finite(), || {
            format!("codec.beta must be ≥ 0, got {}", self.codec_pretrain.beta)
        })?;

        let g = &self.generation;
        positive("gen.steps", g.steps)?;
        positive_f("gen.step_size", g.step_size)?;
        positive("gen.quantize_every", g.quantize_every)?;
        positive("gen.record_every", g.record_every)?;

        let e = &self.eval;
        positive("eval.trials", e.trials)?;
        positive("eval.seeds", e.seeds)?;
        positive("topk", e.topk)?;
        let held_out = (c.per_class - train) * c.class_count;
        require(e.topk <= held_out, || format!("topk {} exceeds the {held_out} held-out samples", e.topk))?;
        positive("eval.pool", e.pool)?;
        Ok(())
    }
}
