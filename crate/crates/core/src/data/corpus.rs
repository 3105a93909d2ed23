//! Procedural paired corpus.
//!
//! Each class owns a three-tone chord and a visual motif (stripes, checker or
//! blobs) with a class-specific orientation and hue. A per-sample variant
//! scalar, drawn from the sample seed, drives both the balance of the chord
//! tones and the image contrast, so the two modalities also share
//! within-class structure.

use std::f32::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Image;
use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
const FFT_BIN_HZ: f32 = 40.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub waveform: Vec<f32>,
    pub image: Image,
    pub class_id: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpusConfig {
    pub class_count: usize,
    pub per_class: usize,
    /// Fraction of each class kept for training.
    pub train_fraction: f32,
    pub seed: u64,
    pub image_size: usize,
    pub channels: usize,
    /// Samples per clip.
    pub clip_len: usize,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            class_count: 8,
            per_class: 64,
            train_fraction: 0.8,
            seed: 7,
            image_size: 64,
            channels: 3,
            clip_len: SAMPLE_RATE as usize,
        }
    }
}

impl SynthCorpusConfig {
    pub fn train_per_class(&self) -> usize {
        (self.per_class as f32 * self.train_fraction).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config(format!("corpus.classes must be ≥ 2, got {}", self.class_count)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::config(format!(
                "corpus.split must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        let train = self.train_per_class();
        if train == 0 || train >= self.per_class {
            return Err(Error::config(format!(
                "corpus.per_class {} with corpus.split {} leaves an empty train or held-out split",
                self.per_class, self.train_fraction
            )));
        }
        if self.image_size == 0 || !(self.channels == 1 || self.channels == 3) {
            return Err(Error::config("corpus images need a positive size and 1 or 3 channels"));
        }
        if self.clip_len < 400 {
            return Err(Error::config(format!("corpus.clip_len {} is too short", self.clip_len)));
        }
        Ok(())
    }
}

/// Frequency bins (40 Hz spacing at 16 kHz / 400-point FFT) of a class's chord.
pub fn chord_bins(class_id: usize) -> [usize; 3] {
    [0, 1, 2].map(|j| 5 + (class_id * 7 + j * 61) % 190)
}

/// Deterministic seed of sample `index` of `class_id` under `master`.
pub fn sample_seed(master: u64, class_id: usize, index: usize) -> u64 {
    splitmix(master ^ splitmix((class_id as u64) << 32 | index as u64))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One paired sample of `class_id`, fully determined by `(class_id, seed)`.
pub fn synth_pair(config: &SynthCorpusConfig, class_id: usize, seed: u64) -> Result<PairedSample> {
    if class_id >= config.class_count {
        return Err(Error::Input(format!(
            "class {class_id} out of range for {} classes",
            config.class_count
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variant: f32 = rng.gen();
    let waveform = synth_audio(config, class_id, variant, &mut rng);
    let image = synth_image(config, class_id, variant, Some(&mut rng));
    Ok(PairedSample { waveform, image, class_id, seed })
}

fn synth_audio(config: &SynthCorpusConfig, class_id: usize, variant: f32, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let bins = chord_bins(class_id);
    let amps = [0.4 + 0.6 * variant, 0.7 + rng.gen_range(-0.1..0.1), 1.0 - 0.6 * variant];
    let tones: Vec<(f32, f32, f32)> = bins
        .iter()
        .zip(amps)
        .map(|(&b, a)| {
            let detune = 1.0 + rng.gen_range(-0.005..0.005);
            let phase = rng.gen_range(0.0..2.0 * PI);
            (b as f32 * FFT_BIN_HZ * detune, a, phase)
        })
        .collect();
    let noise = Normal::new(0.0f32, 0.05).expect("valid deviation");
    let sr = SAMPLE_RATE as f32;
    let mut wave: Vec<f32> = (0..config.clip_len)
        .map(|n| {
            let t = n as f32 / sr;
            let tone: f32 = tones.iter().map(|&(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum();
            tone + noise.sample(rng)
        })
        .collect();
    let peak = wave.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-6);
    wave.iter_mut().for_each(|v| *v *= 0.9 / peak);
    wave
}

fn hue_rgb(hue: f32) -> [f32; 3] {
    // HSV with s = 0.8, v = 1.
    let h = (hue.rem_euclid(1.0)) * 6.0;
    let (s, v) = (0.8f32, 1.0f32);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// The class motif. `rng = None` renders the jitter-free prototype at
/// mid contrast.
fn synth_image(config: &SynthCorpusConfig, class_id: usize, variant: f32, rng: Option<&mut ChaCha8Rng>) -> Image {
    let size = config.image_size;
    let classes = config.class_count;
    let (angle_jitter, phase_a, phase_b, mut noise_rng) = match rng {
        Some(r) => {
            let a = r.gen_range(-4.0f32..4.0).to_radians();
            let pa = r.gen_range(-0.25f32..0.25);
            let pb = r.gen_range(-0.25f32..0.25);
            let fork = ChaCha8Rng::seed_from_u64(r.gen());
            (a, pa, pb, Some(fork))
        }
        None => (0.0, 0.0, 0.0, None),
    };
    let theta = class_id as f32 * PI / classes as f32 + angle_jitter;
    let color = hue_rgb(class_id as f32 / classes as f32);
    let contrast = 0.5 + 0.4 * variant;
    let freq = 4.0f32;
    let (ct, st) = (theta.cos(), theta.sin());
    let noise = Normal::new(0.0f32, 0.02).expect("valid deviation");
    let mut pixels = Vec::with_capacity(size * size * config.channels);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f32 / size as f32, y as f32 / size as f32);
            let u = fx * ct + fy * st;
            let w = -fx * st + fy * ct;
            let p = match class_id % 3 {
                0 => 0.5 + 0.5 * (2.0 * PI * (freq * u + phase_a)).sin(),
                1 => {
                    let a = (2.0 * PI * (freq * u + phase_a)).sin();
                    let b = (2.0 * PI * (freq * w + phase_b)).sin();
                    if a * b >= 0.0 { 1.0 } else { 0.0 }
                }
                _ => {
                    let du = (freq * u + phase_a).rem_euclid(1.0) - 0.5;
                    let dw = (freq * w + phase_b).rem_euclid(1.0) - 0.5;
                    (-(du * du + dw * dw) / (2.0 * 0.15 * 0.15)).exp()
                }
            };
            for ch in 0..config.channels {
                let tint = if config.channels == 3 { color[ch] } else { 1.0 };
                let jitter = noise_rng.as_mut().map(|r| noise.sample(r)).unwrap_or(0.0);
                pixels.push((0.1 + contrast * p * tint + jitter).clamp(0.0, 1.0));
            }
        }
    }
    Image { size, channels: config.channels, pixels }
}

/// Jitter-free reference image of a class.
pub fn prototype_image(config: &SynthCorpusConfig, class_id: usize) -> Result<Image> {
    if class_id >= config.class_count {
        return Err(Error::Input(format!("class {class_id} out of range")));
    }
    Ok(synth_image(config, class_id, 0.5, None))
}

/// The full corpus, split per class into train and held-out parts.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: SynthCorpusConfig,
    pub train: Vec<PairedSample>,
    pub held_out: Vec<PairedSample>,
}

impl Corpus {
    pub fn generate(config: &SynthCorpusConfig) -> Result<Corpus> {
        config.validate()?;
        let mut order_rng = ChaCha8Rng::seed_from_u64(splitmix(config.seed));
        let keep = config.train_per_class();
        let mut train = Vec::new();
        let mut held_out = Vec::new();
        for class_id in 0..config.class_count {
            let mut idx: Vec<usize> = (0..config.per_class).collect();
            idx.shuffle(&mut order_rng);
            for (pos, &i) in idx.iter().enumerate() {
                let sample = synth_pair(config, class_id, sample_seed(config.seed, class_id, i))?;
                if pos < keep {
                    train.push(sample);
                } else {
                    held_out.push(sample);
                }
            }
        }
        Ok(Corpus { config: config.clone(), train, held_out })
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }
}
