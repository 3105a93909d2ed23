//! The pipeline stages as the command-line driver runs them. Each takes its
//! settings as `key = value` text (config file lines, then flag overrides)
//! and writes its log lines to `log`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::codec::{codec_pretrain, CodecPretrainReport};
use crate::config::{Config, KEYS};
use crate::contrastive::StepReport;
use crate::data::{load_wav, save_ppm, synth_pair, Corpus, Image};
use crate::error::{Error, Result};
use crate::eval::{evaluate as run_evaluation, EvalReport};
use crate::generator::GenerationTrace;
use crate::model::{seeds, Model};
use crate::numerics::is_frozen;
use crate::pipeline::{pretrain_image_tower, train_audio as run_training, ImagePretrainReport};

/// Keys a checkpoint's stored configuration lets later commands change.
fn is_runtime_key(key: &str) -> bool {
    key.starts_with("gen.") || key.starts_with("eval.") || key == "topk"
}

/// Keys fixing the shape of the frozen image tower and codec.
fn is_frozen_architecture_key(key: &str) -> bool {
    const TRAINING: [&str; 3] = ["epochs", "batch", "lr"];
    let Some((section, field)) = key.split_once('.') else { return false };
    (section == "image" || section == "codec") && !TRAINING.contains(&field) && field != "beta"
}

fn is_audio_state_key(key: &str) -> bool {
    key.starts_with("audio.") || key == "queue_size"
}

/// The checkpoint's configuration with `settings` applied, refusing changes
/// to any key outside `changeable`.
fn merged_config(stored: &Config, settings: &str, changeable: impl Fn(&str) -> bool) -> Result<Config> {
    let mut merged = stored.clone();
    merged.apply_text(settings)?;
    for key in KEYS {
        if !changeable(key) && merged.get(key) != stored.get(key) {
            return Err(Error::config(format!(
                "{key} = {} conflicts with the checkpoint's {key} = {}",
                merged.get(key).unwrap_or_default(),
                stored.get(key).unwrap_or_default()
            )));
        }
    }
    merged.validate()?;
    Ok(merged)
}

fn require_parent_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", dir.display()),
        ))),
        _ => Ok(()),
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    Model::from_checkpoint(&Checkpoint::load(path)?)
}

#[derive(Clone, Debug)]
pub struct PretrainSummary {
    pub image: ImagePretrainReport,
    pub codec: CodecPretrainReport,
}

/// Trains and freezes the image tower and the codec, then writes the
/// checkpoint to `out`.
pub fn pretrain_image(settings: &str, out: &Path, log: &mut dyn Write) -> Result<PretrainSummary> {
    let config = Config::from_text(settings)?;
    config.validate()?;
    require_parent_dir(out)?;
    let corpus = Corpus::generate(&config.corpus_config())?;
    let model = Model::new(config)?;
    let cfg = &model.config;
    let image = pretrain_image_tower(&model.image, &corpus, &cfg.image_pretrain, cfg.seed ^ seeds::IMAGE_TRAIN)?;
    writeln!(log, "image.final_loss = {:.6}", image.final_loss)?;
    writeln!(log, "image.train_accuracy = {:.6}", image.train_accuracy)?;
    writeln!(log, "image.held_out_accuracy = {:.6}", image.held_out_accuracy)?;
    let images: Vec<Image> = corpus.train.iter().map(|s| s.image.clone()).collect();
    let codec = codec_pretrain(&model.codec, &images, &cfg.codec_pretrain, cfg.seed ^ seeds::CODEC_TRAIN)?;
    writeln!(log, "codec.reconstruction_mse = {:.6}", codec.reconstruction_mse)?;
    writeln!(log, "codec.codes_used = {}", codec.codes_used)?;
    model.to_checkpoint().save(out)?;
    Ok(PretrainSummary { image, codec })
}

/// Runs `train.steps` contrastive steps on top of a pretrained checkpoint.
/// A checkpoint that already holds an audio side is resumed.
pub fn train_audio(settings: &str, image_ckpt: &Path, out: &Path, log: &mut dyn Write) -> Result<Vec<StepReport>> {
    require_parent_dir(out)?;
    let mut model = load_model(image_ckpt)?;
    if !is_frozen(&model.image) || !is_frozen(&model.codec) {
        return Err(Error::State("the image checkpoint is not frozen; run pretrain-image first".into()));
    }
    let config = Config::from_text(settings)?;
    config.validate()?;
    let resuming = model.trainer.is_some();
    for key in KEYS {
        let fixed = is_frozen_architecture_key(key) || (resuming && is_audio_state_key(key));
        if fixed && config.get(key) != model.config.get(key) {
            return Err(Error::config(format!(
                "{key} = {} is incompatible with the checkpoint's {key} = {}",
                config.get(key).unwrap_or_default(),
                model.config.get(key).unwrap_or_default()
            )));
        }
    }
    model.config = config;
    let corpus = Corpus::generate(&model.config.corpus_config())?;
    if let Some(t) = model.trainer.as_mut() {
        t.config = model.config.contrastive.clone();
    } else {
        model.start_audio()?;
    }
    let steps = model.config.train_steps;
    let seed = model.config.seed;
    let trainer = model.trainer.as_mut().expect("audio side started");
    let reports = run_training(trainer, &model.image, &corpus, steps, seed, log)?;
    model.to_checkpoint().save(out)?;
    Ok(reports)
}

/// Where the generation target comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum AudioSource {
    Wav(PathBuf),
    /// A fresh synthetic clip of the class, drawn with `seed`.
    Class { class_id: usize, seed: u64 },
}

pub const GENERATED_IMAGE: &str = "generated.ppm";
pub const TRACE_FILE: &str = "trace.csv";

/// Generates an image for the audio and writes `generated.ppm` and
/// `trace.csv` into `out_dir`.
pub fn generate(
    ckpt: &Path,
    source: &AudioSource,
    settings: &str,
    out_dir: &Path,
) -> Result<(Image, GenerationTrace)> {
    let mut model = load_model(ckpt)?;
    model.config = merged_config(&model.config, settings, is_runtime_key)?;
    if !out_dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", out_dir.display()),
        )));
    }
    let waveform = match source {
        AudioSource::Wav(path) => load_wav(path)?,
        AudioSource::Class { class_id, seed } => {
            let corpus = model.config.corpus_config();
            if *class_id >= corpus.class_count {
                return Err(Error::Input(format!("class {class_id} outside 0..{}", corpus.class_count)));
            }
            synth_pair(&corpus, *class_id, *seed)?.waveform
        }
    };
    let (image, trace) = model.generate(&waveform, &model.config.generation)?;
    save_ppm(&image, out_dir.join(GENERATED_IMAGE))?;
    trace.write(out_dir.join(TRACE_FILE))?;
    Ok((image, trace))
}

/// Evaluates on the held-out split over `eval.seeds` consecutive seeds
/// starting at `base_seed` (the checkpoint's master seed by default).
pub fn evaluate(ckpt: &Path, settings: &str, base_seed: Option<u64>) -> Result<EvalReport> {
    let mut model = load_model(ckpt)?;
    model.config = merged_config(&model.config, settings, is_runtime_key)?;
    model.trainer()?;
    let corpus = Corpus::generate(&model.config.corpus_config())?;
    let base = base_seed.unwrap_or(model.config.seed);
    let seeds: Vec<u64> = (0..model.config.eval.seeds as u64).map(|i| base + i).collect();
    run_evaluation(&model, &corpus, &model.config.eval, &model.config.generation, &seeds)
}

/// Human-readable summary of a checkpoint file.
pub fn inspect(ckpt: &Path) -> Result<String> {
    let c = Checkpoint::load(ckpt)?;
    let mut s = String::new();
    writeln!(s, "format version {}", crate::checkpoint::FORMAT_VERSION).unwrap();
    writeln!(s, "{} tensors, {} values", c.tensors.len(), c.tensors.iter().map(|t| t.data.len()).sum::<usize>()).unwrap();
    for t in &c.tensors {
        writeln!(s, "  {:<48} {:?}", t.name, t.shape).unwrap();
    }
    s.push_str("config:\n");
    for line in c.snapshot.lines() {
        writeln!(s, "  {line}").unwrap();
    }
    Ok(s)
}
