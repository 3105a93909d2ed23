mod common;

use common::{rng, uniform};
use proptest::prelude::*;
use rand::Rng;
use wavbrivl::contrastive::{ContrastiveConfig, ContrastiveTrainer, CrossProjection};
use wavbrivl::data::{synth_pair, Image, SynthCorpusConfig};
use wavbrivl::encoders::{masked_prediction_logits, AudioTower, AudioTowerConfig, ImageTower, ImageTowerConfig};
use wavbrivl::numerics::{freeze, Module, Tensor};

fn random_image(seed: u64, size: usize, channels: usize) -> Image {
    let mut r = rng(seed);
    Image::new(size, channels, (0..size * size * channels).map(|_| r.gen_range(0.0..1.0)).collect()).unwrap()
}

fn small_image_config() -> ImageTowerConfig {
    ImageTowerConfig { image_size: 16, patch_size: 4, channels: 1, width: 16, sa_layers: 1, heads: 2, embed_dim: 8 }
}

fn norm(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}

#[test]
fn both_towers_emit_unit_vectors_of_equal_dim() {
    let image = ImageTower::new(ImageTowerConfig::default(), 1).unwrap();
    let audio = AudioTower::new(AudioTowerConfig::default(), 2).unwrap();
    let sample = synth_pair(&SynthCorpusConfig::default(), 3, 99).unwrap();
    let v = image.encode(&sample.image).unwrap();
    let a = audio.encode(&sample.waveform).unwrap().0;
    assert_eq!(v.dim(), a.dim());
    assert!((norm(v.as_slice()) - 1.0).abs() < 1e-5);
    assert!((norm(a.as_slice()) - 1.0).abs() < 1e-5);
}

/// With no attention layers, an identity patch embedding and no position
/// term, the pooled feature is the plain mean of the patch vectors.
#[test]
fn pooling_reduces_to_mean_patch() {
    let cfg = ImageTowerConfig { sa_layers: 0, ..small_image_config() };
    let tower = ImageTower::new(cfg.clone(), 5).unwrap();
    let w = cfg.width;
    tower.patch_embed.weight.update(|v| {
        for (i, x) in v.iter_mut().enumerate() {
            *x = if i / w == i % w { 1.0 } else { 0.0 };
        }
    });
    tower.patch_embed.bias.update(|v| v.fill(0.0));
    tower.pos_embed.update(|v| v.fill(0.0));
    let mut r = rng(8);
    let patches = Tensor::new(uniform(&mut r, cfg.patches() * cfg.patch_len()), &[cfg.patches(), cfg.patch_len()]).unwrap();
    let pooled = tower.pool(&patches).unwrap().to_vec();
    let data = patches.to_vec();
    for j in 0..w {
        let mean: f64 = (0..cfg.patches()).map(|p| data[p * w + j] as f64).sum::<f64>() / cfg.patches() as f64;
        assert!((pooled[j] as f64 - mean).abs() < 1e-6, "column {j}");
    }
}

#[test]
fn identical_patch_features_pool_to_that_feature() {
    let cfg = ImageTowerConfig { sa_layers: 0, ..small_image_config() };
    let tower = ImageTower::new(cfg.clone(), 6).unwrap();
    tower.pos_embed.update(|v| v.fill(0.0));
    let mut r = rng(4);
    let row = uniform(&mut r, cfg.patch_len());
    let patches = Tensor::new(row.repeat(cfg.patches()), &[cfg.patches(), cfg.patch_len()]).unwrap();
    let single = tower.patch_embed.forward(&Tensor::new(row, &[1, cfg.patch_len()]).unwrap()).unwrap().to_vec();
    assert_eq!(tower.pool(&patches).unwrap().to_vec(), single);
}

#[test]
fn permuting_patches_changes_the_embedding() {
    let cfg = small_image_config();
    let tower = ImageTower::new(cfg.clone(), 7).unwrap();
    let mut r = rng(3);
    let data = uniform(&mut r, cfg.patches() * cfg.patch_len());
    let patches = Tensor::new(data.clone(), &[cfg.patches(), cfg.patch_len()]).unwrap();
    let mut swapped = data.clone();
    let l = cfg.patch_len();
    for k in 0..l {
        swapped.swap(k, l + k);
    }
    let permuted = Tensor::new(swapped, &[cfg.patches(), cfg.patch_len()]).unwrap();
    assert_ne!(tower.pool(&patches).unwrap().to_vec(), tower.pool(&permuted).unwrap().to_vec());
}

#[test]
fn frozen_image_tower_is_a_pure_function() {
    let tower = ImageTower::new(ImageTowerConfig::default(), 9).unwrap();
    freeze(&tower);
    let im = random_image(1, 64, 3);
    let a = tower.embed(&im).unwrap().to_vec();
    let b = tower.embed(&im).unwrap().to_vec();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

fn audio_with_logits(logits: Vec<f32>) -> (AudioTower, Vec<f32>) {
    let tower = AudioTower::new(AudioTowerConfig::default(), 21).unwrap();
    let n = tower.layer_logits.numel();
    assert_eq!(n, logits.len());
    tower.layer_logits.update(|v| v.copy_from_slice(&logits));
    let wave = synth_pair(&SynthCorpusConfig::default(), 1, 5).unwrap().waveform;
    (tower, wave)
}

#[test]
fn one_hot_layer_weight_matches_single_layer_path() {
    let layers = AudioTowerConfig::default().layers + 1;
    for j in 0..layers {
        let mut logits = vec![0.0; layers];
        logits[j] = 20.0;
        let (tower, wave) = audio_with_logits(logits);
        let out = tower.forward(&wave).unwrap();
        let summary = out.layer_outputs[j].mean_rows().unwrap();
        let alone = tower.projection.forward(&summary).unwrap().l2_normalize_rows(1e-8).unwrap().to_vec();
        for (a, b) in out.embedding.to_vec().iter().zip(&alone) {
            assert!((a - b).abs() < 1e-4, "layer {j}: {a} vs {b}");
        }
    }
}

#[test]
fn uniform_layer_logits_average_the_summaries() {
    let layers = AudioTowerConfig::default().layers + 1;
    let (tower, wave) = audio_with_logits(vec![0.3; layers]);
    let out = tower.forward(&wave).unwrap();
    let summaries = out.summaries.to_vec();
    let width = summaries.len() / layers;
    let pooled = out.pooled.to_vec();
    for c in 0..width {
        let mean: f64 = (0..layers).map(|l| summaries[l * width + c] as f64).sum::<f64>() / layers as f64;
        assert!((pooled[c] as f64 - mean).abs() < 1e-6);
    }
}

/// Direct evaluation of one masked-prediction row: cosines over the classes,
/// scaled by `1/τ`, then a softmax, all in f64.
fn head_oracle(h: &[f32], proj: &[f32], embeds: &[f32], classes: usize, tau: f64) -> Vec<f64> {
    let k = h.len();
    let out_dim = proj.len() / k;
    let wp: Vec<f64> = (0..out_dim).map(|o| (0..k).map(|i| proj[o * k + i] as f64 * h[i] as f64).sum()).collect();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
    let logits: Vec<f64> = (0..classes)
        .map(|c| {
            let e: Vec<f64> = embeds[c * out_dim..(c + 1) * out_dim].iter().map(|&x| x as f64).collect();
            wp.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / (n(&wp) * n(&e)) / tau
        })
        .collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    logits.iter().map(|l| (l - m).exp() / z).collect()
}

#[test]
fn masked_head_matches_scalar_oracle() {
    let (t, k, out_dim, classes) = (5, 6, 4, 7);
    let mut r = rng(77);
    let h = uniform(&mut r, t * k);
    let proj = uniform(&mut r, out_dim * k);
    let embeds = uniform(&mut r, classes * out_dim);
    let logits = masked_prediction_logits(
        &Tensor::new(h.clone(), &[t, k]).unwrap(),
        &Tensor::new(embeds.clone(), &[classes, out_dim]).unwrap(),
        &Tensor::new(proj.clone(), &[out_dim, k]).unwrap(),
        0.1,
    )
    .unwrap();
    let p = logits.softmax(1).unwrap().to_vec();
    for row in 0..t {
        let expect = head_oracle(&h[row * k..(row + 1) * k], &proj, &embeds, classes, 0.1);
        let got = &p[row * classes..(row + 1) * classes];
        assert!((got.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        for (g, e) in got.iter().zip(&expect) {
            assert!((*g as f64 - e).abs() < 1e-5, "{g} vs {e}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_head_is_scale_invariant_in_class_embeddings(seed in any::<u64>(), class in 0usize..5, scale in 0.01f32..100.0) {
        let (t, k, classes) = (3, 4, 5);
        let mut r = rng(seed);
        let h = Tensor::new(uniform(&mut r, t * k), &[t, k]).unwrap();
        let proj = Tensor::new(uniform(&mut r, k * k), &[k, k]).unwrap();
        let e = uniform(&mut r, classes * k);
        let mut scaled = e.clone();
        for v in &mut scaled[class * k..(class + 1) * k] {
            *v *= scale;
        }
        let p = |e: Vec<f32>| masked_prediction_logits(&h, &Tensor::new(e, &[classes, k]).unwrap(), &proj, 0.1)
            .unwrap().softmax(1).unwrap().to_vec();
        for (a, b) in p(e).iter().zip(p(scaled)) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}

fn trainer_and_batch() -> (ContrastiveTrainer, ImageTower, Vec<wavbrivl::data::PairedSample>) {
    let cfg = SynthCorpusConfig::default();
    let batch: Vec<_> = (0..4).map(|i| synth_pair(&cfg, i, 40 + i as u64).unwrap()).collect();
    let audio = AudioTower::new(AudioTowerConfig::default(), 3).unwrap();
    let trainer = ContrastiveTrainer::new(
        ContrastiveConfig { batch_size: 4, queue_size: 8, ..Default::default() },
        audio,
        CrossProjection::new(AudioTowerConfig::default().embed_dim, 4),
        5,
    )
    .unwrap();
    (trainer, ImageTower::new(ImageTowerConfig::default(), 6).unwrap(), batch)
}

#[test]
fn frozen_tower_gets_no_gradient_and_no_update() {
    let (mut trainer, image, batch) = trainer_and_batch();
    freeze(&image);
    let before: Vec<Vec<f32>> = image.tensors().iter().map(|t| t.to_vec()).collect();
    let refs: Vec<_> = batch.iter().collect();
    for _ in 0..3 {
        trainer.train_step(&image, &refs).unwrap();
    }
    for (t, b) in image.tensors().iter().zip(&before) {
        assert_eq!(&t.to_vec(), b);
        assert!(t.grad().is_none());
    }
}

#[test]
fn freezing_mid_training_preserves_values() {
    let (mut trainer, image, batch) = trainer_and_batch();
    freeze(&image);
    let refs: Vec<_> = batch.iter().collect();
    trainer.train_step(&image, &refs).unwrap();
    freeze(&trainer.audio);
    let snapshot: Vec<Vec<f32>> = trainer.audio.tensors().iter().map(|t| t.to_vec()).collect();
    for _ in 0..5 {
        // Only the projection heads still train.
        trainer.train_step(&image, &refs).unwrap();
    }
    for (t, s) in trainer.audio.tensors().iter().zip(&snapshot) {
        assert_eq!(&t.to_vec(), s);
    }
}
