//! Cross-modal retrieval recall and the automated two-alternative forced
//! choice, repeated over seeds to report min–max ranges.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Corpus;
use crate::encoders::Embedding;
use crate::error::{Error, Result};
use crate::generator::GenerationConfig;
use crate::model::Model;

/// Which images the forced-choice trials show.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrialImages {
    /// Images generated from held-out clips.
    Generated,
    /// Held-out corpus images.
    Corpus,
}

impl fmt::Display for TrialImages {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialImages::Generated => "generated",
            TrialImages::Corpus => "corpus",
        })
    }
}

impl FromStr for TrialImages {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generated" => Ok(TrialImages::Generated),
            "corpus" => Ok(TrialImages::Corpus),
            _ => Err(Error::config(format!("eval.images must be generated or corpus, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub trials: usize,
    /// Number of repetitions; seeds are consecutive from the base seed.
    pub seeds: usize,
    /// Extra `k` reported besides 1 and 5.
    pub topk: usize,
    /// Generated images per class in the trial pool.
    pub pool: usize,
    pub images: TrialImages,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { trials: 200, seeds: 3, topk: 1, pool: 2, images: TrialImages::Generated }
    }
}

/// Fraction of queries with a same-label gallery item among the `k` most
/// cosine-similar ones. Ties rank the lower gallery index first. With unique
/// labels this is instance-level recall.
pub fn recall_at_k(
    queries: &[Embedding],
    gallery: &[Embedding],
    query_labels: &[usize],
    gallery_labels: &[usize],
    k: usize,
) -> Result<f32> {
    if queries.len() != query_labels.len() || gallery.len() != gallery_labels.len() {
        return Err(Error::contract("every embedding needs exactly one label"));
    }
    if queries.is_empty() {
        return Err(Error::contract("recall needs at least one query"));
    }
    if k == 0 || k > gallery.len() {
        return Err(Error::contract(format!("k = {k} outside 1..={}", gallery.len())));
    }
    let mut hits = 0usize;
    for (q, &label) in queries.iter().zip(query_labels) {
        let mut order: Vec<(f32, usize)> = gallery.iter().enumerate().map(|(i, g)| (q.cosine(g), i)).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        hits += usize::from(order[..k].iter().any(|&(_, i)| gallery_labels[i] == label));
    }
    Ok(hits as f32 / queries.len() as f32)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    pub chosen_slot: usize,
    pub choice: Choice,
    /// Similarity of the query to the image in slot 0 and slot 1.
    pub similarities: [f32; 2],
}

/// Shows `positive` in `positive_slot` and `negative` in the other slot, and
/// picks the slot more similar to `query`. A tie picks slot 0.
pub fn two_afc_trial(query: &Embedding, positive: &Embedding, negative: &Embedding, positive_slot: usize) -> TrialOutcome {
    let slots = if positive_slot == 0 { [positive, negative] } else { [negative, positive] };
    let similarities = [query.cosine(slots[0]), query.cosine(slots[1])];
    let chosen_slot = usize::from(similarities[1] > similarities[0]);
    let choice = if chosen_slot == positive_slot.min(1) { Choice::Positive } else { Choice::Negative };
    TrialOutcome { chosen_slot, choice, similarities }
}

/// One image available to the trials.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolImage {
    pub embedding: Embedding,
    pub class_id: usize,
    /// Held-out clip the image is paired with or was generated from.
    pub source: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub trial: usize,
    /// Held-out index of the audio clip.
    pub audio: usize,
    pub audio_class: usize,
    pub other_class: usize,
    pub positive_slot: usize,
    pub outcome: TrialOutcome,
}

impl TrialRecord {
    pub fn correct(&self) -> bool {
        self.outcome.choice == Choice::Positive
    }
}

/// Balanced trials: the positive image alternates between slots.
pub fn run_trials(
    queries: &[Embedding],
    labels: &[usize],
    pool: &[PoolImage],
    trials: usize,
    seed: u64,
) -> Result<Vec<TrialRecord>> {
    if queries.len() != labels.len() {
        return Err(Error::contract("every query needs exactly one label"));
    }
    let mut classes: Vec<usize> = pool.iter().map(|p| p.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let audible: Vec<usize> = classes.iter().copied().filter(|c| labels.contains(c)).collect();
    if classes.len() < 2 || audible.is_empty() {
        return Err(Error::contract("trials need pool images of two classes and audio of one of them"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(trials);
    for trial in 0..trials {
        let a = *audible.choose(&mut rng).expect("non-empty");
        let others: Vec<usize> = classes.iter().copied().filter(|&c| c != a).collect();
        let b = *others.choose(&mut rng).expect("two classes");
        let clips: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == a).collect();
        let audio = *clips.choose(&mut rng).expect("audible class");
        let same: Vec<&PoolImage> = pool.iter().filter(|p| p.class_id == a).collect();
        let unrelated: Vec<&PoolImage> = same.iter().copied().filter(|p| p.source != Some(audio)).collect();
        let candidates = if unrelated.is_empty() { same } else { unrelated };
        let positive = candidates[rng.gen_range(0..candidates.len())];
        let negatives: Vec<&PoolImage> = pool.iter().filter(|p| p.class_id == b).collect();
        let negative = negatives[rng.gen_range(0..negatives.len())];
        let positive_slot = trial % 2;
        let outcome = two_afc_trial(&queries[audio], &positive.embedding, &negative.embedding, positive_slot);
        out.push(TrialRecord { seed, trial, audio, audio_class: a, other_class: b, positive_slot, outcome });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    AudioToImage,
    ImageToAudio,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::AudioToImage => "audio_to_image",
            Direction::ImageToAudio => "image_to_audio",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRun {
    pub seed: u64,
    pub recall: Vec<(Direction, usize, f32)>,
    pub afc_accuracy: f32,
    pub trials: Vec<TrialRecord>,
}

impl EvalRun {
    pub fn recall(&self, direction: Direction, k: usize) -> Option<f32> {
        self.recall.iter().find(|r| r.0 == direction && r.1 == k).map(|r| r.2)
    }

    /// `(name, value)` for every scalar metric of the run.
    pub fn metrics(&self) -> Vec<(String, f32)> {
        let mut m = vec![("afc.accuracy".to_string(), self.afc_accuracy)];
        for &(d, k, v) in &self.recall {
            m.push((format!("recall.{}@{k}", d.name()), v));
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub runs: Vec<EvalRun>,
    pub trial_count: usize,
}

impl EvalReport {
    /// Min and max of a metric over the runs.
    pub fn range(&self, metric: &str) -> Option<(f32, f32)> {
        let values: Vec<f32> = self
            .runs
            .iter()
            .filter_map(|r| r.metrics().into_iter().find(|m| m.0 == metric).map(|m| m.1))
            .collect();
        if values.is_empty() {
            return None;
        }
        Some((values.iter().copied().fold(f32::INFINITY, f32::min), values.iter().copied().fold(f32::NEG_INFINITY, f32::max)))
    }

    /// `key = value` lines: ranges first, then each run.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.runs.iter().map(|r| r.seed.to_string()).collect();
        writeln!(s, "trials = {}", self.trial_count).unwrap();
        writeln!(s, "seeds = {}", seeds.join(",")).unwrap();
        if let Some(first) = self.runs.first() {
            for (name, _) in first.metrics() {
                let (lo, hi) = self.range(&name).expect("metric present");
                writeln!(s, "{name}.min = {lo:.6}").unwrap();
                writeln!(s, "{name}.max = {hi:.6}").unwrap();
            }
        }
        for (i, r) in self.runs.iter().enumerate() {
            writeln!(s, "run.{i}.seed = {}", r.seed).unwrap();
            for (name, v) in r.metrics() {
                writeln!(s, "run.{i}.{name} = {v:.6}").unwrap();
            }
        }
        s
    }

    /// One row per trial.
    pub fn trials_csv(&self) -> String {
        let mut s = String::from("seed,trial,audio,audio_class,other_class,positive_slot,chosen_slot,correct,sim_slot0,sim_slot1\n");
        for r in self.runs.iter().flat_map(|r| &r.trials) {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{},{:.6},{:.6}",
                r.seed,
                r.trial,
                r.audio,
                r.audio_class,
                r.other_class,
                r.positive_slot,
                r.outcome.chosen_slot,
                u8::from(r.correct()),
                r.outcome.similarities[0],
                r.outcome.similarities[1]
            )
            .unwrap();
        }
        s
    }

    /// Human-readable table: one row per seed, then the range.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let ks: Vec<usize> = self
            .runs
            .first()
            .map(|r| r.recall.iter().filter(|x| x.0 == Direction::AudioToImage).map(|x| x.1).collect())
            .unwrap_or_default();
        write!(s, "{:<8}{:>10}{:>10}", "seed", "positive", "negative").unwrap();
        for k in &ks {
            write!(s, "{:>10}", format!("a2i@{k}")).unwrap();
        }
        s.push('\n');
        for r in &self.runs {
            write!(s, "{:<8}{:>10.3}{:>10.3}", r.seed, r.afc_accuracy, 1.0 - r.afc_accuracy).unwrap();
            for &k in &ks {
                write!(s, "{:>10.3}", r.recall(Direction::AudioToImage, k).unwrap_or(f32::NAN)).unwrap();
            }
            s.push('\n');
        }
        if let Some((lo, hi)) = self.range("afc.accuracy") {
            writeln!(s, "range   positive {:.1}-{:.1}%  negative {:.1}-{:.1}%", 100.0 * lo, 100.0 * hi, 100.0 * (1.0 - hi), 100.0 * (1.0 - lo)).unwrap();
        }
        s
    }
}

/// Held-out embeddings shared by every evaluation run.
struct HeldOut {
    labels: Vec<usize>,
    audio: Vec<Embedding>,
    audio_queries: Vec<Embedding>,
    images: Vec<Embedding>,
    image_queries: Vec<Embedding>,
}

/// Recall in both directions on the held-out split plus forced-choice
/// accuracy, once per seed.
pub fn evaluate(
    model: &Model,
    corpus: &Corpus,
    config: &EvalConfig,
    generation: &GenerationConfig,
    seeds: &[u64],
) -> Result<EvalReport> {
    if corpus.held_out.is_empty() {
        return Err(Error::Input("evaluation needs a non-empty held-out split".into()));
    }
    let samples = &corpus.held_out;
    let h = HeldOut {
        labels: samples.iter().map(|s| s.class_id).collect(),
        audio: samples.iter().map(|s| model.audio_embedding(&s.waveform)).collect::<Result<_>>()?,
        audio_queries: samples.iter().map(|s| model.audio_query(&s.waveform)).collect::<Result<_>>()?,
        images: samples.iter().map(|s| model.image_embedding(&s.image)).collect::<Result<_>>()?,
        image_queries: samples.iter().map(|s| model.image_query(&s.image)).collect::<Result<_>>()?,
    };
    let mut ks = vec![1, 5, config.topk];
    ks.retain(|&k| k <= samples.len());
    ks.sort_unstable();
    ks.dedup();
    let mut recall = Vec::new();
    for &k in &ks {
        recall.push((Direction::AudioToImage, k, recall_at_k(&h.audio_queries, &h.images, &h.labels, &h.labels, k)?));
    }
    for &k in &ks {
        recall.push((Direction::ImageToAudio, k, recall_at_k(&h.image_queries, &h.audio, &h.labels, &h.labels, k)?));
    }

    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let pool = match config.images {
            TrialImages::Corpus => (0..samples.len())
                .map(|i| PoolImage { embedding: h.images[i].clone(), class_id: h.labels[i], source: Some(i) })
                .collect(),
            TrialImages::Generated => generated_pool(model, corpus, config.pool, generation, seed)?,
        };
        let trials = run_trials(&h.audio_queries, &h.labels, &pool, config.trials, seed)?;
        let correct = trials.iter().filter(|t| t.correct()).count();
        runs.push(EvalRun {
            seed,
            recall: recall.clone(),
            afc_accuracy: correct as f32 / trials.len().max(1) as f32,
            trials,
        });
    }
    Ok(EvalReport { runs, trial_count: config.trials })
}

/// `per_class` images per class, each generated from a randomly chosen
/// held-out clip of that class.
fn generated_pool(
    model: &Model,
    corpus: &Corpus,
    per_class: usize,
    generation: &GenerationConfig,
    seed: u64,
) -> Result<Vec<PoolImage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9001);
    let mut pool = Vec::new();
    for class_id in 0..corpus.class_count() {
        let clips: Vec<usize> = (0..corpus.held_out.len()).filter(|&i| corpus.held_out[i].class_id == class_id).collect();
        for &i in clips.choose_multiple(&mut rng, per_class) {
            let cfg = GenerationConfig { seed: rng.gen(), ..generation.clone() };
            let (image, _) = model.generate(&corpus.held_out[i].waveform, &cfg)?;
            pool.push(PoolImage { embedding: model.image_embedding(&image)?, class_id, source: Some(i) });
        }
    }
    Ok(pool)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec())
    }

    #[test]
    fn identical_gallery_gives_full_recall() {
        let q = vec![e(&[1.0, 0.0]), e(&[0.0, 1.0]), e(&[1.0, 1.0])];
        let labels = [0, 1, 2];
        assert_eq!(recall_at_k(&q, &q, &labels, &labels, 1).unwrap(), 1.0);
    }

    #[test]
    fn k_beyond_gallery_is_a_contract_error() {
        let q = vec![e(&[1.0, 0.0])];
        assert!(matches!(recall_at_k(&q, &q, &[0], &[0], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn tie_picks_slot_zero() {
        let q = e(&[1.0, 0.0]);
        let x = e(&[0.0, 1.0]);
        assert_eq!(two_afc_trial(&q, &x, &x, 0).choice, Choice::Positive);
        assert_eq!(two_afc_trial(&q, &x, &x, 1).choice, Choice::Negative);
    }

    #[test]
    fn swapping_slots_keeps_the_choice() {
        let q = e(&[1.0, 0.2]);
        let (p, n) = (e(&[1.0, 0.0]), e(&[0.0, 1.0]));
        let a = two_afc_trial(&q, &p, &n, 0);
        let b = two_afc_trial(&q, &p, &n, 1);
        assert_eq!(a.choice, b.choice);
        assert_ne!(a.chosen_slot, b.chosen_slot);
    }

    #[test]
    fn text_form_names_ranges() {
        let run = |seed, acc| EvalRun { seed, recall: vec![(Direction::AudioToImage, 1, 0.5)], afc_accuracy: acc, trials: vec![] };
        let r = EvalReport { runs: vec![run(1, 0.7), run(2, 0.8)], trial_count: 0 };
        let text = r.to_text();
        assert!(text.contains("afc.accuracy.min = 0.700000"));
        assert!(text.contains("afc.accuracy.max = 0.800000"));
        assert!(text.contains("recall.audio_to_image@1.min = 0.500000"));
    }
}
