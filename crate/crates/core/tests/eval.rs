mod common;

use common::{rng, uniform};
use proptest::prelude::*;
use wavbrivl::config::Config;
use wavbrivl::data::Corpus;
use wavbrivl::encoders::Embedding;
use wavbrivl::eval::{evaluate, recall_at_k, run_trials, two_afc_trial, Choice, EvalConfig, PoolImage, TrialImages};
use wavbrivl::model::Model;
use wavbrivl::Error;

fn random_embeddings(seed: u64, n: usize, d: usize) -> Vec<Embedding> {
    let mut r = rng(seed);
    (0..n).map(|_| Embedding::new(uniform(&mut r, d))).collect()
}

/// Instance-level recall@1 of unrelated random vectors is about 1/N.
#[test]
fn random_embeddings_have_chance_recall() {
    let labels: Vec<usize> = (0..100).collect();
    let mut total = 0.0;
    for seed in 0..10 {
        let q = random_embeddings(seed, 100, 32);
        let g = random_embeddings(seed + 100, 100, 32);
        total += recall_at_k(&q, &g, &labels, &labels, 1).unwrap();
    }
    let mean = total / 10.0;
    assert!(mean < 0.05, "mean recall@1 {mean}");
}

#[test]
fn k_equal_to_gallery_size_is_full_recall() {
    let q = random_embeddings(1, 30, 8);
    let g = random_embeddings(2, 30, 8);
    let labels: Vec<usize> = (0..30).map(|i| i % 7).collect();
    assert_eq!(recall_at_k(&q, &g, &labels, &labels, 30).unwrap(), 1.0);
}

#[test]
fn recall_contract_errors() {
    let q = random_embeddings(1, 3, 4);
    assert!(matches!(recall_at_k(&q, &q, &[0, 1], &[0, 1, 2], 1), Err(Error::Contract(_))));
    assert!(matches!(recall_at_k(&[], &q, &[], &[0, 1, 2], 1), Err(Error::Contract(_))));
    assert!(matches!(recall_at_k(&q, &q, &[0, 1, 2], &[0, 1, 2], 0), Err(Error::Contract(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recall_is_monotone_in_k(seed in any::<u64>(), n in 2usize..25, classes in 1usize..6) {
        let q = random_embeddings(seed, n, 6);
        let g = random_embeddings(seed ^ 1, n, 6);
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let mut last = 0.0;
        for k in 1..=n {
            let r = recall_at_k(&q, &g, &labels, &labels, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            prop_assert!(r >= last);
            last = r;
        }
        prop_assert_eq!(last, 1.0);
    }

    #[test]
    fn two_afc_picks_the_more_similar_slot(seed in any::<u64>(), slot in 0usize..2) {
        let e = random_embeddings(seed, 3, 5);
        let out = two_afc_trial(&e[0], &e[1], &e[2], slot);
        let (sp, sn) = (e[0].cosine(&e[1]), e[0].cosine(&e[2]));
        prop_assert_eq!(out.similarities[slot], sp);
        prop_assert_eq!(out.similarities[1 - slot], sn);
        let expect = if sp > sn || (sp == sn && slot == 0) { Choice::Positive } else { Choice::Negative };
        prop_assert_eq!(out.choice, expect);
    }
}

/// With every embedding identical each trial ties, the tie goes to slot 0,
/// and the positive sits in slot 0 on exactly half the trials.
#[test]
fn collapsed_embeddings_score_exactly_half() {
    let same = Embedding::new(vec![0.3, -0.2, 0.9]);
    let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let queries = vec![same.clone(); labels.len()];
    let pool: Vec<PoolImage> = labels
        .iter()
        .enumerate()
        .map(|(i, &c)| PoolImage { embedding: same.clone(), class_id: c, source: Some(i) })
        .collect();
    for trials in [2, 100, 200] {
        let records = run_trials(&queries, &labels, &pool, trials, 9).unwrap();
        let correct = records.iter().filter(|r| r.correct()).count();
        assert_eq!(correct * 2, trials);
    }
}

#[test]
fn trials_avoid_the_query_clip_when_possible() {
    // Pool embeddings identify their source clip by a one-hot coordinate.
    let n = 12;
    let one_hot = |i: usize| {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Embedding::new(v)
    };
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let queries: Vec<Embedding> = (0..n).map(one_hot).collect();
    let pool: Vec<PoolImage> = (0..n).map(|i| PoolImage { embedding: one_hot(i), class_id: labels[i], source: Some(i) }).collect();
    let records = run_trials(&queries, &labels, &pool, 300, 4).unwrap();
    for r in &records {
        assert_ne!(r.audio_class, r.other_class);
        // The own-clip image would score 1.0; every other image scores 0.
        assert!(r.outcome.similarities.iter().all(|&s| s == 0.0), "trial {}", r.trial);
        assert_eq!(r.positive_slot, r.trial % 2);
    }
}

fn small_config() -> Config {
    let mut cfg = Config::default();
    cfg.set("corpus.per_class", "10").unwrap();
    cfg.set("queue_size", "16").unwrap();
    cfg.set("train.batch", "8").unwrap();
    cfg
}

#[test]
fn untrained_model_is_at_chance() {
    let cfg = small_config();
    let corpus = Corpus::generate(&cfg.corpus_config()).unwrap();
    let mut model = Model::new(cfg.clone()).unwrap();
    model.start_audio().unwrap();
    let eval = EvalConfig { trials: 200, images: TrialImages::Corpus, ..Default::default() };
    let report = evaluate(&model, &corpus, &eval, &cfg.generation, &[0, 1, 2]).unwrap();
    assert_eq!(report.runs.len(), 3);
    let mean = report.runs.iter().map(|r| r.afc_accuracy).sum::<f32>() / 3.0;
    assert!((0.4..=0.6).contains(&mean), "untrained 2AFC accuracy {mean}");
    for (name, _) in report.runs[0].metrics() {
        let (lo, hi) = report.range(&name).unwrap();
        assert!(lo <= hi, "{name}");
    }
    assert_eq!(report.trials_csv().lines().count(), 1 + 3 * 200);
    assert!(report.to_text().contains("afc.accuracy.min"));
}

#[test]
fn evaluation_needs_an_audio_side() {
    let cfg = small_config();
    let corpus = Corpus::generate(&cfg.corpus_config()).unwrap();
    let model = Model::new(cfg.clone()).unwrap();
    let eval = EvalConfig { images: TrialImages::Corpus, ..Default::default() };
    assert!(matches!(evaluate(&model, &corpus, &eval, &cfg.generation, &[0]), Err(Error::State(_))));
}
