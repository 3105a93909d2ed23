//! Recall@k and forced-choice trials on hand-built embeddings: two tight
//! clusters per class and one stray query.

use wavbrivl::encoders::Embedding;
use wavbrivl::eval::{recall_at_k, run_trials, PoolImage};

fn main() -> wavbrivl::Result<()> {
    let e = |x: f32, y: f32| Embedding::new(vec![x, y, 0.1]);
    let gallery = vec![e(1.0, 0.0), e(0.9, 0.1), e(0.0, 1.0), e(0.1, 0.9), e(-1.0, 0.0), e(-0.9, -0.1)];
    let gallery_labels = [0, 0, 1, 1, 2, 2];
    let queries = vec![e(1.0, 0.05), e(0.05, 1.0), e(0.7, 0.7)];
    let query_labels = [0, 1, 2];
    for k in [1, 2, 4, 6] {
        println!("recall@{k} = {:.3}", recall_at_k(&queries, &gallery, &query_labels, &gallery_labels, k)?);
    }

    let pool: Vec<PoolImage> = gallery
        .iter()
        .zip(gallery_labels)
        .map(|(g, c)| PoolImage { embedding: g.clone(), class_id: c, source: None })
        .collect();
    let trials = run_trials(&queries, &query_labels, &pool, 12, 5)?;
    for t in &trials {
        println!(
            "trial {:>2}: audio class {} vs {}, positive in slot {}, chose slot {} ({})",
            t.trial,
            t.audio_class,
            t.other_class,
            t.positive_slot,
            t.outcome.chosen_slot,
            if t.correct() { "positive" } else { "negative" }
        );
    }
    let correct = trials.iter().filter(|t| t.correct()).count();
    println!("accuracy {correct}/{}", trials.len());
    Ok(())
}
