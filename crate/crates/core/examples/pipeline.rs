//! The whole pipeline through the command functions: pretrain, train,
//! evaluate, generate one image per class.
//!
//!     cargo run --release --example pipeline            # reduced corpus, ~1 min
//!     cargo run --release --example pipeline -- --full  # default settings, ~2 min

use wavbrivl::commands::{self, AudioSource};

const REDUCED: &str = "corpus.per_class = 32\ntrain.steps = 300\neval.seeds = 2\neval.trials = 100\n";

fn main() -> wavbrivl::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let settings = if full { "" } else { REDUCED };
    let dir = std::env::temp_dir().join("wavbrivl-pipeline-example");
    std::fs::create_dir_all(&dir)?;
    let image = dir.join("image.ckpt");
    let audio = dir.join("audio.ckpt");
    let mut stdout = std::io::stdout();

    commands::pretrain_image(settings, &image, &mut stdout)?;
    let reports = commands::train_audio(settings, &image, &audio, &mut std::io::sink())?;
    if let (Some(first), Some(last)) = (reports.iter().find(|r| r.loss > 0.0), reports.last()) {
        println!("audio training: loss {:.3} at step {} -> {:.3} at step {}", first.loss, first.step, last.loss, last.step);
    }

    let report = commands::evaluate(&audio, settings, None)?;
    print!("{}", report.table());

    let classes = commands::load_model(&audio)?.config.corpus.class_count;
    for class_id in 0..classes {
        let out = dir.join(format!("class{class_id}"));
        std::fs::create_dir_all(&out)?;
        let (_, trace) = commands::generate(&audio, &AudioSource::Class { class_id, seed: 1 }, "", &out)?;
        println!("class {class_id}: similarity {:.3} -> {:.3}", trace.initial_similarity(), trace.best_similarity);
    }
    println!("outputs in {}", dir.display());
    Ok(())
}
