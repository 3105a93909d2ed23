//! Generates an image for one class from a trained checkpoint.
//!
//!     cargo run --release --example generate -- audio.ckpt 4
//!
//! Without a checkpoint a small model is trained first (about half a minute).

use std::path::PathBuf;

use wavbrivl::commands::{self, AudioSource};

const SMALL: &str = "corpus.per_class = 24\nqueue_size = 64\ntrain.batch = 16\ntrain.steps = 300\n";

fn main() -> wavbrivl::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = std::env::temp_dir().join("wavbrivl-generate-example");
    std::fs::create_dir_all(&dir)?;
    let ckpt = match args.next() {
        Some(path) => PathBuf::from(path),
        None => {
            let image = dir.join("image.ckpt");
            let audio = dir.join("audio.ckpt");
            commands::pretrain_image(SMALL, &image, &mut std::io::sink())?;
            commands::train_audio(SMALL, &image, &audio, &mut std::io::sink())?;
            audio
        }
    };
    let class_id = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let source = AudioSource::Class { class_id, seed: 99 };
    let (_, trace) = commands::generate(&ckpt, &source, "gen.record_every = 20", &dir)?;
    for r in &trace.records {
        println!("step {:>3}  similarity {:.4}", r.step, r.similarity);
    }
    println!("best {:.4} at step {}; image and trace in {}", trace.best_similarity, trace.best_step, dir.display());
    Ok(())
}
