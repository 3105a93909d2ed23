//! Pretrains the image tower briefly, freezes it, then trains the audio side
//! against it and prints the loss as it falls.

use wavbrivl::config::Config;
use wavbrivl::data::Corpus;
use wavbrivl::model::Model;
use wavbrivl::pipeline::{pretrain_image_tower, train_audio};

fn main() -> wavbrivl::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let config = Config::from_text("corpus.per_class = 24\nqueue_size = 64\ntrain.batch = 16\n")?;
    let corpus = Corpus::generate(&config.corpus_config())?;
    let mut model = Model::new(config)?;

    let report = pretrain_image_tower(&model.image, &corpus, &model.config.image_pretrain, 1)?;
    println!("image tower: held-out class accuracy {:.3}", report.held_out_accuracy);

    model.start_audio()?;
    let trainer = model.trainer.as_mut().expect("started");
    let reports = train_audio(trainer, &model.image, &corpus, steps, 2, &mut std::io::sink())?;
    for r in reports.iter().filter(|r| r.step % 20 == 0 || r.step == 1) {
        println!("step {:>4}  loss {:.4}  grad norm {:.3}  queue {}", r.step, r.loss, r.grad_norm, r.queue_fill);
    }
    Ok(())
}
