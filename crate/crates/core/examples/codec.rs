//! Trains the codec on the corpus images and decodes a random token grid.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wavbrivl::codec::{codec_pretrain, Codec, CodecConfig, CodecPretrainConfig};
use wavbrivl::data::{save_ppm, Corpus, Image, SynthCorpusConfig};

fn main() -> wavbrivl::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let corpus = Corpus::generate(&SynthCorpusConfig { per_class: 24, ..Default::default() })?;
    let images: Vec<Image> = corpus.train.iter().map(|s| s.image.clone()).collect();

    let codec = Codec::new(CodecConfig::default(), 1)?;
    let report = codec_pretrain(&codec, &images, &CodecPretrainConfig { epochs, ..Default::default() }, 2)?;
    if let (Some(first), Some(last)) = (report.history.first(), report.history.last()) {
        println!("reconstruction loss {:.4} -> {:.4}", first.reconstruction, last.reconstruction);
    }
    println!("reconstruction MSE {:.4}, {} of {} codes used", report.reconstruction_mse, report.codes_used, codec.codebook.size());

    let dir = std::env::temp_dir().join("wavbrivl-codec-example");
    std::fs::create_dir_all(&dir)?;
    let grid = codec.random_grid(&mut ChaCha8Rng::seed_from_u64(3));
    save_ppm(&codec.decode(&grid)?, dir.join("random_grid.ppm"))?;
    save_ppm(&images[0], dir.join("original.ppm"))?;
    println!("wrote {}", dir.display());
    Ok(())
}
