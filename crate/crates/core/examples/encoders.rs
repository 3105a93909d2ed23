//! Both towers on one paired sample. Untrained, so the cosine carries no
//! meaning yet; see `pipeline` for trained towers.

use wavbrivl::data::{synth_pair, SynthCorpusConfig};
use wavbrivl::encoders::{AudioTower, AudioTowerConfig, ImageTower, ImageTowerConfig};

fn main() -> wavbrivl::Result<()> {
    let sample = synth_pair(&SynthCorpusConfig::default(), 2, 7)?;
    let image = ImageTower::new(ImageTowerConfig::default(), 1)?;
    let audio = AudioTower::new(AudioTowerConfig::default(), 2)?;

    let v = image.encode(&sample.image)?;
    let (a, _) = audio.encode(&sample.waveform)?;
    println!("image embedding: dim {}, norm {:.6}", v.dim(), v.norm());
    println!("audio embedding: dim {}, norm {:.6}", a.dim(), a.norm());
    println!("cosine(image, audio) = {:.4}", v.cosine(&a));

    let out = audio.forward(&sample.waveform)?;
    println!("audio layer weights: {:?}", audio.layer_logits.softmax(0)?.to_vec());
    println!("audio tokens per layer: {:?}", out.layer_outputs[0].shape());
    Ok(())
}
