//! Log-power spectrogram of a synthetic clip; the loudest bins are the
//! class's chord.

use wavbrivl::data::{chord_bins, synth_pair, SynthCorpusConfig};
use wavbrivl::encoders::Spectrogram;

fn main() -> wavbrivl::Result<()> {
    let class = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(3);
    let clip = synth_pair(&SynthCorpusConfig::default(), class, 11)?;
    let spec = Spectrogram::new(400, 160)?;
    let s = spec.compute(&clip.waveform)?;
    let (frames, bins) = (s.shape()[0], s.shape()[1]);
    let data = s.to_vec();
    let mut mean: Vec<(f32, usize)> =
        (0..bins).map(|b| ((0..frames).map(|f| data[f * bins + b]).sum::<f32>() / frames as f32, b)).collect();
    mean.sort_by(|a, b| b.0.total_cmp(&a.0));

    println!("{} samples -> {frames} frames x {bins} bins", clip.waveform.len());
    println!("chord bins of class {class}: {:?}", chord_bins(class));
    println!("loudest bins:");
    for (power, bin) in mean.iter().take(6) {
        println!("  bin {bin:>3} ({:>5} Hz)  {power:.2}", bin * 40);
    }
    Ok(())
}
