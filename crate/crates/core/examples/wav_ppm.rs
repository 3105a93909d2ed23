//! Writes a synthetic clip as 16-bit WAV and its paired image as PPM, then
//! reads the WAV back.

use wavbrivl::data::{encode_ppm, load_wav, save_ppm, synth_pair, write_wav, SynthCorpusConfig};

fn main() -> wavbrivl::Result<()> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("wavbrivl-io-example"));
    std::fs::create_dir_all(&dir)?;
    let sample = synth_pair(&SynthCorpusConfig::default(), 5, 21)?;

    let wav = dir.join("clip.wav");
    write_wav(&wav, &sample.waveform)?;
    let back = load_wav(&wav)?;
    let worst = sample.waveform.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    println!("{}: {} samples, worst PCM16 error {worst:.2e}", wav.display(), back.len());

    let ppm = dir.join("image.ppm");
    save_ppm(&sample.image, &ppm)?;
    let bytes = encode_ppm(&sample.image);
    let header_len = bytes.iter().enumerate().filter(|(_, b)| **b == b'\n').nth(2).map_or(0, |(i, _)| i + 1);
    println!("{}: {} bytes, header {:?}", ppm.display(), bytes.len(), String::from_utf8_lossy(&bytes[..header_len]));
    Ok(())
}
