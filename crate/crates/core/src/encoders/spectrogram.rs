use std::f32::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Added to the power spectrum before the logarithm.
pub const LOG_FLOOR: f32 = 1e-6;

/// Log-power short-time Fourier transform with a periodic Hann window.
#[derive(Clone)]
pub struct Spectrogram {
    n_fft: usize,
    hop: usize,
    window: Vec<f32>,
    fft: Arc<dyn Fft<f32>>,
}

impl fmt::Debug for Spectrogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectrogram").field("n_fft", &self.n_fft).field("hop", &self.hop).finish()
    }
}

impl Spectrogram {
    pub fn new(n_fft: usize, hop: usize) -> Result<Spectrogram> {
        if n_fft < 2 || hop == 0 {
            return Err(Error::config(format!("invalid STFT n_fft={n_fft} hop={hop}")));
        }
        let window = (0..n_fft).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f32 / n_fft as f32).cos()).collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        Ok(Spectrogram { n_fft, hop, window, fft })
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frames(&self, samples: usize) -> Option<usize> {
        (samples >= self.n_fft).then(|| 1 + (samples - self.n_fft) / self.hop)
    }

    /// `[frames × bins]` of `ln(|STFT|² + 1e-6)`.
    pub fn compute(&self, waveform: &[f32]) -> Result<Tensor> {
        let frames = self.frames(waveform.len()).ok_or_else(|| {
            Error::Input(format!(
                "waveform of {} samples is shorter than the {}-sample window",
                waveform.len(),
                self.n_fft
            ))
        })?;
        let bins = self.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(0.0f32, 0.0); self.n_fft];
        for f in 0..frames {
            let start = f * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(waveform[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            out.extend(buf[..bins].iter().map(|c| (c.norm_sqr() + LOG_FLOOR).ln()));
        }
        Tensor::new(out, &[frames, bins])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_waveform_hits_the_floor() {
        let s = Spectrogram::new(400, 160).unwrap();
        let t = s.compute(&vec![0.0; 1000]).unwrap();
        assert!(t.to_vec().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn one_second_has_98_frames() {
        let s = Spectrogram::new(400, 160).unwrap();
        assert_eq!(s.compute(&vec![0.1; 16000]).unwrap().shape(), &[98, 201]);
    }

    #[test]
    fn bin_centred_sine_peaks_in_its_bin() {
        let s = Spectrogram::new(400, 160).unwrap();
        let bin = 25;
        let freq = bin as f32 * 16000.0 / 400.0;
        let wave: Vec<f32> =
            (0..16000).map(|n| (2.0 * PI * freq * n as f32 / 16000.0).sin()).collect();
        let t = s.compute(&wave).unwrap();
        for frame in t.to_vec().chunks(201) {
            let argmax = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            assert_eq!(argmax, bin);
        }
    }

    #[test]
    fn short_input_is_rejected() {
        let s = Spectrogram::new(400, 160).unwrap();
        assert!(matches!(s.compute(&[0.0; 399]), Err(Error::Input(_))));
    }
}
