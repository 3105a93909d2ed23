//! RIFF/WAVE reader for 16-bit PCM at 16 kHz, plus a matching writer.

use std::fs;
use std::path::Path;

use super::corpus::SAMPLE_RATE;
use crate::error::{Error, Result};

const PCM: u16 = 1;
const EXTENSIBLE: u16 = 0xFFFE;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse { offset, message: message.into() }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a mono or stereo PCM16 file; stereo is averaged to mono and samples
/// are scaled by 1/32768. Other sample rates are rejected, not resampled.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    parse_wav(&fs::read(path)?)
}

struct Format {
    channels: u16,
    block_align: u16,
}

pub fn parse_wav(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() < 12 {
        return Err(parse_err(bytes.len(), "file too short for a RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(parse_err(0, "missing RIFF magic"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(parse_err(8, "missing WAVE form type"));
    }
    let declared_end = (u32_at(bytes, 4) as usize).saturating_add(8);
    let end = declared_end.min(bytes.len());
    let mut pos = 12;
    let mut format: Option<Format> = None;
    while pos + 8 <= end {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if size > end - body {
            return Err(parse_err(
                pos + 4,
                format!(
                    "chunk '{}' declares {size} bytes but only {} remain",
                    String::from_utf8_lossy(id),
                    end - body
                ),
            ));
        }
        let chunk = &bytes[body..body + size];
        match id {
            b"fmt " => format = Some(parse_fmt(chunk, body)?),
            b"data" => {
                let fmt = format.as_ref().ok_or_else(|| parse_err(pos, "data chunk before fmt chunk"))?;
                return Ok(decode_samples(chunk, fmt));
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(parse_err(pos.min(bytes.len()), "no data chunk found"))
}

fn parse_fmt(chunk: &[u8], offset: usize) -> Result<Format> {
    if chunk.len() < 16 {
        return Err(parse_err(offset, format!("fmt chunk has {} bytes, need 16", chunk.len())));
    }
    let mut tag = u16_at(chunk, 0);
    let channels = u16_at(chunk, 2);
    let rate = u32_at(chunk, 4);
    let block_align = u16_at(chunk, 12);
    let bits = u16_at(chunk, 14);
    if tag == EXTENSIBLE {
        if chunk.len() < 26 {
            return Err(parse_err(offset, "extensible fmt chunk is truncated"));
        }
        tag = u16_at(chunk, 24);
    }
    if tag != PCM {
        return Err(Error::UnsupportedFormat(format!("encoding tag {tag} (only PCM = 1 is read)")));
    }
    if bits != 16 {
        return Err(Error::UnsupportedFormat(format!("{bits} bits per sample (only 16 is read)")));
    }
    if channels != 1 && channels != 2 {
        return Err(Error::UnsupportedFormat(format!("{channels} channels (mono or stereo only)")));
    }
    if rate != SAMPLE_RATE {
        return Err(Error::UnsupportedFormat(format!("sample rate {rate} Hz (need {SAMPLE_RATE})")));
    }
    if block_align != channels * 2 {
        return Err(parse_err(offset + 12, format!("block align {block_align} inconsistent with {channels} channels")));
    }
    Ok(Format { channels, block_align })
}

fn decode_samples(data: &[u8], fmt: &Format) -> Vec<f32> {
    // A trailing partial frame is dropped.
    data.chunks_exact(fmt.block_align as usize)
        .map(|frame| {
            let sum: f32 = frame
                .chunks_exact(2)
                .map(|s| i16::from_le_bytes([s[0], s[1]]) as f32 / 32768.0)
                .sum();
            sum / fmt.channels as f32
        })
        .collect()
}

/// Mono PCM16 encoding at 16 kHz; samples are clamped to the i16 range.
pub fn encode_wav(samples: &[f32]) -> Vec<u8> {
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<()> {
    fs::write(path, encode_wav(samples))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_then_parse() {
        let s = vec![0.0, 0.5, -0.5, -1.0];
        assert_eq!(parse_wav(&encode_wav(&s)).unwrap(), s);
    }

    #[test]
    fn missing_magic_reports_offset_zero() {
        let mut b = encode_wav(&[0.0]);
        b[0] = b'X';
        assert!(matches!(parse_wav(&b), Err(Error::Parse { offset: 0, .. })));
    }
}
