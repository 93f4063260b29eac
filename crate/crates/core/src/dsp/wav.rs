//! RIFF/WAVE PCM16 reader and writer.

use std::fs;
use std::path::Path;

use super::AudioBuffer;
use crate::error::{Error, Result};

fn fmt_err(chunk: &str, detail: impl Into<String>) -> Error {
    Error::Format {
        chunk: chunk.to_string(),
        detail: detail.into(),
    }
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Parses PCM16 mono or stereo; stereo is averaged to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" {
        return Err(fmt_err("RIFF", "missing RIFF header"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(fmt_err("RIFF", "form type is not WAVE"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u32)> = None; // channels, rate
    while pos + 8 <= bytes.len() {
        let id = String::from_utf8_lossy(&bytes[pos..pos + 4]).into_owned();
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).filter(|&e| e <= bytes.len());
        match id.as_str() {
            "fmt " => {
                let end = body_end.ok_or_else(|| fmt_err(&id, "chunk runs past end of file"))?;
                let body = &bytes[body_start..end];
                if body.len() < 16 {
                    return Err(fmt_err(&id, format!("chunk too small ({} bytes)", body.len())));
                }
                let tag = u16_at(body, 0);
                let channels = u16_at(body, 2);
                let rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if tag != 1 {
                    return Err(fmt_err(&id, format!("format tag {tag} is not PCM")));
                }
                if bits != 16 {
                    return Err(fmt_err(&id, format!("{bits}-bit samples unsupported")));
                }
                if !(channels == 1 || channels == 2) {
                    return Err(fmt_err(&id, format!("{channels} channels unsupported")));
                }
                if rate == 0 {
                    return Err(fmt_err(&id, "zero sample rate"));
                }
                fmt = Some((channels, rate));
            }
            "data" => {
                let (channels, rate) = fmt.ok_or_else(|| fmt_err(&id, "data before fmt chunk"))?;
                let end = body_end.ok_or_else(|| fmt_err(&id, "chunk runs past end of file"))?;
                let body = &bytes[body_start..end];
                let frame = 2 * channels as usize;
                if body.len() % frame != 0 {
                    return Err(fmt_err(&id, "length is not a whole number of frames"));
                }
                let samples = body
                    .chunks_exact(frame)
                    .map(|f| {
                        let s: f64 = f
                            .chunks_exact(2)
                            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                            .sum();
                        s / channels as f64
                    })
                    .collect();
                return AudioBuffer::new(samples, rate);
            }
            _ => {}
        }
        // chunks are padded to even sizes
        pos = body_start + size + (size & 1);
    }
    Err(fmt_err("data", "no data chunk"))
}

/// Serializes as mono 16-bit PCM, clipping to [−1, 1).
pub fn encode_wav_pcm16(buf: &AudioBuffer) -> Vec<u8> {
    let data_len = 2 * buf.samples.len() as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &buf.samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Writes PCM WAV; only 16-bit depth is supported.
pub fn write_wav(path: &Path, buf: &AudioBuffer, bit_depth: u16) -> Result<()> {
    if bit_depth != 16 {
        return Err(Error::Config(format!("bit depth {bit_depth} unsupported, use 16")));
    }
    fs::write(path, encode_wav_pcm16(buf)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::fft::peak_bin;

    fn sine(f: f64, sr: u32, n: usize) -> AudioBuffer {
        let s = (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / sr as f64).sin())
            .collect();
        AudioBuffer::new(s, sr).unwrap()
    }

    #[test]
    fn roundtrip_within_quantization() {
        let a = sine(440.0, 24_000, 2400);
        let b = decode_wav(&encode_wav_pcm16(&a)).unwrap();
        assert_eq!(b.sample_rate, 24_000);
        let err = a.samples.iter().zip(&b.samples).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err <= 1.0 / 32768.0);
    }

    #[test]
    fn sine_keeps_dominant_bin() {
        let a = sine(440.0, 24_000, 24_000);
        let b = decode_wav(&encode_wav_pcm16(&a)).unwrap();
        assert_eq!(peak_bin(&a.samples), 440);
        assert_eq!(peak_bin(&b.samples), 440);
    }

    #[test]
    fn empty_data_chunk() {
        let a = AudioBuffer::new(vec![], 16_000).unwrap();
        let b = decode_wav(&encode_wav_pcm16(&a)).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn stereo_is_averaged() {
        let mut bytes = encode_wav_pcm16(&AudioBuffer::new(vec![0.0; 2], 8000).unwrap());
        // rewrite as 1 stereo frame: L = 0.5, R = -0.25
        bytes[22] = 2;
        bytes[40..44].copy_from_slice(&4u32.to_le_bytes());
        bytes.truncate(44);
        bytes.extend_from_slice(&16384i16.to_le_bytes());
        bytes.extend_from_slice(&(-8192i16).to_le_bytes());
        let b = decode_wav(&bytes).unwrap();
        assert_eq!(b.samples, vec![0.125]);
    }

    #[test]
    fn errors_name_the_chunk() {
        let good = encode_wav_pcm16(&sine(100.0, 8000, 10));
        let mut float = good.clone();
        float[20] = 3; // IEEE float tag
        match decode_wav(&float).unwrap_err() {
            Error::Format { chunk, .. } => assert_eq!(chunk, "fmt "),
            e => panic!("{e}"),
        }
        match decode_wav(b"RIFX....WAVE").unwrap_err() {
            Error::Format { chunk, .. } => assert_eq!(chunk, "RIFF"),
            e => panic!("{e}"),
        }
        let truncated = &good[..good.len() - 4];
        match decode_wav(truncated).unwrap_err() {
            Error::Format { chunk, .. } => assert_eq!(chunk, "data"),
            e => panic!("{e}"),
        }
    }
}
