//! RIFF/WAVE ingestion (16-bit PCM or 32-bit float, mono or stereo) and a
//! float writer.

use std::path::Path;

use crate::error::{Error, Result};
use crate::motion::AudioClip;

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or(Error::Truncated {
            offset: at,
            needed: 2,
            len: b.len(),
        })
}

fn u32_at(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or(Error::Truncated {
            offset: at,
            needed: 4,
            len: b.len(),
        })
}

#[derive(Debug, Clone, Copy)]
struct Fmt {
    float: bool,
    channels: usize,
    rate: u32,
    bits: u16,
}

fn parse_fmt(b: &[u8], at: usize, size: usize) -> Result<Fmt> {
    if size < 16 {
        return Err(format_err(at, format!("fmt chunk is {size} bytes, need 16")));
    }
    let mut tag = u16_at(b, at)?;
    let channels = u16_at(b, at + 2)? as usize;
    let rate = u32_at(b, at + 4)?;
    let bits = u16_at(b, at + 14)?;
    if tag == FORMAT_EXTENSIBLE {
        if size < 26 {
            return Err(format_err(at, "extensible fmt chunk too short"));
        }
        tag = u16_at(b, at + 24)?;
    }
    let float = match (tag, bits) {
        (FORMAT_PCM, 16) => false,
        (FORMAT_FLOAT, 32) => true,
        _ => {
            return Err(format_err(
                at,
                format!("unsupported codec: format tag {tag} with {bits} bits per sample"),
            ))
        }
    };
    if !(1..=2).contains(&channels) {
        return Err(format_err(at + 2, format!("unsupported channel count {channels}")));
    }
    if rate == 0 {
        return Err(format_err(at + 4, "sample rate is zero"));
    }
    Ok(Fmt {
        float,
        channels,
        rate,
        bits,
    })
}

/// Decodes WAV bytes to mono samples at their native rate.
pub fn decode_wav(b: &[u8]) -> Result<(u32, Vec<f32>)> {
    if b.len() < 12 {
        return Err(Error::Truncated {
            offset: 0,
            needed: 12,
            len: b.len(),
        });
    }
    if &b[0..4] != b"RIFF" {
        return Err(format_err(0, "missing RIFF header"));
    }
    if &b[8..12] != b"WAVE" {
        return Err(format_err(8, "RIFF form type is not WAVE"));
    }
    let mut at = 12;
    let mut fmt: Option<Fmt> = None;
    let mut data: Option<(usize, usize)> = None;
    while at + 8 <= b.len() {
        let id = &b[at..at + 4];
        let size = u32_at(b, at + 4)? as usize;
        let body = at + 8;
        match id {
            b"fmt " => fmt = Some(parse_fmt(b, body, size)?),
            b"data" => {
                if body + size > b.len() {
                    return Err(Error::Truncated {
                        offset: body,
                        needed: size,
                        len: b.len(),
                    });
                }
                data = Some((body, size));
            }
            _ => {}
        }
        at = body + size + size % 2;
    }
    let fmt = fmt.ok_or_else(|| format_err(12, "no fmt chunk"))?;
    let (start, size) = data.ok_or_else(|| format_err(12, "no data chunk"))?;
    let width = fmt.bits as usize / 8;
    let frame = width * fmt.channels;
    if size % frame != 0 {
        return Err(format_err(start, format!("data size {size} is not a multiple of the {frame}-byte frame")));
    }
    let payload = &b[start..start + size];
    let mut out = Vec::with_capacity(size / frame);
    for (i, f) in payload.chunks_exact(frame).enumerate() {
        let mut acc = 0.0f64;
        for c in f.chunks_exact(width) {
            let v = if fmt.float {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if !v.is_finite() {
                    return Err(format_err(start + i * frame, "non-finite float sample"));
                }
                v.clamp(-1.0, 1.0) as f64
            } else {
                i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0
            };
            acc += v;
        }
        out.push((acc / fmt.channels as f64) as f32);
    }
    Ok((fmt.rate, out))
}

/// Linear resampling on the sample grid `i * src / dst`.
pub fn resample_linear(x: &[f32], src: u32, dst: u32) -> Vec<f32> {
    if src == dst || x.is_empty() {
        return x.to_vec();
    }
    let n = ((x.len() as u64 * dst as u64) / src as u64).max(1) as usize;
    let ratio = src as f64 / dst as f64;
    (0..n)
        .map(|i| {
            let p = i as f64 * ratio;
            let j = p.floor() as usize;
            if j + 1 >= x.len() {
                return x[x.len() - 1];
            }
            let w = p - j as f64;
            (x[j] as f64 * (1.0 - w) + x[j + 1] as f64 * w) as f32
        })
        .collect()
}

/// Reads a WAV file as a mono clip resampled to `sample_rate`.
pub fn read_wav(path: &Path, sample_rate: u32) -> Result<AudioClip> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (rate, samples) = decode_wav(&bytes)?;
    if samples.is_empty() {
        return Err(format_err(0, "data chunk holds no samples"));
    }
    AudioClip::new(sample_rate, resample_linear(&samples, rate, sample_rate))
}

/// Mono 32-bit float WAV bytes; exact for any clip.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    let n = clip.len() * 4;
    let mut b = Vec::with_capacity(44 + n);
    b.extend_from_slice(b"RIFF");
    b.extend_from_slice(&((36 + n) as u32).to_le_bytes());
    b.extend_from_slice(b"WAVEfmt ");
    b.extend_from_slice(&16u32.to_le_bytes());
    b.extend_from_slice(&FORMAT_FLOAT.to_le_bytes());
    b.extend_from_slice(&1u16.to_le_bytes());
    b.extend_from_slice(&clip.sample_rate().to_le_bytes());
    b.extend_from_slice(&(clip.sample_rate() * 4).to_le_bytes());
    b.extend_from_slice(&4u16.to_le_bytes());
    b.extend_from_slice(&32u16.to_le_bytes());
    b.extend_from_slice(b"data");
    b.extend_from_slice(&(n as u32).to_le_bytes());
    for s in clip.samples() {
        b.extend_from_slice(&s.to_le_bytes());
    }
    b
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    super::write_atomic(path, &encode_wav(clip))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm16(channels: u16, rate: u32, samples: &[i16]) -> Vec<u8> {
        let n = samples.len() * 2;
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&((36 + n) as u32).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * 2 * channels as u32).to_le_bytes());
        b.extend_from_slice(&(2 * channels).to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(n as u32).to_le_bytes());
        for s in samples {
            b.extend_from_slice(&s.to_le_bytes());
        }
        b
    }

    #[test]
    fn zeros_decode_to_silence() {
        let (rate, x) = decode_wav(&pcm16(1, 16_000, &[0; 320])).unwrap();
        assert_eq!(rate, 16_000);
        assert_eq!(x, vec![0.0; 320]);
    }

    #[test]
    fn most_negative_sample_is_minus_one() {
        let (_, x) = decode_wav(&pcm16(1, 16_000, &[-32768, 16384])).unwrap();
        assert_eq!(x, vec![-1.0, 0.5]);
    }

    #[test]
    fn stereo_is_averaged() {
        let (_, x) = decode_wav(&pcm16(2, 8_000, &[16384, 0, -16384, -16384])).unwrap();
        assert_eq!(x, vec![0.25, -0.5]);
    }

    #[test]
    fn float_roundtrip_is_exact() {
        let clip = AudioClip::new(16_000, vec![0.1, -0.73, 1.0, -1.0, 0.0]).unwrap();
        let (rate, x) = decode_wav(&encode_wav(&clip)).unwrap();
        assert_eq!(rate, 16_000);
        assert_eq!(x, clip.samples());
    }

    #[test]
    fn resampling_halves_length() {
        let x: Vec<f32> = (0..100).map(|i| i as f32 / 100.0).collect();
        let y = resample_linear(&x, 32_000, 16_000);
        assert_eq!(y.len(), 50);
        assert_eq!(y[10], x[20]);
    }

    #[test]
    fn malformed_headers_report_offsets() {
        let mut b = pcm16(1, 16_000, &[0; 4]);
        b[0] = b'X';
        assert!(matches!(decode_wav(&b), Err(Error::Format { offset: 0, .. })));
        let mut b = pcm16(1, 16_000, &[0; 4]);
        b[20] = 2; // format tag
        assert!(matches!(decode_wav(&b), Err(Error::Format { offset: 20, .. })));
        let b = pcm16(1, 16_000, &[0; 4]);
        assert!(matches!(decode_wav(&b[..b.len() - 2]), Err(Error::Truncated { .. })));
    }
}
