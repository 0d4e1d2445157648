//! 16-bit PCM mono RIFF/WAVE files.

use std::path::Path;

use phonodiff_core::{Error, Result};

pub const HEADER_BYTES: usize = 44;

/// Quantizes one sample: clip to [−1, 1], scale by 32767, round half away
/// from zero.
pub fn quantize(x: f64) -> i16 {
    (x.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

pub fn encode(samples: &[f64], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(HEADER_BYTES + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    out
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Decodes a file written by [`encode`]; returns samples in [−1, 1] and the
/// sample rate.
pub fn decode(bytes: &[u8]) -> Result<(Vec<f64>, u32)> {
    let bad = |what: &str| Error::Format(format!("wav: {what}"));
    if bytes.len() < HEADER_BYTES {
        return Err(bad("shorter than the 44-byte header"));
    }
    if &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("missing RIFF/WAVE tags"));
    }
    if &bytes[12..16] != b"fmt " || u32_at(bytes, 16) != 16 {
        return Err(bad("unexpected fmt chunk"));
    }
    if u16_at(bytes, 20) != 1 || u16_at(bytes, 22) != 1 || u16_at(bytes, 34) != 16 {
        return Err(bad("only 16-bit mono PCM is supported"));
    }
    let sample_rate = u32_at(bytes, 24);
    if &bytes[36..40] != b"data" {
        return Err(bad("missing data chunk"));
    }
    let len = u32_at(bytes, 40) as usize;
    if !len.is_multiple_of(2) || HEADER_BYTES + len != bytes.len() || u32_at(bytes, 4) as usize != 36 + len {
        return Err(bad("chunk sizes disagree with file length"));
    }
    let samples = bytes[HEADER_BYTES..]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32767.0)
        .collect();
    Ok((samples, sample_rate))
}

pub fn write_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    std::fs::write(path, encode(samples, sample_rate))?;
    Ok(())
}

pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    decode(&std::fs::read(path)?)
}
