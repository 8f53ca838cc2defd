//! PCM 16-bit mono little-endian WAV I/O. No resampling: files whose rate
//! differs from the configured one are rejected with the rate named.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let mut pcm = Vec::with_capacity(samples.len() * 2);
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        pcm.extend_from_slice(&v.to_le_bytes());
    }
    let data_len = pcm.len() as u32;
    let byte_rate = sample_rate * 2;

    let mut f = std::fs::File::create(path)?;
    f.write_all(b"RIFF")?;
    f.write_all(&(36 + data_len).to_le_bytes())?;
    f.write_all(b"WAVE")?;
    f.write_all(b"fmt ")?;
    f.write_all(&16u32.to_le_bytes())?;
    f.write_all(&1u16.to_le_bytes())?; // PCM
    f.write_all(&1u16.to_le_bytes())?; // mono
    f.write_all(&sample_rate.to_le_bytes())?;
    f.write_all(&byte_rate.to_le_bytes())?;
    f.write_all(&2u16.to_le_bytes())?; // block align
    f.write_all(&16u16.to_le_bytes())?; // bits
    f.write_all(b"data")?;
    f.write_all(&data_len.to_le_bytes())?;
    f.write_all(&pcm)?;
    Ok(())
}

pub fn read_wav(path: &Path, expected_rate: u32) -> Result<Vec<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Audio(format!("{}: not a RIFF/WAVE file", path.display())));
    }

    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_end = (pos + 8 + size).min(bytes.len());
        let body = &bytes[pos + 8..body_end];
        match id {
            b"fmt " if body.len() >= 16 => {
                fmt = Some((
                    u16::from_le_bytes(body[0..2].try_into().unwrap()),
                    u16::from_le_bytes(body[2..4].try_into().unwrap()),
                    u32::from_le_bytes(body[4..8].try_into().unwrap()),
                    u16::from_le_bytes(body[14..16].try_into().unwrap()),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = pos + 8 + size + (size & 1);
    }

    let (format, channels, rate, bits) = fmt
        .ok_or_else(|| Error::Audio(format!("{}: missing fmt chunk", path.display())))?;
    if format != 1 || bits != 16 {
        return Err(Error::Audio(format!(
            "{}: only 16-bit PCM is supported (format {format}, {bits} bits)",
            path.display()
        )));
    }
    if channels != 1 {
        return Err(Error::Audio(format!(
            "{}: only mono is supported, got {channels} channels",
            path.display()
        )));
    }
    if rate != expected_rate {
        return Err(Error::Audio(format!(
            "{}: sample rate {rate} Hz does not match required {expected_rate} Hz",
            path.display()
        )));
    }
    let data = data.ok_or_else(|| Error::Audio(format!("{}: missing data chunk", path.display())))?;
    Ok(data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f32 / 32768.0)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let samples: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.01).sin() * 0.5).collect();
        write_wav(&path, &samples, 22050).unwrap();
        let back = read_wav(&path, 22050).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn wrong_rate_rejected_with_rate_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav(&path, &[0.0; 100], 16000).unwrap();
        let err = read_wav(&path, 22050).unwrap_err().to_string();
        assert!(err.contains("16000") && err.contains("22050"), "{err}");
    }
}
