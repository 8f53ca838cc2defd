//! Acoustic speaker fingerprint: a deterministic stand-in for a trained
//! verification embedding. Per-bin mel statistics projected through a
//! fixed random matrix, then length-normalized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::stft::mel_spectrogram;
use crate::audio::AudioConfig;
use crate::error::{Error, Result};

pub const EMBEDDING_DIM: usize = 256;

/// Seed of the fixed projection; part of the embedding definition, never
/// varied per call.
const PROJECTION_SEED: u64 = 0x5045_414b_4552;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbeddingSource {
    Loaded,
    Fingerprint,
}

/// Unit-norm 256-d voice identity vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEmbedding {
    pub values: Vec<f32>,
    pub source: EmbeddingSource,
}

impl SpeakerEmbedding {
    pub fn from_values(mut values: Vec<f32>, source: EmbeddingSource) -> Result<Self> {
        if values.len() != EMBEDDING_DIM {
            return Err(Error::invalid(format!(
                "speaker embedding must have {EMBEDDING_DIM} dimensions, got {}",
                values.len()
            )));
        }
        let norm = values.iter().map(|&x| x * x).sum::<f32>().sqrt();
        if norm < 1e-12 {
            return Err(Error::invalid("zero-norm speaker embedding"));
        }
        values.iter_mut().for_each(|x| *x /= norm);
        Ok(SpeakerEmbedding { values, source })
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f32 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a * b)
            .sum()
    }
}

fn projection_matrix(rows: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    let scale = 1.0 / (rows as f32).sqrt();
    (0..rows * EMBEDDING_DIM)
        .map(|_| {
            // Box-Muller
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let g = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            g as f32 * scale
        })
        .collect()
}

/// Deterministic fingerprint from at least half a second of audio.
pub fn speaker_fingerprint(samples: &[f32], cfg: &AudioConfig) -> Result<SpeakerEmbedding> {
    let min_samples = cfg.sample_rate as usize / 2;
    if samples.len() < min_samples {
        return Err(Error::Audio(format!(
            "need at least 0.5 s of audio for a fingerprint, got {:.3} s",
            samples.len() as f32 / cfg.sample_rate as f32
        )));
    }
    let mel = mel_spectrogram(samples, cfg)?;
    let t = mel.n_frames as f32;
    let bins = mel.n_bins;

    let mut mean = vec![0.0f32; bins];
    for f in 0..mel.n_frames {
        for (m, &v) in mean.iter_mut().zip(mel.frame(f)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut std = vec![0.0f32; bins];
    for f in 0..mel.n_frames {
        for (b, &v) in mel.frame(f).iter().enumerate() {
            std[b] += (v - mean[b]) * (v - mean[b]);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / t).sqrt());

    let features: Vec<f32> = mean.into_iter().chain(std).collect();
    let proj = projection_matrix(features.len());
    let mut out = vec![0.0f32; EMBEDDING_DIM];
    for (i, &x) in features.iter().enumerate() {
        let row = &proj[i * EMBEDDING_DIM..(i + 1) * EMBEDDING_DIM];
        for (o, &p) in out.iter_mut().zip(row) {
            *o += x * p;
        }
    }
    SpeakerEmbedding::from_values(out, EmbeddingSource::Fingerprint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::stft::sine;

    #[test]
    fn unit_norm_and_deterministic() {
        let cfg = AudioConfig::default();
        let wav = sine(180.0, 1.0, 0.5, cfg.sample_rate);
        let a = speaker_fingerprint(&wav, &cfg).unwrap();
        let b = speaker_fingerprint(&wav, &cfg).unwrap();
        assert_eq!(a, b);
        let norm: f32 = a.values.iter().map(|&x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn distinct_pitches_are_distinguishable() {
        let cfg = AudioConfig::default();
        let lo = speaker_fingerprint(&sine(120.0, 1.0, 0.5, cfg.sample_rate), &cfg).unwrap();
        let hi = speaker_fingerprint(&sine(280.0, 1.0, 0.5, cfg.sample_rate), &cfg).unwrap();
        assert!(lo.cosine(&hi) < 0.99, "cosine {}", lo.cosine(&hi));
    }

    #[test]
    fn too_short_audio_rejected() {
        let cfg = AudioConfig::default();
        let err = speaker_fingerprint(&vec![0.1; 1000], &cfg);
        assert!(err.is_err());
    }
}
