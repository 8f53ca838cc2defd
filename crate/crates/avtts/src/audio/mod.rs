//! Deterministic DSP: mel spectrograms, frame-level pitch and energy,
//! Griffin-Lim rendering, acoustic speaker fingerprints, WAV I/O.

mod fingerprint;
mod griffin_lim;
mod pitch;
mod stft;
pub mod wav;

pub use fingerprint::{speaker_fingerprint, SpeakerEmbedding, EmbeddingSource, EMBEDDING_DIM};
pub use griffin_lim::griffin_lim;
pub use pitch::{extract_f0, FramePitch, F0_MAX, F0_MIN};
pub use stft::{extract_energy, mel_spectrogram, stft_magnitudes, FrameEnergy, MelSpectrogram};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AudioConfig {
    pub sample_rate: u32,
    pub fft_size: usize,
    pub hop: usize,
    pub mel_bins: usize,
    pub fmin: f32,
    pub fmax: f32,
    pub log_floor: f32,
}

impl Default for AudioConfig {
    fn default() -> Self {
        AudioConfig {
            sample_rate: 22050,
            fft_size: 1024,
            hop: 256,
            mel_bins: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl AudioConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if self.hop >= self.fft_size {
            return Err(crate::Error::Audio(format!(
                "hop {} must be < fft_size {}",
                self.hop, self.fft_size
            )));
        }
        if self.fmax > self.sample_rate as f32 / 2.0 {
            return Err(crate::Error::Audio(format!(
                "fmax {} exceeds Nyquist {}",
                self.fmax,
                self.sample_rate / 2
            )));
        }
        Ok(())
    }

    /// STFT frame count with center padding.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        1 + n_samples / self.hop
    }
}
