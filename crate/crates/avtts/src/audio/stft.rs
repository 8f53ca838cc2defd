//! STFT, mel filterbank, and frame-energy extraction.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::AudioConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    /// T x mel_bins, natural-log magnitudes, row-major.
    pub frames: Vec<f32>,
    pub n_frames: usize,
    pub n_bins: usize,
}

impl MelSpectrogram {
    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.n_bins..(t + 1) * self.n_bins]
    }

    pub fn truncated(&self, n_frames: usize) -> MelSpectrogram {
        assert!(n_frames <= self.n_frames);
        MelSpectrogram {
            frames: self.frames[..n_frames * self.n_bins].to_vec(),
            n_frames,
            n_bins: self.n_bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameEnergy {
    /// Per-frame L2 norm of the STFT magnitude.
    pub values: Vec<f32>,
}

pub(crate) fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let x = std::f32::consts::PI * i as f32 / n as f32;
            x.sin() * x.sin()
        })
        .collect()
}

/// Complex STFT with zero center padding: T = 1 + floor(len/hop) frames of
/// fft_size/2 + 1 bins.
pub(crate) fn stft_complex(samples: &[f32], cfg: &AudioConfig) -> Vec<Vec<Complex<f32>>> {
    let n_fft = cfg.fft_size;
    let half = n_fft / 2;
    let window = hann(n_fft);
    let n_frames = cfg.frame_count(samples.len());
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n_fft);

    let mut out = Vec::with_capacity(n_frames);
    let mut buf = vec![Complex::new(0.0f32, 0.0); n_fft];
    for t in 0..n_frames {
        let center = t * cfg.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            let src = center as isize + i as isize - half as isize;
            let s = if src >= 0 && (src as usize) < samples.len() {
                samples[src as usize]
            } else {
                0.0
            };
            *b = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..half + 1].to_vec());
    }
    out
}

/// Magnitude spectrogram, T x (fft_size/2 + 1).
pub fn stft_magnitudes(samples: &[f32], cfg: &AudioConfig) -> Vec<Vec<f32>> {
    stft_complex(samples, cfg)
        .into_iter()
        .map(|frame| frame.into_iter().map(|c| c.norm()).collect())
        .collect()
}

fn hz_to_mel(f: f32) -> f32 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f32) -> f32 {
    700.0 * (10.0f32.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, mel_bins x (fft_size/2 + 1).
pub(crate) fn mel_filterbank(cfg: &AudioConfig) -> Vec<f32> {
    let n_bins = cfg.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(cfg.fmin);
    let mel_hi = hz_to_mel(cfg.fmax);
    let points: Vec<f32> = (0..cfg.mel_bins + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f32 / (cfg.mel_bins + 1) as f32))
        .collect();
    let bin_hz = cfg.sample_rate as f32 / cfg.fft_size as f32;
    let mut fb = vec![0.0f32; cfg.mel_bins * n_bins];
    for m in 0..cfg.mel_bins {
        let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
        for k in 0..n_bins {
            let f = k as f32 * bin_hz;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= mid {
                (f - lo) / (mid - lo)
            } else {
                (hi - f) / (hi - mid)
            };
            fb[m * n_bins + k] = w;
        }
    }
    fb
}

pub fn mel_spectrogram(samples: &[f32], cfg: &AudioConfig) -> Result<MelSpectrogram> {
    if samples.is_empty() {
        return Err(Error::Audio("empty audio".to_string()));
    }
    let mags = stft_magnitudes(samples, cfg);
    let n_bins = cfg.fft_size / 2 + 1;
    let fb = mel_filterbank(cfg);
    let mut frames = Vec::with_capacity(mags.len() * cfg.mel_bins);
    for mag in &mags {
        for m in 0..cfg.mel_bins {
            let row = &fb[m * n_bins..(m + 1) * n_bins];
            let v: f32 = row.iter().zip(mag).map(|(&w, &x)| w * x).sum();
            frames.push(v.max(cfg.log_floor).ln());
        }
    }
    Ok(MelSpectrogram {
        n_frames: mags.len(),
        n_bins: cfg.mel_bins,
        frames,
    })
}

pub fn extract_energy(samples: &[f32], cfg: &AudioConfig) -> FrameEnergy {
    let values = stft_magnitudes(samples, cfg)
        .iter()
        .map(|mag| mag.iter().map(|&x| x * x).sum::<f32>().sqrt())
        .collect();
    FrameEnergy { values }
}

#[cfg(test)]
pub(crate) fn sine(freq: f32, secs: f32, amp: f32, sr: u32) -> Vec<f32> {
    let n = (secs * sr as f32) as usize;
    (0..n)
        .map(|i| amp * (2.0 * std::f32::consts::PI * freq * i as f32 / sr as f32).sin())
        .collect()
}
