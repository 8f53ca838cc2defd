//! Mel-to-waveform rendering: non-negative least squares against the mel
//! filterbank followed by Griffin-Lim phase recovery.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::stft::{hann, mel_filterbank, stft_complex, MelSpectrogram};
use crate::audio::AudioConfig;
use crate::nn::rng;

/// Invert the mel filterbank per frame with multiplicative NNLS updates:
/// s <- s * (A^T m) / (A^T A s).
fn mel_to_linear(mel: &MelSpectrogram, cfg: &AudioConfig) -> Vec<f32> {
    let n_lin = cfg.fft_size / 2 + 1;
    let n_mel = cfg.mel_bins;
    let t = mel.n_frames;
    let fb = mel_filterbank(cfg); // (n_mel, n_lin)

    // target magnitudes
    let m: Vec<f32> = mel.frames.iter().map(|&v| v.exp()).collect();

    // numerator term N = M @ A, init S = N
    let mut num = vec![0.0f32; t * n_lin];
    for ti in 0..t {
        for b in 0..n_mel {
            let w = m[ti * n_mel + b];
            let row = &fb[b * n_lin..(b + 1) * n_lin];
            let out = &mut num[ti * n_lin..(ti + 1) * n_lin];
            for (o, &f) in out.iter_mut().zip(row) {
                *o += w * f;
            }
        }
    }
    let mut s = num.clone();

    // gram matrix G = A^T A, (n_lin, n_lin)
    let mut gram = vec![0.0f32; n_lin * n_lin];
    for b in 0..n_mel {
        let row = &fb[b * n_lin..(b + 1) * n_lin];
        for (i, &fi) in row.iter().enumerate() {
            if fi == 0.0 {
                continue;
            }
            let g = &mut gram[i * n_lin..(i + 1) * n_lin];
            for (gj, &fj) in g.iter_mut().zip(row) {
                *gj += fi * fj;
            }
        }
    }

    let mut denom = vec![0.0f32; n_lin];
    for _ in 0..30 {
        for ti in 0..t {
            let srow = &s[ti * n_lin..(ti + 1) * n_lin];
            denom.iter_mut().for_each(|d| *d = 0.0);
            for (i, &sv) in srow.iter().enumerate() {
                if sv == 0.0 {
                    continue;
                }
                let g = &gram[i * n_lin..(i + 1) * n_lin];
                for (d, &gj) in denom.iter_mut().zip(g) {
                    *d += sv * gj;
                }
            }
            let srow = &mut s[ti * n_lin..(ti + 1) * n_lin];
            let nrow = &num[ti * n_lin..(ti + 1) * n_lin];
            for i in 0..n_lin {
                srow[i] *= nrow[i] / (denom[i] + 1e-12);
            }
        }
    }
    s
}

/// Weighted overlap-add inverse STFT; output is (T-1)*hop samples.
fn istft(frames: &[Vec<Complex<f32>>], cfg: &AudioConfig) -> Vec<f32> {
    let n_fft = cfg.fft_size;
    let half = n_fft / 2;
    let t = frames.len();
    let padded_len = (t - 1) * cfg.hop + n_fft;
    let window = hann(n_fft);
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n_fft);

    let mut acc = vec![0.0f32; padded_len];
    let mut wsum = vec![0.0f32; padded_len];
    let mut buf = vec![Complex::new(0.0f32, 0.0); n_fft];
    for (ti, frame) in frames.iter().enumerate() {
        buf[..half + 1].copy_from_slice(frame);
        for k in 1..half {
            buf[n_fft - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let off = ti * cfg.hop;
        for i in 0..n_fft {
            let x = buf[i].re / n_fft as f32;
            acc[off + i] += x * window[i];
            wsum[off + i] += window[i] * window[i];
        }
    }
    let out_len = (t - 1) * cfg.hop;
    (0..out_len)
        .map(|i| {
            let j = i + half;
            if wsum[j] > 1e-9 {
                acc[j] / wsum[j]
            } else {
                0.0
            }
        })
        .collect()
}

/// Iterative phase recovery from a log-mel spectrogram. Deterministic per
/// seed; output length is about (T-1)*hop samples.
pub fn griffin_lim(mel: &MelSpectrogram, cfg: &AudioConfig, iters: usize, seed: u64) -> Vec<f32> {
    if mel.n_frames < 2 {
        return Vec::new();
    }
    let n_lin = cfg.fft_size / 2 + 1;
    let mags = mel_to_linear(mel, cfg);

    // seeded random initial phases
    let phase_seed = rng::derive_seed(seed, &[0x47_4c]);
    let mut frames: Vec<Vec<Complex<f32>>> = (0..mel.n_frames)
        .map(|ti| {
            (0..n_lin)
                .map(|k| {
                    let u = rng::uniform01(phase_seed, (ti * n_lin + k) as u64) as f32;
                    let phi = 2.0 * std::f32::consts::PI * u;
                    Complex::from_polar(mags[ti * n_lin + k], phi)
                })
                .collect()
        })
        .collect();

    let mut samples = istft(&frames, cfg);
    for _ in 0..iters {
        let est = stft_complex(&samples, cfg);
        let n = est.len().min(frames.len());
        for ti in 0..n {
            for k in 0..n_lin {
                let c = est[ti][k];
                let mag = mags[ti * n_lin + k];
                frames[ti][k] = if c.norm() > 1e-12 {
                    c / c.norm() * mag
                } else {
                    Complex::new(mag, 0.0)
                };
            }
        }
        samples = istft(&frames, cfg);
    }
    samples
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::stft::{mel_spectrogram, sine};

    fn dominant_freq(samples: &[f32], sr: u32) -> f32 {
        let n = 16384.min(samples.len());
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<Complex<f32>> = samples[..n]
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .collect();
        fft.process(&mut buf);
        let argmax = buf[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap()
            .0;
        argmax as f32 * sr as f32 / n as f32
    }

    fn pearson(a: &[f32], b: &[f32]) -> f32 {
        let n = a.len() as f32;
        let (ma, mb) = (
            a.iter().sum::<f32>() / n,
            b.iter().sum::<f32>() / n,
        );
        let (mut sxy, mut sxx, mut syy) = (0.0f32, 0.0f32, 0.0f32);
        for (x, y) in a.iter().zip(b) {
            sxy += (x - ma) * (y - mb);
            sxx += (x - ma) * (x - ma);
            syy += (y - mb) * (y - mb);
        }
        sxy / (sxx.sqrt() * syy.sqrt() + 1e-12)
    }

    #[test]
    fn tone_round_trip_recovers_dominant_frequency() {
        let cfg = AudioConfig::default();
        let tone = sine(220.0, 1.0, 0.6, cfg.sample_rate);
        let mel = mel_spectrogram(&tone, &cfg).unwrap();
        let rec = griffin_lim(&mel, &cfg, 60, 17);
        assert!(rec.len() >= (mel.n_frames - 1) * cfg.hop);
        let f = dominant_freq(&rec, cfg.sample_rate);
        assert!((f - 220.0).abs() <= 10.0, "dominant {f} Hz");
    }

    #[test]
    fn mel_round_trip_correlation() {
        let cfg = AudioConfig::default();
        let tone = sine(220.0, 1.0, 0.6, cfg.sample_rate);
        let mel = mel_spectrogram(&tone, &cfg).unwrap();
        let rec = griffin_lim(&mel, &cfg, 60, 17);
        let mel2 = mel_spectrogram(&rec, &cfg).unwrap();
        let t = mel.n_frames.min(mel2.n_frames);
        let mut rs = Vec::new();
        for ti in 2..t - 2 {
            rs.push(pearson(mel.frame(ti), mel2.frame(ti)));
        }
        let mean_r = rs.iter().sum::<f32>() / rs.len() as f32;
        assert!(mean_r > 0.9, "mean per-frame r = {mean_r}");
    }

    #[test]
    fn all_floor_mel_is_near_silent() {
        let cfg = AudioConfig::default();
        let t = 50;
        let mel = MelSpectrogram {
            frames: vec![cfg.log_floor.ln(); t * cfg.mel_bins],
            n_frames: t,
            n_bins: cfg.mel_bins,
        };
        let rec = griffin_lim(&mel, &cfg, 10, 3);
        let rms = (rec.iter().map(|&x| x * x).sum::<f32>() / rec.len() as f32).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = AudioConfig::default();
        let tone = sine(150.0, 0.3, 0.5, cfg.sample_rate);
        let mel = mel_spectrogram(&tone, &cfg).unwrap();
        let a = griffin_lim(&mel, &cfg, 5, 9);
        let b = griffin_lim(&mel, &cfg, 5, 9);
        assert_eq!(a, b);
    }
}
