//! Frame-level F0 tracking: YIN-style cumulative mean normalized
//! autocorrelation with parabolic refinement and linear interpolation
//! over unvoiced gaps.

use crate::audio::stft::hann;
use crate::audio::AudioConfig;

pub const F0_MIN: f32 = 60.0;
pub const F0_MAX: f32 = 500.0;
const PERIODICITY_THRESHOLD: f32 = 0.45;

#[derive(Debug, Clone, PartialEq)]
pub struct FramePitch {
    /// Per-frame F0 in Hz; unvoiced frames carry interpolated values.
    pub f0: Vec<f32>,
    pub voiced: Vec<bool>,
}

impl FramePitch {
    pub fn any_voiced(&self) -> bool {
        self.voiced.iter().any(|&v| v)
    }
}

/// YIN difference + cumulative mean normalization for one analysis window.
/// Returns (f0, periodicity minimum) or None if the window is silent.
fn yin_frame(window: &[f32], sr: f32) -> Option<(f32, f32)> {
    let tau_min = (sr / F0_MAX).floor() as usize;
    let tau_max = (sr / F0_MIN).ceil() as usize;
    if window.len() < tau_max + tau_min {
        return None;
    }
    let compare_len = window.len() - tau_max;

    // d(tau), fixed comparison length so all lags are on the same scale
    let mut d = vec![0.0f64; tau_max + 1];
    for tau in 1..=tau_max {
        let mut acc = 0.0f64;
        for i in 0..compare_len {
            let diff = (window[i] - window[i + tau]) as f64;
            acc += diff * diff;
        }
        d[tau] = acc;
    }

    // cumulative mean normalized difference d'
    let mut dprime = vec![1.0f64; tau_max + 1];
    let mut running = 0.0f64;
    for tau in 1..=tau_max {
        running += d[tau];
        dprime[tau] = if running > 0.0 {
            d[tau] * tau as f64 / running
        } else {
            1.0
        };
    }

    if running <= f64::EPSILON {
        return None; // silence
    }

    // first dip below threshold, else global minimum in band
    let mut best_tau = 0usize;
    for tau in tau_min..=tau_max {
        if dprime[tau] < PERIODICITY_THRESHOLD as f64 {
            let mut t = tau;
            while t + 1 <= tau_max && dprime[t + 1] < dprime[t] {
                t += 1;
            }
            best_tau = t;
            break;
        }
    }
    if best_tau == 0 {
        let mut min_v = f64::INFINITY;
        for tau in tau_min..=tau_max {
            if dprime[tau] < min_v {
                min_v = dprime[tau];
                best_tau = tau;
            }
        }
    }

    // parabolic refinement around the minimum
    let tau = best_tau;
    let refined = if tau > tau_min && tau < tau_max {
        let (a, b, c) = (dprime[tau - 1], dprime[tau], dprime[tau + 1]);
        let denom = a - 2.0 * b + c;
        if denom.abs() > 1e-12 {
            tau as f64 + 0.5 * (a - c) / denom
        } else {
            tau as f64
        }
    } else {
        tau as f64
    };

    let f0 = (sr as f64 / refined) as f32;
    Some((f0.clamp(F0_MIN, F0_MAX), dprime[tau] as f32))
}

/// Frame-aligned F0 track over the same frame grid as the STFT.
pub fn extract_f0(samples: &[f32], cfg: &AudioConfig) -> FramePitch {
    let n_frames = cfg.frame_count(samples.len());
    let sr = cfg.sample_rate as f32;
    let win_len = cfg.fft_size;
    let half = win_len / 2;
    let taper = hann(win_len);

    let mut f0 = vec![0.0f32; n_frames];
    let mut voiced = vec![false; n_frames];
    let mut window = vec![0.0f32; win_len];
    for t in 0..n_frames {
        let center = t * cfg.hop;
        for (i, w) in window.iter_mut().enumerate() {
            let src = center as isize + i as isize - half as isize;
            *w = if src >= 0 && (src as usize) < samples.len() {
                samples[src as usize] * taper[i]
            } else {
                0.0
            };
        }
        if let Some((hz, dp)) = yin_frame(&window, sr) {
            if dp < PERIODICITY_THRESHOLD {
                f0[t] = hz;
                voiced[t] = true;
            }
        }
    }

    interpolate_unvoiced(&mut f0, &voiced);
    FramePitch { f0, voiced }
}

/// Linear interpolation over unvoiced gaps; edges hold the nearest voiced
/// value. A fully unvoiced track is set to the search-band midpoint.
fn interpolate_unvoiced(f0: &mut [f32], voiced: &[bool]) {
    let voiced_idx: Vec<usize> = (0..f0.len()).filter(|&i| voiced[i]).collect();
    if voiced_idx.is_empty() {
        let mid = (F0_MIN + F0_MAX) / 2.0;
        f0.iter_mut().for_each(|v| *v = mid);
        return;
    }
    for i in 0..f0.len() {
        if voiced[i] {
            continue;
        }
        let prev = voiced_idx.iter().rev().find(|&&j| j < i).copied();
        let next = voiced_idx.iter().find(|&&j| j > i).copied();
        f0[i] = match (prev, next) {
            (Some(p), Some(n)) => {
                let w = (i - p) as f32 / (n - p) as f32;
                f0[p] * (1.0 - w) + f0[n] * w
            }
            (Some(p), None) => f0[p],
            (None, Some(n)) => f0[n],
            (None, None) => unreachable!(),
        };
    }
}
