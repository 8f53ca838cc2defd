//! Synthetic corpus with exact ground truth: harmonic pseudo-phoneme
//! tones with per-speaker base F0 and optional arousal-valence
//! modulation. Every acceptance check with a learned quantity is anchored
//! to the constants defined here.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{wav, AudioConfig};
use crate::dataset::{parse_alignment, write_manifest, AffectPoint, Utterance};
use crate::error::Result;
use crate::nn::rng as crng;

/// Pseudo-phoneme symbols; a subset of the real inventory so the text
/// frontend and model share token ids.
pub const PSEUDO_PHONEMES: &[&str] = &[
    "AA1", "AE1", "AH1", "AO1", "EH1", "ER1", "IH1", "IY1", "OW1", "UW1",
];

/// Arousal raises F0 and amplitude and shortens durations; valence tilts
/// the F0 contour. These constants define the oracle that the trained
/// prosody controller is checked against.
pub const F0_AROUSAL_GAIN: f32 = 0.3;
pub const AMP_AROUSAL_GAIN: f32 = 0.5;
pub const DUR_AROUSAL_GAIN: f32 = -0.2;
pub const F0_VALENCE_SLOPE: f32 = 20.0; // Hz per second at |v_norm - 0.5| = 1

/// Apply affect modulation to a phoneme's base parameters.
/// Returns (f0, amplitude, duration_ms, slope_hz_per_sec).
pub fn modulate(
    base_f0: f32,
    amp: f32,
    dur_ms: f32,
    affect: Option<AffectPoint>,
) -> (f32, f32, f32, f32) {
    match affect {
        None => (base_f0, amp, dur_ms, 0.0),
        Some(p) => {
            let (a, v) = p.normalized();
            (
                base_f0 * (1.0 + F0_AROUSAL_GAIN * a),
                amp * (1.0 + AMP_AROUSAL_GAIN * a),
                dur_ms * (1.0 + DUR_AROUSAL_GAIN * a),
                (v - 0.5) * F0_VALENCE_SLOPE,
            )
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtteranceTruth {
    pub id: String,
    /// Ground-truth F0 at each frame center, in Hz.
    pub frame_f0: Vec<f32>,
    pub base_f0: f32,
    pub mean_f0: f32,
}

pub struct SyntheticCorpus {
    pub manifest_path: PathBuf,
    pub utterances: Vec<Utterance>,
    pub truth: Vec<UtteranceTruth>,
    /// One reference wav per speaker (the first generated).
    pub speaker_wavs: Vec<PathBuf>,
}

/// Per-phoneme harmonic weights; fixed per symbol so each pseudo-phoneme
/// has a stable timbre.
fn harmonics(phoneme_idx: usize) -> Vec<f32> {
    (1..=5)
        .map(|h| {
            let u = crng::uniform01(0xF0_0D, (phoneme_idx * 8 + h) as u64) as f32;
            (0.3 + 0.7 * u) / h as f32
        })
        .collect()
}

/// Generate `n_utts` utterances across `n_speakers` voices into `out`.
/// Deterministic per seed. With `affect`, every utterance carries an
/// arousal-valence point and the modulation above.
pub fn gen_synthetic_corpus(
    out: &Path,
    n_utts: usize,
    n_speakers: usize,
    seed: u64,
    affect: bool,
) -> Result<SyntheticCorpus> {
    assert!(n_utts >= 1, "need at least one utterance");
    assert!(n_speakers >= 1, "need at least one speaker");
    let cfg = AudioConfig::default();
    let sr = cfg.sample_rate as f32;
    std::fs::create_dir_all(out)?;

    let base_f0s: Vec<f32> = {
        let mut rng = ChaCha8Rng::seed_from_u64(crng::derive_seed(seed, &[1]));
        (0..n_speakers).map(|_| rng.gen_range(100.0..300.0)).collect()
    };

    let mut utterances = Vec::with_capacity(n_utts);
    let mut truth = Vec::with_capacity(n_utts);
    let mut speaker_wavs: Vec<Option<PathBuf>> = vec![None; n_speakers];

    for u in 0..n_utts {
        let mut rng = ChaCha8Rng::seed_from_u64(crng::derive_seed(seed, &[2, u as u64]));
        let speaker = u % n_speakers;
        let n_ph = rng.gen_range(3..=8);
        let point = affect.then(|| {
            AffectPoint::new(rng.gen_range(1.0..=7.0), rng.gen_range(1.0..=7.0))
        });

        let mut phonemes = Vec::with_capacity(n_ph);
        let mut segments: Vec<(usize, usize, f32)> = Vec::new(); // (phoneme idx, samples, amp)
        for _ in 0..n_ph {
            let p_idx = rng.gen_range(0..PSEUDO_PHONEMES.len());
            let dur_ms = rng.gen_range(80.0..250.0f32);
            let amp = rng.gen_range(0.2..0.8f32);
            let (_, amp, dur_ms, _) =
                modulate(1.0, amp, dur_ms, point);
            let n_samples = (dur_ms / 1000.0 * sr).round() as usize;
            phonemes.push(PSEUDO_PHONEMES[p_idx].to_string());
            segments.push((p_idx, n_samples, amp.min(0.95)));
        }

        let (f0_base, _, _, slope) = modulate(base_f0s[speaker], 1.0, 1.0, point);
        let total_samples: usize = segments.iter().map(|s| s.1).sum();
        let total_secs = total_samples as f32 / sr;
        // slope is centered so valence does not move the utterance mean F0
        let f0_at = |t_sec: f32| f0_base + slope * (t_sec - total_secs / 2.0);

        // synthesize with per-sample phase integration
        let mut samples = Vec::with_capacity(total_samples);
        let mut phase = 0.0f32;
        let fade = (0.005 * sr) as usize;
        for &(p_idx, n_samples, amp) in &segments {
            let weights = harmonics(p_idx);
            let start = samples.len();
            for i in 0..n_samples {
                let t = (start + i) as f32 / sr;
                phase += 2.0 * std::f32::consts::PI * f0_at(t) / sr;
                let mut s = 0.0f32;
                for (h, &w) in weights.iter().enumerate() {
                    s += w * (phase * (h + 1) as f32).sin();
                }
                let env = (i.min(n_samples - 1 - i).min(fade)) as f32 / fade as f32;
                samples.push(amp * env.min(1.0) * s * 0.5);
            }
        }

        // alignment from exact sample boundaries
        let id = format!("utt{u:04}");
        let mut align = String::new();
        let mut cursor = 0usize;
        for (ph, &(_, n_samples, _)) in phonemes.iter().zip(&segments) {
            let start = cursor as f64 / sr as f64;
            cursor += n_samples;
            let end = cursor as f64 / sr as f64;
            align.push_str(&format!("{ph}\t{start}\t{end}\n"));
        }
        let durations = parse_alignment(&align, &phonemes, &cfg)?;

        let wav_path = out.join(format!("{id}.wav"));
        wav::write_wav(&wav_path, &samples, cfg.sample_rate)?;
        std::fs::write(out.join(format!("{id}.align")), &align)?;
        if speaker_wavs[speaker].is_none() {
            speaker_wavs[speaker] = Some(wav_path.clone());
        }

        let n_frames: usize = durations.iter().sum();
        let frame_f0: Vec<f32> = (0..n_frames)
            .map(|f| f0_at(f as f32 * cfg.hop as f32 / sr))
            .collect();
        let mean_f0 = frame_f0.iter().sum::<f32>() / n_frames.max(1) as f32;
        truth.push(UtteranceTruth {
            id: id.clone(),
            frame_f0,
            base_f0: f0_base,
            mean_f0,
        });

        utterances.push(Utterance {
            id,
            wav: wav_path,
            phonemes,
            durations,
            speaker: format!("spk{speaker}"),
            arousal: point.map(|p| p.arousal),
            valence: point.map(|p| p.valence),
            embedding_path: None,
        });
    }

    let manifest_path = out.join("manifest.jsonl");
    write_manifest(&manifest_path, &utterances)?;
    let mut truth_file = std::fs::File::create(out.join("truth.jsonl"))?;
    for t in &truth {
        use std::io::Write;
        serde_json::to_writer(&mut truth_file, t)?;
        writeln!(truth_file)?;
    }

    Ok(SyntheticCorpus {
        manifest_path,
        utterances,
        truth,
        speaker_wavs: speaker_wavs.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::extract_f0;

    #[test]
    fn regeneration_is_bit_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = gen_synthetic_corpus(d1.path(), 3, 2, 11, true).unwrap();
        let b = gen_synthetic_corpus(d2.path(), 3, 2, 11, true).unwrap();
        for (ua, ub) in a.utterances.iter().zip(&b.utterances) {
            assert_eq!(ua.phonemes, ub.phonemes);
            assert_eq!(ua.durations, ub.durations);
            assert_eq!(
                std::fs::read(&ua.wav).unwrap(),
                std::fs::read(&ub.wav).unwrap()
            );
        }
    }

    #[test]
    fn arousal_scales_mean_f0_by_1_3() {
        let calm = modulate(200.0, 0.5, 100.0, Some(AffectPoint::new(1.0, 4.0)));
        let excited = modulate(200.0, 0.5, 100.0, Some(AffectPoint::new(7.0, 4.0)));
        let ratio = excited.0 / calm.0;
        assert!((ratio - 1.3).abs() < 0.01, "ratio {ratio}");
        // amplitude up, durations down
        assert!((excited.1 / calm.1 - 1.5).abs() < 0.01);
        assert!((excited.2 / calm.2 - 0.8).abs() < 0.01);
    }

    #[test]
    fn manifests_parse_without_discard_and_match_truth() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = gen_synthetic_corpus(dir.path(), 4, 2, 5, false).unwrap();
        let cfg = AudioConfig::default();
        for (utt, truth) in corpus.utterances.iter().zip(&corpus.truth) {
            let align = std::fs::read_to_string(
                utt.wav.with_extension("align"),
            )
            .unwrap();
            let durations = parse_alignment(&align, &utt.phonemes, &cfg).unwrap();
            assert_eq!(durations, utt.durations);

            // extracted F0 matches stored ground truth on voiced frames
            let samples = wav::read_wav(&utt.wav, cfg.sample_rate).unwrap();
            let pitch = extract_f0(&samples, &cfg);
            let n = utt.total_frames().min(pitch.f0.len());
            let mut voiced_checked = 0;
            for f in 0..n {
                if pitch.voiced[f] {
                    let err = (pitch.f0[f] - truth.frame_f0[f]).abs();
                    assert!(err <= 5.0, "{} frame {f}: err {err}", utt.id);
                    voiced_checked += 1;
                }
            }
            assert!(voiced_checked > n / 2, "{}: too few voiced frames", utt.id);

            // frame budget consistent with the wav
            let mel_frames = cfg.frame_count(samples.len());
            assert!(utt.total_frames() <= mel_frames);
            assert!(mel_frames - utt.total_frames() <= 1);
        }
    }
}
