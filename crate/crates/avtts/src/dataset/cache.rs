//! Feature cache: per-utterance extracted features plus corpus-level
//! standardization statistics and speaker embeddings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::{
    extract_energy, extract_f0, mel_spectrogram, speaker_fingerprint, wav, AudioConfig,
    EmbeddingSource, SpeakerEmbedding,
};
use crate::dataset::{parse_alignment, Utterance};
use crate::error::{Error, Result};
use crate::text::PhonemeInventory;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub id: String,
    pub phoneme_ids: Vec<usize>,
    pub durations: Vec<usize>,
    pub n_frames: usize,
    /// n_frames x mel_bins, natural-log mel
    pub mel: Vec<f32>,
    /// raw Hz, voiced-interpolated
    pub pitch_hz: Vec<f32>,
    pub voiced: Vec<bool>,
    /// raw per-frame STFT L2
    pub energy: Vec<f32>,
    pub speaker: String,
    pub arousal: Option<f32>,
    pub valence: Option<f32>,
}

/// Corpus-level standardization. Pitch is standardized in log-Hz, energy
/// linearly; min/max are over standardized values and drive bucketization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub pitch_log_mean: f32,
    pub pitch_log_std: f32,
    pub energy_mean: f32,
    pub energy_std: f32,
    pub pitch_norm_min: f32,
    pub pitch_norm_max: f32,
    pub energy_norm_min: f32,
    pub energy_norm_max: f32,
}

impl FeatureStats {
    pub fn standardize_pitch(&self, hz: f32) -> f32 {
        (hz.max(1.0).ln() - self.pitch_log_mean) / self.pitch_log_std
    }

    pub fn destandardize_pitch(&self, z: f32) -> f32 {
        (z * self.pitch_log_std + self.pitch_log_mean).exp()
    }

    pub fn standardize_energy(&self, e: f32) -> f32 {
        (e - self.energy_mean) / self.energy_std
    }
}

#[derive(Debug, Default)]
pub struct PrepareReport {
    pub kept: Vec<String>,
    pub discarded: Vec<(String, String)>,
}

pub struct FeatureCache {
    pub entries: Vec<FeatureEntry>,
    pub stats: FeatureStats,
    pub speakers: BTreeMap<String, SpeakerEmbedding>,
}

fn entry_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.feat.json"))
}

/// Extract and validate features for every manifest utterance. Utterances
/// failing alignment or audio checks are discarded (and logged), never
/// silently trained on.
pub fn prepare(
    utts: &[Utterance],
    cfg: &AudioConfig,
    inventory: &PhonemeInventory,
    out_dir: &Path,
) -> Result<PrepareReport> {
    std::fs::create_dir_all(out_dir)?;
    let mut report = PrepareReport::default();
    let mut entries: Vec<FeatureEntry> = Vec::new();
    let mut speaker_wavs: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let mut speaker_embedding_path: BTreeMap<String, PathBuf> = BTreeMap::new();

    for utt in utts {
        match prepare_one(utt, cfg, inventory) {
            Ok(entry) => {
                speaker_wavs
                    .entry(utt.speaker.clone())
                    .or_default()
                    .push(utt.wav.clone());
                if let Some(p) = &utt.embedding_path {
                    speaker_embedding_path.insert(utt.speaker.clone(), p.clone());
                }
                report.kept.push(utt.id.clone());
                entries.push(entry);
            }
            Err(e) => report.discarded.push((utt.id.clone(), e.to_string())),
        }
    }
    if entries.is_empty() {
        return Err(Error::Data(
            "all utterances were discarded during preparation".to_string(),
        ));
    }

    // corpus standardization stats
    let mut log_pitch: Vec<f32> = Vec::new();
    let mut energies: Vec<f32> = Vec::new();
    for e in &entries {
        log_pitch.extend(e.pitch_hz.iter().map(|&h| h.max(1.0).ln()));
        energies.extend(&e.energy);
    }
    let mean = |v: &[f32]| v.iter().sum::<f32>() / v.len() as f32;
    let std = |v: &[f32], m: f32| {
        (v.iter().map(|&x| (x - m) * (x - m)).sum::<f32>() / v.len() as f32)
            .sqrt()
            .max(1e-4)
    };
    let plm = mean(&log_pitch);
    let pls = std(&log_pitch, plm);
    let em = mean(&energies);
    let es = std(&energies, em);
    let mut stats = FeatureStats {
        pitch_log_mean: plm,
        pitch_log_std: pls,
        energy_mean: em,
        energy_std: es,
        pitch_norm_min: f32::INFINITY,
        pitch_norm_max: f32::NEG_INFINITY,
        energy_norm_min: f32::INFINITY,
        energy_norm_max: f32::NEG_INFINITY,
    };
    for e in &entries {
        for &h in &e.pitch_hz {
            let z = stats.standardize_pitch(h);
            stats.pitch_norm_min = stats.pitch_norm_min.min(z);
            stats.pitch_norm_max = stats.pitch_norm_max.max(z);
        }
        for &x in &e.energy {
            let z = stats.standardize_energy(x);
            stats.energy_norm_min = stats.energy_norm_min.min(z);
            stats.energy_norm_max = stats.energy_norm_max.max(z);
        }
    }
    if stats.pitch_norm_max <= stats.pitch_norm_min {
        stats.pitch_norm_max = stats.pitch_norm_min + 1.0;
    }
    if stats.energy_norm_max <= stats.energy_norm_min {
        stats.energy_norm_max = stats.energy_norm_min + 1.0;
    }

    // one embedding per speaker: loaded if a path was given, otherwise a
    // fingerprint of the speaker's concatenated utterances
    let mut speakers: BTreeMap<String, SpeakerEmbedding> = BTreeMap::new();
    for (speaker, wavs) in &speaker_wavs {
        let emb = match speaker_embedding_path.get(speaker) {
            Some(p) => load_embedding(p)?,
            None => {
                let mut samples = Vec::new();
                for w in wavs {
                    samples.extend(wav::read_wav(w, cfg.sample_rate)?);
                }
                // tile very short speakers up to the fingerprint minimum
                let min = cfg.sample_rate as usize / 2;
                while !samples.is_empty() && samples.len() < min {
                    samples.extend_from_within(..);
                }
                speaker_fingerprint(&samples, cfg)?
            }
        };
        speakers.insert(speaker.clone(), emb);
    }

    for e in &entries {
        std::fs::write(entry_path(out_dir, &e.id), serde_json::to_vec(e)?)?;
    }
    std::fs::write(out_dir.join("stats.json"), serde_json::to_vec_pretty(&stats)?)?;
    std::fs::write(
        out_dir.join("speakers.json"),
        serde_json::to_vec(&speakers)?,
    )?;
    std::fs::write(out_dir.join("kept.json"), serde_json::to_vec(&report.kept)?)?;
    let discard_log: String = report
        .discarded
        .iter()
        .map(|(id, why)| format!("{id}\t{why}\n"))
        .collect();
    std::fs::write(out_dir.join("discards.log"), discard_log)?;
    Ok(report)
}

fn prepare_one(
    utt: &Utterance,
    cfg: &AudioConfig,
    inventory: &PhonemeInventory,
) -> Result<FeatureEntry> {
    let samples = wav::read_wav(&utt.wav, cfg.sample_rate)?;
    let align_path = utt.wav.with_extension("align");
    let durations = if align_path.exists() {
        let text = std::fs::read_to_string(&align_path)?;
        parse_alignment(&text, &utt.phonemes, cfg)?
    } else {
        utt.durations.clone()
    };
    if durations.len() != utt.phonemes.len() {
        return Err(Error::Discard(format!(
            "{} durations for {} phonemes",
            durations.len(),
            utt.phonemes.len()
        )));
    }
    let n_frames: usize = durations.iter().sum();
    let mel = mel_spectrogram(&samples, cfg)?;
    if n_frames > mel.n_frames || mel.n_frames - n_frames > 1 {
        return Err(Error::Discard(format!(
            "duration total {n_frames} inconsistent with {} mel frames",
            mel.n_frames
        )));
    }
    let pitch = extract_f0(&samples, cfg);
    let energy = extract_energy(&samples, cfg);
    let phoneme_ids: Vec<usize> = utt
        .phonemes
        .iter()
        .map(|p| inventory.id(p).unwrap_or(crate::text::UNK))
        .collect();

    Ok(FeatureEntry {
        id: utt.id.clone(),
        phoneme_ids,
        durations,
        n_frames,
        mel: mel.truncated(n_frames).frames,
        pitch_hz: pitch.f0[..n_frames].to_vec(),
        voiced: pitch.voiced[..n_frames].to_vec(),
        energy: energy.values[..n_frames].to_vec(),
        speaker: utt.speaker.clone(),
        arousal: utt.arousal,
        valence: utt.valence,
    })
}

/// Embedding file: a JSON array of 256 floats.
pub fn load_embedding(path: &Path) -> Result<SpeakerEmbedding> {
    let values: Vec<f32> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    SpeakerEmbedding::from_values(values, EmbeddingSource::Loaded)
}

pub fn load(dir: &Path) -> Result<FeatureCache> {
    let stats: FeatureStats =
        serde_json::from_str(&std::fs::read_to_string(dir.join("stats.json")).map_err(|e| {
            Error::Data(format!("feature cache {} not prepared: {e}", dir.display()))
        })?)?;
    let speakers: BTreeMap<String, SpeakerEmbedding> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("speakers.json"))?)?;
    let kept: Vec<String> = serde_json::from_str(&std::fs::read_to_string(dir.join("kept.json"))?)?;
    let mut entries = Vec::with_capacity(kept.len());
    for id in &kept {
        let e: FeatureEntry =
            serde_json::from_str(&std::fs::read_to_string(entry_path(dir, id))?)?;
        entries.push(e);
    }
    Ok(FeatureCache {
        entries,
        stats,
        speakers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::gen_synthetic_corpus;

    #[test]
    fn synthetic_corpus_prepares_without_discards() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = gen_synthetic_corpus(&dir.path().join("corpus"), 4, 2, 3, false).unwrap();
        let cache_dir = dir.path().join("cache");
        let inv = PhonemeInventory::standard();
        let report = prepare(
            &corpus.utterances,
            &AudioConfig::default(),
            &inv,
            &cache_dir,
        )
        .unwrap();
        assert_eq!(report.kept.len(), 4);
        assert!(report.discarded.is_empty(), "{:?}", report.discarded);

        let cache = load(&cache_dir).unwrap();
        assert_eq!(cache.entries.len(), 4);
        assert_eq!(cache.speakers.len(), 2);
        for e in &cache.entries {
            assert_eq!(e.mel.len(), e.n_frames * 80);
            assert_eq!(e.pitch_hz.len(), e.n_frames);
            assert_eq!(e.energy.len(), e.n_frames);
            assert_eq!(e.durations.iter().sum::<usize>(), e.n_frames);
        }
        // standardized pitch over the corpus is zero-mean-ish
        let z: Vec<f32> = cache
            .entries
            .iter()
            .flat_map(|e| e.pitch_hz.iter().map(|&h| cache.stats.standardize_pitch(h)))
            .collect();
        let m = z.iter().sum::<f32>() / z.len() as f32;
        assert!(m.abs() < 0.1, "mean standardized pitch {m}");
    }

    #[test]
    fn corrupted_alignment_is_discarded_and_logged() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = gen_synthetic_corpus(&dir.path().join("corpus"), 3, 1, 8, false).unwrap();
        // corrupt one alignment file
        let victim = corpus.utterances[1].wav.with_extension("align");
        std::fs::write(&victim, "ZZ9\t0\t0.5\n").unwrap();
        let cache_dir = dir.path().join("cache");
        let report = prepare(
            &corpus.utterances,
            &AudioConfig::default(),
            &PhonemeInventory::standard(),
            &cache_dir,
        )
        .unwrap();
        assert_eq!(report.kept.len(), 2);
        assert_eq!(report.discarded.len(), 1);
        assert_eq!(report.discarded[0].0, corpus.utterances[1].id);
        let log = std::fs::read_to_string(cache_dir.join("discards.log")).unwrap();
        assert!(log.contains(&corpus.utterances[1].id));
    }
}
