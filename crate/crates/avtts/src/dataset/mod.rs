//! Corpus handling: JSON-Lines manifests, forced-alignment ingestion with
//! the discard rule, deterministic batching, and a synthetic corpus with
//! known ground truth.

mod alignment;
mod batch;
pub mod cache;
mod synthetic;

pub use alignment::parse_alignment;
pub use batch::make_batches;
pub use synthetic::{gen_synthetic_corpus, modulate, SyntheticCorpus, UtteranceTruth};

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw arousal/valence on the 1-7 annotation scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffectPoint {
    pub arousal: f32,
    pub valence: f32,
}

impl AffectPoint {
    /// Clamps out-of-range raw values into [1, 7].
    pub fn new(arousal: f32, valence: f32) -> Self {
        AffectPoint {
            arousal: arousal.clamp(1.0, 7.0),
            valence: valence.clamp(1.0, 7.0),
        }
    }

    pub fn was_clamped(arousal: f32, valence: f32) -> bool {
        !(1.0..=7.0).contains(&arousal) || !(1.0..=7.0).contains(&valence)
    }

    /// (a-1)/6, (v-1)/6 in [0, 1].
    pub fn normalized(&self) -> (f32, f32) {
        ((self.arousal - 1.0) / 6.0, (self.valence - 1.0) / 6.0)
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub wav: PathBuf,
    pub phonemes: Vec<String>,
    pub durations: Vec<usize>,
    pub speaker: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arousal: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valence: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_path: Option<PathBuf>,
}

impl Utterance {
    pub fn affect(&self) -> Option<AffectPoint> {
        match (self.arousal, self.valence) {
            (Some(a), Some(v)) => Some(AffectPoint::new(a, v)),
            _ => None,
        }
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }
}

pub fn read_manifest(path: &Path) -> Result<Vec<Utterance>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open manifest {}: {e}", path.display())))?;
    let mut utts = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt: Utterance = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("manifest line {}: {e}", lineno + 1))
        })?;
        utts.push(utt);
    }
    if utts.is_empty() {
        return Err(Error::Data(format!("manifest {} is empty", path.display())));
    }
    Ok(utts)
}

pub fn write_manifest(path: &Path, utts: &[Utterance]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for utt in utts {
        serde_json::to_writer(&mut f, utt)?;
        writeln!(f)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affect_point_clamped_and_normalized() {
        let p = AffectPoint::new(0.0, 9.0);
        assert_eq!(p.arousal, 1.0);
        assert_eq!(p.valence, 7.0);
        assert_eq!(p.normalized(), (0.0, 1.0));
        let mid = AffectPoint::new(4.0, 4.0);
        assert_eq!(mid.normalized(), (0.5, 0.5));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let utts = vec![Utterance {
            id: "u0".into(),
            wav: "u0.wav".into(),
            phonemes: vec!["AA1".into(), "IY1".into()],
            durations: vec![10, 12],
            speaker: "spk0".into(),
            arousal: Some(3.0),
            valence: Some(5.0),
            embedding_path: None,
        }];
        write_manifest(&path, &utts).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), utts);
    }
}
