//! Forced-alignment ingestion. Interval ends are rounded to frame
//! boundaries so per-phoneme durations always sum exactly to the final
//! boundary; inconsistent alignments discard the sample.

use crate::audio::AudioConfig;
use crate::error::{Error, Result};

/// One `phoneme<TAB>start_sec<TAB>end_sec` interval per line.
/// The aligner may drop phonemes (duration 0 is assigned), but more than
/// 10% missing, any label disagreeing with the transcript, or
/// overlapping/retrograde intervals discard the sample.
pub fn parse_alignment(
    text: &str,
    transcript: &[String],
    cfg: &AudioConfig,
) -> Result<Vec<usize>> {
    let mut intervals: Vec<(String, f64, f64)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(Error::Discard(format!(
                "alignment line {}: expected 'phoneme<TAB>start<TAB>end'",
                lineno + 1
            )));
        }
        let start: f64 = parts[1]
            .parse()
            .map_err(|_| Error::Discard(format!("alignment line {}: bad start time", lineno + 1)))?;
        let end: f64 = parts[2]
            .parse()
            .map_err(|_| Error::Discard(format!("alignment line {}: bad end time", lineno + 1)))?;
        intervals.push((parts[0].to_string(), start, end));
    }
    if intervals.is_empty() {
        return Err(Error::Discard("alignment file has no intervals".to_string()));
    }

    // contiguity and monotonicity
    for (i, (label, start, end)) in intervals.iter().enumerate() {
        if end < start {
            return Err(Error::Discard(format!(
                "retrograde interval for '{label}': [{start}, {end}]"
            )));
        }
        if i > 0 {
            let prev_end = intervals[i - 1].2;
            if (start - prev_end).abs() > 1e-6 {
                return Err(Error::Discard(format!(
                    "interval for '{label}' starts at {start} but previous ends at {prev_end}"
                )));
            }
        }
    }

    // match interval labels against the transcript in order; skipped
    // transcript phonemes get zero duration
    let frames_per_sec = cfg.sample_rate as f64 / cfg.hop as f64;
    let to_boundary = |t: f64| (t * frames_per_sec).round() as i64;

    let mut durations = vec![0usize; transcript.len()];
    let mut pos = 0usize;
    let mut prev_boundary = to_boundary(intervals[0].1);
    for (label, _, end) in &intervals {
        let found = transcript[pos..].iter().position(|p| p == label);
        let Some(offset) = found else {
            return Err(Error::Discard(format!(
                "alignment label '{label}' does not match transcript"
            )));
        };
        pos += offset;
        let boundary = to_boundary(*end);
        if boundary < prev_boundary {
            return Err(Error::Discard(format!(
                "retrograde boundary at '{label}'"
            )));
        }
        durations[pos] = (boundary - prev_boundary) as usize;
        prev_boundary = boundary;
        pos += 1;
    }

    let missing = transcript.len() - intervals.len();
    if missing * 10 > transcript.len() {
        return Err(Error::Discard(format!(
            "{missing} of {} phonemes missing from alignment",
            transcript.len()
        )));
    }
    Ok(durations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transcript(labels: &[&str]) -> Vec<String> {
        labels.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn boundary_rounding_example() {
        // [0, 0.1), [0.1, 0.25), [0.25, 0.5) at 22050/256 -> [9, 13, 21]
        let cfg = AudioConfig::default();
        let text = "AA1\t0\t0.1\nIY1\t0.1\t0.25\nUW1\t0.25\t0.5\n";
        let durations =
            parse_alignment(text, &transcript(&["AA1", "IY1", "UW1"]), &cfg).unwrap();
        assert_eq!(durations, vec![9, 13, 21]);
        assert_eq!(durations.iter().sum::<usize>(), 43);
    }

    #[test]
    fn single_interval_covers_whole_file() {
        let cfg = AudioConfig::default();
        let text = "AA1\t0\t1.0\n";
        let durations = parse_alignment(text, &transcript(&["AA1"]), &cfg).unwrap();
        assert_eq!(durations, vec![86]); // round(1.0 * 22050 / 256)
    }

    #[test]
    fn label_mismatch_discards() {
        let cfg = AudioConfig::default();
        let text = "AA1\t0\t0.1\nOW1\t0.1\t0.2\n";
        let err = parse_alignment(text, &transcript(&["AA1", "IY1"]), &cfg).unwrap_err();
        assert!(matches!(err, Error::Discard(_)), "{err}");
    }

    #[test]
    fn overlap_discards() {
        let cfg = AudioConfig::default();
        let text = "AA1\t0\t0.2\nIY1\t0.1\t0.3\n";
        assert!(matches!(
            parse_alignment(text, &transcript(&["AA1", "IY1"]), &cfg),
            Err(Error::Discard(_))
        ));
    }

    #[test]
    fn retrograde_discards() {
        let cfg = AudioConfig::default();
        let text = "AA1\t0.3\t0.1\n";
        assert!(matches!(
            parse_alignment(text, &transcript(&["AA1"]), &cfg),
            Err(Error::Discard(_))
        ));
    }

    #[test]
    fn few_missing_phonemes_get_zero_duration() {
        let cfg = AudioConfig::default();
        // 1 of 12 missing (8%) is tolerated
        let labels: Vec<String> = (0..12).map(|i| format!("P{i}")).collect();
        let mut text = String::new();
        let mut t = 0.0;
        for (i, l) in labels.iter().enumerate() {
            if i == 5 {
                continue; // dropped by the aligner
            }
            text.push_str(&format!("{l}\t{t}\t{}\n", t + 0.1));
            t += 0.1;
        }
        let durations = parse_alignment(&text, &labels, &cfg).unwrap();
        assert_eq!(durations.len(), 12);
        assert_eq!(durations[5], 0);
        assert!(durations.iter().sum::<usize>() > 0);
    }

    #[test]
    fn too_many_missing_discards() {
        let cfg = AudioConfig::default();
        let labels: Vec<String> = (0..10).map(|i| format!("P{i}")).collect();
        // only 7 of 10 aligned (30% missing)
        let mut text = String::new();
        let mut t = 0.0;
        for l in labels.iter().take(7) {
            text.push_str(&format!("{l}\t{t}\t{}\n", t + 0.1));
            t += 0.1;
        }
        assert!(matches!(
            parse_alignment(&text, &labels, &cfg),
            Err(Error::Discard(_))
        ));
    }
}
