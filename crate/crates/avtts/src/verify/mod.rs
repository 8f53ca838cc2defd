//! The acceptance suite: ten executable criteria covering gradients, DSP
//! oracles, routing/freeze invariants, and end-to-end training behavior
//! on the synthetic corpus. Each criterion reports one pass/fail line;
//! the CLI `verify` command and the acceptance test both run these.

pub mod gradcheck;

pub use gradcheck::{check_gradients, op_checks, test_tensor, FD_TOLERANCE};

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{
    extract_f0, griffin_lim, mel_spectrogram, speaker_fingerprint, stft_magnitudes, AudioConfig,
};
use crate::dataset::cache::{load, prepare, FeatureCache, FeatureEntry, FeatureStats};
use crate::dataset::{gen_synthetic_corpus, parse_alignment, AffectPoint};
use crate::error::{Error, Result};
use crate::model::{
    forward, is_backbone, length_regulate, ForwardInput, ModelConfig, ModelParams, Stage, Teacher,
};
use crate::nn::{Graph, Tensor};
use crate::text::PhonemeInventory;
use crate::train::{item_loss, save_checkpoint, train_stage1, train_stage2, TrainConfig};

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl std::fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "criterion {:2} {:<24} {}  {}",
            self.id,
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

fn guard(
    id: u32,
    name: &'static str,
    f: impl FnOnce() -> Result<(bool, String)>,
) -> CriterionResult {
    match f() {
        Ok((pass, detail)) => CriterionResult { id, name, pass, detail },
        Err(e) => CriterionResult {
            id,
            name,
            pass: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Reduced architecture used by the training criteria so the whole suite
/// runs in minutes on one core; the full-size default config shares every
/// code path.
pub fn acceptance_model() -> ModelConfig {
    ModelConfig {
        hidden: 32,
        layers: 1,
        heads: 2,
        conv_filter: 48,
        conv_kernel: 3,
        vp_channels: 32,
        vp_kernel: 3,
        buckets: 64,
        max_phonemes: 64,
        mel_bins: 80,
        ..Default::default()
    }
}

fn fixture_stats() -> FeatureStats {
    FeatureStats {
        pitch_log_mean: 5.2,
        pitch_log_std: 0.3,
        energy_mean: 10.0,
        energy_std: 4.0,
        pitch_norm_min: -2.5,
        pitch_norm_max: 2.5,
        energy_norm_min: -2.0,
        energy_norm_max: 3.0,
    }
}

fn unit_speaker(seed: usize) -> Vec<f32> {
    let mut v: Vec<f32> = (0..crate::audio::EMBEDDING_DIM)
        .map(|i| ((i * 37 + seed * 11 + 1) % 23) as f32 - 11.0)
        .collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn prepared_cache(dir: &Path, n: usize, speakers: usize, seed: u64, affect: bool) -> Result<FeatureCache> {
    let corpus = gen_synthetic_corpus(&dir.join("corpus"), n, speakers, seed, affect)?;
    let cache_dir = dir.join("cache");
    let report = prepare(
        &corpus.utterances,
        &AudioConfig::default(),
        &PhonemeInventory::standard(),
        &cache_dir,
    )?;
    if !report.discarded.is_empty() {
        return Err(Error::Data(format!(
            "synthetic corpus had {} discards",
            report.discarded.len()
        )));
    }
    load(&cache_dir)
}

// ---------------------------------------------------------------- c1

fn micro_entry() -> FeatureEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let durations = vec![2usize, 1, 2];
    let t: usize = durations.iter().sum();
    FeatureEntry {
        id: "fixture".to_string(),
        phoneme_ids: vec![3, 4, 5],
        durations,
        n_frames: t,
        mel: (0..t * 4).map(|_| rng.gen_range(-3.0..0.0)).collect(),
        pitch_hz: (0..t).map(|_| rng.gen_range(150.0..250.0)).collect(),
        voiced: vec![true; t],
        energy: (0..t).map(|_| rng.gen_range(5.0..15.0)).collect(),
        speaker: "spk0".to_string(),
        arousal: Some(5.0),
        valence: Some(3.0),
    }
}

fn criterion_gradients() -> CriterionResult {
    guard(1, "gradient correctness", || {
        let start = Instant::now();
        let mut worst: (f64, String) = (0.0, String::new());
        let mut coords = 0usize;
        for (name, report) in op_checks() {
            coords += report.coords_checked;
            if report.max_rel_err > worst.0 {
                worst = (report.max_rel_err, format!("{name}: {}", report.worst));
            }
        }

        // full stage-1 and stage-2 losses on a micro model
        let cfg = ModelConfig {
            hidden: 8,
            layers: 1,
            heads: 2,
            conv_filter: 8,
            conv_kernel: 3,
            vp_channels: 8,
            vp_kernel: 3,
            buckets: 4,
            max_phonemes: 16,
            mel_bins: 4,
            ..Default::default()
        };
        let params64 = ModelParams::init(cfg.clone(), 77)?.cast::<f64>();
        let entry = micro_entry();
        let speaker = unit_speaker(1);
        let stats = fixture_stats();
        let tcfg = TrainConfig::default();
        for (stage, tag) in [(Stage::One, "stage1"), (Stage::Two, "stage2")] {
            let report = check_gradients(
                &params64,
                &|g: &mut Graph<f64>, p: &BTreeMap<String, Tensor<f64>>| {
                    let losses = item_loss(g, p, &cfg, &stats, &entry, &speaker, stage, &tcfg)?;
                    Ok(losses.total)
                },
                Some(4242),
                2,
            )?;
            coords += report.coords_checked;
            if report.max_rel_err > worst.0 {
                worst = (report.max_rel_err, format!("{tag} loss: {}", report.worst));
            }
        }
        let secs = start.elapsed().as_secs_f64();
        let pass = worst.0 < FD_TOLERANCE && secs < 300.0;
        Ok((
            pass,
            format!(
                "max rel err {:.2e} over {coords} coords in {secs:.1}s (worst: {})",
                worst.0,
                if worst.1.is_empty() { "-" } else { &worst.1 }
            ),
        ))
    })
}

// ---------------------------------------------------------------- c2

fn criterion_av_isolation() -> CriterionResult {
    guard(2, "av isolation", || {
        let cfg = acceptance_model();
        let params = ModelParams::init(cfg.clone(), 11)?.cast::<f32>();
        let stats = fixture_stats();
        let teacher = Teacher {
            durations: Some(vec![3, 0, 2, 4]),
            pitch: Some((0..9).map(|i| (i as f32 - 4.0) / 4.0).collect()),
            energy: Some(vec![0.25; 9]),
        };
        let mel_bits = |a: f32, v: f32| -> Result<Vec<u32>> {
            let mut g: Graph<f32> = Graph::new();
            let input = ForwardInput {
                phoneme_ids: vec![3, 4, 5, 6],
                mask: vec![true; 4],
                speaker: unit_speaker(2),
                affect: Some(AffectPoint::new(a, v)),
            };
            let out = forward(&mut g, &params, &cfg, &stats, &input, Stage::Two, &teacher)?;
            Ok(g.value(out.mel).data().iter().map(|x| x.to_bits()).collect())
        };
        let base = mel_bits(1.0, 1.0)?;
        let same44 = mel_bits(4.0, 4.0)? == base;
        let same77 = mel_bits(7.0, 7.0)? == base;
        Ok((
            same44 && same77,
            format!("teacher-forced mels bit-identical across (1,1)/(4,4)/(7,7): {}", same44 && same77),
        ))
    })
}

// ---------------------------------------------------------------- c3

fn criterion_freeze() -> CriterionResult {
    guard(3, "freeze contract", || {
        let dir = tempfile::tempdir()?;
        let cache = prepared_cache(dir.path(), 8, 2, 301, true)?;
        let t1 = TrainConfig {
            batch_size: 8,
            lr: 1e-3,
            warmup_steps: 20,
            max_steps: 20,
            seed: 31,
            checkpoint_interval: 10_000,
            log_interval: 10,
            ..Default::default()
        };
        let (s1, _) = train_stage1(&cache, acceptance_model(), &t1, None, &dir.path().join("s1"))?;
        let t2 = TrainConfig { max_steps: 500, ..t1.clone() };
        let start = Instant::now();
        let (s2, _) = train_stage2(&cache, s1.clone(), &t2, &dir.path().join("s2"))?;
        let secs = start.elapsed().as_secs_f64();

        let mut frozen = true;
        for (name, before) in &s1.tensors {
            if is_backbone(name) {
                let after = &s2.tensors[name];
                if !before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
                    frozen = false;
                    break;
                }
            }
        }
        let va_moved = s2.tensors["pc.v_a"].max_abs_diff(&s1.tensors["pc.v_a"]) > 0.0;
        let vv_moved = s2.tensors["pc.v_v"].max_abs_diff(&s1.tensors["pc.v_v"]) > 0.0;
        Ok((
            frozen && va_moved && vv_moved,
            format!(
                "500 stage-2 steps in {secs:.0}s: backbone bytewise frozen={frozen}, v_A moved={va_moved}, v_V moved={vv_moved}"
            ),
        ))
    })
}

// ---------------------------------------------------------------- c4

fn criterion_overfit() -> CriterionResult {
    guard(4, "overfit sanity", || {
        let dir = tempfile::tempdir()?;
        let cache = prepared_cache(dir.path(), 8, 2, 401, false)?;
        let tcfg = TrainConfig {
            batch_size: 8,
            lr: 2e-3,
            warmup_steps: 50,
            max_steps: 1500,
            seed: 41,
            checkpoint_interval: 10_000,
            log_interval: 100,
            ..Default::default()
        };
        let start = Instant::now();
        let (_, metrics) =
            train_stage1(&cache, acceptance_model(), &tcfg, None, &dir.path().join("run"))?;
        let secs = start.elapsed().as_secs_f64();
        let baseline = metrics[9].mel;
        let best = metrics[10..].iter().map(|m| m.mel).fold(f32::INFINITY, f32::min);
        let final_mel = metrics.last().unwrap().mel;
        let pass = best <= 0.1 * baseline && secs < 900.0;
        Ok((
            pass,
            format!(
                "mel loss {baseline:.3} (step 10) -> best {best:.3}, final {final_mel:.3} ({:.0}% drop) in {secs:.0}s",
                (1.0 - best / baseline) * 100.0
            ),
        ))
    })
}

// ---------------------------------------------------------------- c5

fn criterion_monotonicity() -> CriterionResult {
    guard(5, "affect monotonicity", || {
        let dir = tempfile::tempdir()?;
        let cache = prepared_cache(dir.path(), 64, 2, 501, true)?;
        let t1 = TrainConfig {
            batch_size: 16,
            lr: 1e-3,
            warmup_steps: 50,
            max_steps: 250,
            seed: 51,
            checkpoint_interval: 10_000,
            log_interval: 50,
            ..Default::default()
        };
        let (s1, _) = train_stage1(&cache, acceptance_model(), &t1, None, &dir.path().join("s1"))?;
        let t2 = TrainConfig { max_steps: 600, ..t1.clone() };
        let start = Instant::now();
        let (s2, _) = train_stage2(&cache, s1, &t2, &dir.path().join("s2"))?;
        let secs = start.elapsed().as_secs_f64();

        // held-out sentence: a phoneme sequence not present in the corpus
        let inv = PhonemeInventory::standard();
        let ids: Vec<usize> = ["AA1", "EH1", "IY1", "OW1", "UW1", "AE1"]
            .iter()
            .map(|s| inv.id(s).expect("pseudo-phonemes are real symbols"))
            .collect();
        let speaker = cache
            .speakers
            .values()
            .next()
            .expect("prepared cache has speakers")
            .values
            .clone();
        let params = ModelParams::from_tensors(s2.config.clone(), s2.tensors.clone())?.cast::<f32>();

        let mut mean_pitch = Vec::new();
        let mut total_dur = Vec::new();
        for a in [1.0f32, 4.0, 7.0] {
            let mut g: Graph<f32> = Graph::new();
            let input = ForwardInput {
                phoneme_ids: ids.clone(),
                mask: vec![true; ids.len()],
                speaker: speaker.clone(),
                affect: Some(AffectPoint::new(a, 4.0)),
            };
            let out = forward(&mut g, &params, &s2.config, &s2.stats, &input, Stage::Two, &Teacher::default())?;
            let p = g.value(out.pitch).data();
            mean_pitch.push(p.iter().sum::<f32>() / p.len() as f32);
            total_dur.push(out.durations.iter().sum::<usize>());
        }
        let pitch_up = mean_pitch[0] < mean_pitch[1] && mean_pitch[1] < mean_pitch[2];
        let dur_down = total_dur[0] > total_dur[1] && total_dur[1] > total_dur[2];
        Ok((
            pitch_up && dur_down,
            format!(
                "arousal 1/4/7 -> mean pitch {:.3}/{:.3}/{:.3} (increasing={pitch_up}), frames {}/{}/{} (decreasing={dur_down}); stage 2 took {secs:.0}s",
                mean_pitch[0], mean_pitch[1], mean_pitch[2], total_dur[0], total_dur[1], total_dur[2]
            ),
        ))
    })
}

// ---------------------------------------------------------------- c6

fn sine(freq: f32, secs: f32, amp: f32, sr: u32) -> Vec<f32> {
    let n = (secs * sr as f32) as usize;
    (0..n)
        .map(|i| amp * (2.0 * std::f32::consts::PI * freq * i as f32 / sr as f32).sin())
        .collect()
}

fn criterion_dsp() -> CriterionResult {
    guard(6, "dsp oracles", || {
        let cfg = AudioConfig::default();
        let mut details = Vec::new();

        // F0 recovery across the 100-300 Hz speaker band
        let mut worst_f0_err = 0.0f32;
        for &freq in &[100.0f32, 150.0, 200.0, 250.0, 300.0] {
            let samples = sine(freq, 0.6, 0.4, cfg.sample_rate);
            let pitch = extract_f0(&samples, &cfg);
            let tol = (0.02 * freq).max(5.0);
            for (i, &f) in pitch.f0.iter().enumerate() {
                if pitch.voiced[i] {
                    worst_f0_err = worst_f0_err.max((f - freq).abs() / tol);
                }
            }
        }
        let f0_ok = worst_f0_err <= 1.0;
        details.push(format!("f0 worst err {:.0}% of tolerance", worst_f0_err * 100.0));

        // frame-count formula on 100 random lengths
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut frames_ok = true;
        for _ in 0..100 {
            let n = rng.gen_range(cfg.fft_size..40_000);
            let samples = sine(180.0, n as f32 / cfg.sample_rate as f32 + 0.01, 0.3, cfg.sample_rate);
            let samples = &samples[..n];
            let mel = mel_spectrogram(samples, &cfg)?;
            if mel.n_frames != 1 + n / cfg.hop as usize {
                frames_ok = false;
                break;
            }
        }
        details.push(format!("frame-count formula exact on 100 lengths: {frames_ok}"));

        // Griffin-Lim round trip of a 220 Hz tone
        let tone = sine(220.0, 0.7, 0.4, cfg.sample_rate);
        let mel = mel_spectrogram(&tone, &cfg)?;
        let recon = griffin_lim(&mel, &cfg, 60, 6);
        let mags = stft_magnitudes(&recon, &cfg);
        // dominant bin over interior frames
        let bins = cfg.fft_size / 2 + 1;
        let mut acc = vec![0.0f32; bins];
        for frame in &mags[2..mags.len() - 2] {
            for (b, &m) in frame.iter().enumerate() {
                acc[b] += m;
            }
        }
        let peak_bin = acc
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let peak_hz = peak_bin as f32 * cfg.sample_rate as f32 / cfg.fft_size as f32;
        let peak_ok = (peak_hz - 220.0).abs() <= 10.0;
        details.push(format!("griffin-lim peak {peak_hz:.1} Hz"));

        // mel round-trip correlation
        let mel2 = mel_spectrogram(&recon, &cfg)?;
        let t = mel.n_frames.min(mel2.n_frames);
        let mut r_sum = 0.0f64;
        for f in 0..t {
            let (a, b) = (mel.frame(f), mel2.frame(f));
            let ma = a.iter().sum::<f32>() as f64 / a.len() as f64;
            let mb = b.iter().sum::<f32>() as f64 / b.len() as f64;
            let (mut sxy, mut sxx, mut syy) = (0.0f64, 0.0, 0.0);
            for i in 0..a.len() {
                let (da, db) = (a[i] as f64 - ma, b[i] as f64 - mb);
                sxy += da * db;
                sxx += da * da;
                syy += db * db;
            }
            r_sum += sxy / (sxx * syy).sqrt().max(1e-12);
        }
        let r = r_sum / t as f64;
        let r_ok = r > 0.9;
        details.push(format!("mel round-trip r {r:.3}"));

        Ok((f0_ok && frames_ok && peak_ok && r_ok, details.join("; ")))
    })
}

// ---------------------------------------------------------------- c7

fn criterion_regulator_laws() -> CriterionResult {
    guard(7, "length regulator laws", || {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let h = 3usize;
        for case in 0..1000 {
            let la = rng.gen_range(1..5usize);
            let lb = rng.gen_range(1..5usize);
            let mut da: Vec<usize> = (0..la).map(|_| rng.gen_range(0..4)).collect();
            let mut db: Vec<usize> = (0..lb).map(|_| rng.gen_range(0..4)).collect();
            // keep each half non-empty so both sides of the law are defined
            if da.iter().sum::<usize>() == 0 {
                da[0] = 1;
            }
            if db.iter().sum::<usize>() == 0 {
                db[0] = 1;
            }
            let xa = test_tensor(&[la, h], 7000 + case).cast::<f32>();
            let xb = test_tensor(&[lb, h], 8000 + case).cast::<f32>();

            let mut g: Graph<f32> = Graph::new();
            let a = g.input(xa.clone());
            let b = g.input(xb.clone());
            let whole_in = g.concat(a, b, 0)?;
            let d_all: Vec<usize> = da.iter().chain(&db).cloned().collect();
            let whole = length_regulate(&mut g, whole_in, &d_all)?;
            let ra = length_regulate(&mut g, a, &da)?;
            let rb = length_regulate(&mut g, b, &db)?;
            let pieces = g.concat(ra, rb, 0)?;

            // output frames = sum of durations
            let total: usize = d_all.iter().sum();
            if g.value(whole).dims2().0 != total {
                return Ok((false, format!("case {case}: frame count != sum durations")));
            }
            // concatenation homomorphism
            if g.value(whole).data() != g.value(pieces).data() {
                return Ok((false, format!("case {case}: homomorphism violated")));
            }
            // d=0 elision: every output row equals the source row it came from
            let mut expect = Vec::new();
            for (i, &d) in d_all.iter().enumerate() {
                for _ in 0..d {
                    expect.push(i);
                }
            }
            let src_rows = g.value(whole_in).data().to_vec();
            let out_rows = g.value(whole).data();
            for (r, &src) in expect.iter().enumerate() {
                if out_rows[r * h..(r + 1) * h] != src_rows[src * h..(src + 1) * h] {
                    return Ok((false, format!("case {case}: elision/copy mismatch")));
                }
            }
        }
        Ok((true, "1000 random cases: frame totals, homomorphism, elision".to_string()))
    })
}

// ---------------------------------------------------------------- c8

fn criterion_alignment() -> CriterionResult {
    guard(8, "alignment ingestion", || {
        let cfg = AudioConfig::default();
        let transcript: Vec<String> = ["AA1", "IY1", "UW1"].iter().map(|s| s.to_string()).collect();
        let text = "AA1\t0\t0.1\nIY1\t0.1\t0.25\nUW1\t0.25\t0.5\n";
        let durations = parse_alignment(text, &transcript, &cfg)?;
        let example_ok = durations == vec![9, 13, 21] && durations.iter().sum::<usize>() == 43;

        let bad = "AA1\t0\t0.1\nOW1\t0.1\t0.2\nUW1\t0.2\t0.5\n";
        let discard_ok = matches!(
            parse_alignment(bad, &transcript, &cfg),
            Err(Error::Discard(_))
        );
        Ok((
            example_ok && discard_ok,
            format!("boundary example {durations:?}/43 ok={example_ok}, mismatch discarded={discard_ok}"),
        ))
    })
}

// ---------------------------------------------------------------- c9

fn criterion_determinism() -> CriterionResult {
    guard(9, "determinism and resume", || {
        let dir = tempfile::tempdir()?;
        let cache = prepared_cache(dir.path(), 4, 2, 901, false)?;
        let tcfg = TrainConfig {
            batch_size: 4,
            lr: 1e-3,
            warmup_steps: 10,
            max_steps: 6,
            seed: 91,
            checkpoint_interval: 10_000,
            log_interval: 1,
            ..Default::default()
        };
        let model = acceptance_model();
        let ckpt_bytes = |tag: &str, ckpt: &crate::train::Checkpoint| -> Result<Vec<u8>> {
            let p = dir.path().join(format!("{tag}.ckpt"));
            save_checkpoint(&p, ckpt)?;
            Ok(std::fs::read(&p)?)
        };

        let (a, _) = train_stage1(&cache, model.clone(), &tcfg, None, &dir.path().join("a"))?;
        let (b, _) = train_stage1(&cache, model.clone(), &tcfg, None, &dir.path().join("b"))?;
        let seeds_ok = ckpt_bytes("a", &a)? == ckpt_bytes("b", &b)?;

        let half = TrainConfig { max_steps: 3, ..tcfg.clone() };
        let (mid, _) = train_stage1(&cache, model.clone(), &half, None, &dir.path().join("h"))?;
        let p = dir.path().join("mid.ckpt");
        save_checkpoint(&p, &mid)?;
        let mid = crate::train::load_checkpoint(&p)?;
        let (resumed, _) = train_stage1(&cache, model, &tcfg, Some(mid), &dir.path().join("r"))?;
        let resume_ok = ckpt_bytes("r", &resumed)? == ckpt_bytes("a2", &a)?;

        Ok((
            seeds_ok && resume_ok,
            format!("same-seed checkpoints identical={seeds_ok}, resume == uninterrupted={resume_ok}"),
        ))
    })
}

// ---------------------------------------------------------------- c10

fn criterion_speaker() -> CriterionResult {
    guard(10, "speaker conditioning", || {
        let acfg = AudioConfig::default();
        // two clearly distinct synthetic voices
        let low: Vec<f32> = sine(120.0, 0.6, 0.4, acfg.sample_rate)
            .iter()
            .zip(sine(240.0, 0.6, 0.2, acfg.sample_rate))
            .map(|(a, b)| a + b)
            .collect();
        let high: Vec<f32> = sine(280.0, 0.6, 0.4, acfg.sample_rate)
            .iter()
            .zip(sine(560.0, 0.6, 0.15, acfg.sample_rate))
            .map(|(a, b)| a + b)
            .collect();
        let spk_a = speaker_fingerprint(&low, &acfg)?;
        let spk_b = speaker_fingerprint(&high, &acfg)?;

        let cfg = acceptance_model();
        let params = ModelParams::init(cfg.clone(), 101)?.cast::<f32>();
        let stats = fixture_stats();
        let run = |speaker: &[f32]| -> Result<Tensor<f32>> {
            let mut g: Graph<f32> = Graph::new();
            let input = ForwardInput {
                phoneme_ids: vec![3, 4, 5, 6, 7],
                mask: vec![true; 5],
                speaker: speaker.to_vec(),
                affect: Some(AffectPoint::new(4.0, 4.0)),
            };
            let out = forward(&mut g, &params, &cfg, &stats, &input, Stage::Two, &Teacher::default())?;
            Ok(g.value(out.mel).clone())
        };
        let mel_a = run(&spk_a.values)?;
        let mel_b = run(&spk_b.values)?;
        let mel_a2 = run(&spk_a.values)?;

        let differ = if mel_a.shape() == mel_b.shape() {
            mel_a.max_abs_diff(&mel_b) > 1e-4
        } else {
            true // different predicted durations already separate the voices
        };
        let identical = mel_a.shape() == mel_a2.shape()
            && mel_a
                .data()
                .iter()
                .zip(mel_a2.data())
                .all(|(x, y)| x.to_bits() == y.to_bits());
        Ok((
            differ && identical,
            format!("distinct fingerprints differ={differ}, identical fingerprint reproduces mel={identical}"),
        ))
    })
}

pub fn run_criterion(id: u32) -> Result<CriterionResult> {
    Ok(match id {
        1 => criterion_gradients(),
        2 => criterion_av_isolation(),
        3 => criterion_freeze(),
        4 => criterion_overfit(),
        5 => criterion_monotonicity(),
        6 => criterion_dsp(),
        7 => criterion_regulator_laws(),
        8 => criterion_alignment(),
        9 => criterion_determinism(),
        10 => criterion_speaker(),
        other => return Err(Error::invalid(format!("unknown criterion {other}"))),
    })
}

/// Suites: `gradients` (1), `dsp` (6), `invariants` (2,3,4,5,7,8,9,10),
/// `all` (everything in order).
pub fn run_suite(suite: &str) -> Result<Vec<CriterionResult>> {
    let ids: Vec<u32> = match suite {
        "gradients" => vec![1],
        "dsp" => vec![6],
        "invariants" => vec![2, 3, 4, 5, 7, 8, 9, 10],
        "all" => (1..=10).collect(),
        other => {
            return Err(Error::invalid(format!(
                "unknown suite '{other}' (expected gradients|dsp|invariants|all)"
            )))
        }
    };
    ids.into_iter().map(run_criterion).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    // the heavyweight criteria run in the acceptance test; here we keep
    // the cheap, purely local ones wired in

    #[test]
    fn alignment_criterion_passes() {
        let r = criterion_alignment();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn regulator_laws_pass() {
        let r = criterion_regulator_laws();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn av_isolation_passes() {
        let r = criterion_av_isolation();
        assert!(r.pass, "{r}");
    }

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(run_suite("everything").is_err());
        assert!(run_criterion(11).is_err());
    }
}
