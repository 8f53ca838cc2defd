//! Two-stage training. Stage 1 trains the full model with E1 routed into
//! the variance predictors; stage 2 freezes the backbone and trains the
//! prosody control block and predictors with E2 routing on affect-labeled
//! data. Everything is deterministic per (config, seed): batch order,
//! dropout masks, and optimizer state are derived from the step counter,
//! so resuming from a checkpoint reproduces an uninterrupted run bit for
//! bit.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::cache::{FeatureCache, FeatureEntry, FeatureStats};
use crate::dataset::make_batches;
use crate::error::{Error, Result};
use crate::model::{forward, is_prosody, ForwardInput, ModelConfig, ModelParams, Stage, Teacher};
use crate::nn::rng::derive_seed;
use crate::nn::{adam::AdamConfig, AdamState, Graph, NodeId, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f32,
    /// Linear warmup: lr is scaled by min(1, step/warmup_steps).
    pub warmup_steps: u64,
    pub max_steps: u64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    /// Mel loss is MAE by default; set true for MSE.
    pub mel_loss_mse: bool,
    pub loss_weight_mel: f32,
    pub loss_weight_dur: f32,
    pub loss_weight_pitch: f32,
    pub loss_weight_energy: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 1e-4,
            warmup_steps: 4000,
            max_steps: 2000,
            seed: 0,
            checkpoint_interval: 500,
            log_interval: 10,
            mel_loss_mse: false,
            loss_weight_mel: 1.0,
            loss_weight_dur: 1.0,
            loss_weight_pitch: 1.0,
            loss_weight_energy: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::invalid("batch size and max steps must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepMetrics {
    pub step: u64,
    pub mel: f32,
    pub dur: f32,
    pub pitch: f32,
    pub energy: f32,
    pub total: f32,
}

pub struct ItemLosses {
    pub mel: NodeId,
    pub dur: NodeId,
    pub pitch: NodeId,
    pub energy: NodeId,
    pub total: NodeId,
}

/// Teacher-forced losses for one utterance: masked MAE on log-mel and
/// masked MSE on log(d+1) durations and standardized pitch/energy.
pub fn item_loss<T: Scalar>(
    g: &mut Graph<T>,
    params: &std::collections::BTreeMap<String, Tensor<T>>,
    cfg: &ModelConfig,
    stats: &FeatureStats,
    entry: &FeatureEntry,
    speaker: &[f32],
    stage: Stage,
    tcfg: &TrainConfig,
) -> Result<ItemLosses> {
    let l = entry.phoneme_ids.len();
    let t = entry.n_frames;
    if t == 0 || l == 0 {
        return Err(Error::Data(format!("utterance {} is empty", entry.id)));
    }
    let pitch_std: Vec<f32> = entry.pitch_hz.iter().map(|&h| stats.standardize_pitch(h)).collect();
    let energy_std: Vec<f32> = entry.energy.iter().map(|&e| stats.standardize_energy(e)).collect();

    let input = ForwardInput {
        phoneme_ids: entry.phoneme_ids.clone(),
        mask: vec![true; l],
        speaker: speaker.to_vec(),
        affect: entry
            .arousal
            .zip(entry.valence)
            .map(|(a, v)| crate::dataset::AffectPoint::new(a, v)),
    };
    let teacher = Teacher {
        durations: Some(entry.durations.clone()),
        pitch: Some(pitch_std.clone()),
        energy: Some(energy_std.clone()),
    };
    let out = forward(g, params, cfg, stats, &input, stage, &teacher)?;

    let as_col = |g: &mut Graph<T>, v: &[f32]| -> NodeId {
        g.input(Tensor::new(
            vec![v.len(), 1],
            v.iter().map(|&x| T::from_f64x(x as f64)).collect(),
        ))
    };
    let ones = |g: &mut Graph<T>, shape: &[usize]| -> NodeId {
        g.input(Tensor::full(shape, T::one()))
    };

    let dur_target: Vec<f32> = entry.durations.iter().map(|&d| (d as f32 + 1.0).ln()).collect();
    let dur_t = as_col(g, &dur_target);
    let dur_m = ones(g, &[l, 1]);
    let l_dur = g.masked_mse(out.log_dur, dur_t, dur_m)?;

    let pitch_t = as_col(g, &pitch_std);
    let pitch_m = ones(g, &[t, 1]);
    let l_pitch = g.masked_mse(out.pitch, pitch_t, pitch_m)?;

    let energy_t = as_col(g, &energy_std);
    let energy_m = ones(g, &[t, 1]);
    let l_energy = g.masked_mse(out.energy, energy_t, energy_m)?;

    if entry.mel.len() != t * cfg.mel_bins {
        return Err(Error::Data(format!(
            "utterance {}: mel has {} values, expected {}x{}",
            entry.id,
            entry.mel.len(),
            t,
            cfg.mel_bins
        )));
    }
    let mel_t = g.input(Tensor::new(
        vec![t, cfg.mel_bins],
        entry.mel.iter().map(|&x| T::from_f64x(x as f64)).collect(),
    ));
    let mel_m = ones(g, &[t, cfg.mel_bins]);
    let l_mel = if tcfg.mel_loss_mse {
        g.masked_mse(out.mel, mel_t, mel_m)?
    } else {
        g.masked_mae(out.mel, mel_t, mel_m)?
    };

    let wm = g.scale(l_mel, T::from_f64x(tcfg.loss_weight_mel as f64));
    let wd = g.scale(l_dur, T::from_f64x(tcfg.loss_weight_dur as f64));
    let wp = g.scale(l_pitch, T::from_f64x(tcfg.loss_weight_pitch as f64));
    let we = g.scale(l_energy, T::from_f64x(tcfg.loss_weight_energy as f64));
    let s = g.add(wm, wd)?;
    let s = g.add(s, wp)?;
    let total = g.add(s, we)?;

    Ok(ItemLosses {
        mel: l_mel,
        dur: l_dur,
        pitch: l_pitch,
        energy: l_energy,
        total,
    })
}

fn speaker_of<'a>(cache: &'a FeatureCache, entry: &FeatureEntry) -> Result<&'a [f32]> {
    cache
        .speakers
        .get(&entry.speaker)
        .map(|e| e.values.as_slice())
        .ok_or_else(|| {
            Error::Data(format!(
                "utterance {}: no embedding for speaker '{}'",
                entry.id, entry.speaker
            ))
        })
}

fn append_metrics(path: &Path, rows: &[StepMetrics]) -> Result<()> {
    let new = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if new {
        writeln!(f, "step,mel,dur,pitch,energy,total")?;
    }
    for m in rows {
        writeln!(
            f,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.step, m.mel, m.dur, m.pitch, m.energy, m.total
        )?;
    }
    Ok(())
}

struct LoopSetup<'a> {
    stage: Stage,
    stage_tag: u32,
    trainable: Box<dyn Fn(&str) -> bool + 'a>,
}

/// Shared step loop. `start_step` comes from the checkpoint on resume;
/// the batch schedule and dropout seeds depend only on the step index, so
/// resumed runs are bit-identical to uninterrupted ones.
fn run_loop(
    cache: &FeatureCache,
    params: &mut ModelParams,
    adam: &mut AdamState,
    tcfg: &TrainConfig,
    setup: &LoopSetup,
    start_step: u64,
    out_dir: &Path,
) -> Result<Vec<StepMetrics>> {
    std::fs::create_dir_all(out_dir)?;
    let lengths: Vec<usize> = cache.entries.iter().map(|e| e.phoneme_ids.len()).collect();
    let n_batches = make_batches(&lengths, tcfg.batch_size, tcfg.seed, 0).len() as u64;
    let cast = params.cast::<f32>();
    let mut param_nodes = cast; // f32 copy consumed per step below
    let mut metrics = Vec::new();
    let mut pending: Vec<StepMetrics> = Vec::new();
    let metrics_path = out_dir.join("metrics.csv");

    for step in start_step..tcfg.max_steps {
        let epoch = step / n_batches;
        let batches = make_batches(&lengths, tcfg.batch_size, tcfg.seed, epoch);
        let batch = &batches[(step % n_batches) as usize];
        let b = batch.len() as f32;

        let mut grad_sum: HashMap<String, Tensor<f32>> = HashMap::new();
        let mut sums = [0f32; 5];
        for (k, &idx) in batch.iter().enumerate() {
            let entry = &cache.entries[idx];
            let speaker = speaker_of(cache, entry)?;
            let dropout_seed = derive_seed(tcfg.seed, &[0xD0, step, k as u64]);
            let mut g: Graph<f32> = Graph::train(dropout_seed);
            let losses = item_loss(
                &mut g,
                &param_nodes,
                &params.config,
                &cache.stats,
                entry,
                speaker,
                setup.stage,
                tcfg,
            )?;
            for (slot, node) in [
                (0, losses.mel),
                (1, losses.dur),
                (2, losses.pitch),
                (3, losses.energy),
                (4, losses.total),
            ] {
                sums[slot] += g.value(node).data()[0] / b;
            }
            let scaled = g.scale(losses.total, 1.0 / b);
            let grads = g.backward(scaled)?;
            for (name, grad) in grads.into_params() {
                match grad_sum.get_mut(&name) {
                    Some(acc) => {
                        let (a, gd) = (acc.data_mut(), grad.data());
                        for i in 0..gd.len() {
                            a[i] += gd[i];
                        }
                    }
                    None => {
                        grad_sum.insert(name, grad);
                    }
                }
            }
        }

        let lr_scale = if tcfg.warmup_steps == 0 {
            1.0
        } else {
            (((adam.step + 1) as f64 / tcfg.warmup_steps as f64).min(1.0)) as f32
        };
        adam.step(&mut params.tensors, &grad_sum, &setup.trainable, lr_scale)?;
        param_nodes = params.cast::<f32>();

        let m = StepMetrics {
            step: step + 1,
            mel: sums[0],
            dur: sums[1],
            pitch: sums[2],
            energy: sums[3],
            total: sums[4],
        };
        if (step + 1) % tcfg.log_interval == 0 || step + 1 == tcfg.max_steps {
            pending.push(m);
        }
        metrics.push(m);

        if (step + 1) % tcfg.checkpoint_interval == 0 || step + 1 == tcfg.max_steps {
            append_metrics(&metrics_path, &pending)?;
            pending.clear();
            let ckpt = Checkpoint {
                stage: setup.stage_tag,
                step: step + 1,
                config: params.config.clone(),
                stats: cache.stats,
                tensors: params.tensors.clone(),
                adam: adam.clone(),
            };
            save_checkpoint(&out_dir.join(format!("stage{}.ckpt", setup.stage_tag)), &ckpt)?;
        }
    }
    Ok(metrics)
}

fn final_checkpoint(
    stage_tag: u32,
    params: &ModelParams,
    stats: FeatureStats,
    adam: &AdamState,
    step: u64,
) -> Checkpoint {
    Checkpoint {
        stage: stage_tag,
        step,
        config: params.config.clone(),
        stats,
        tensors: params.tensors.clone(),
        adam: adam.clone(),
    }
}

/// Stage 1: everything trainable, E1 routing. `resume` continues a
/// stage-1 checkpoint from its recorded step.
pub fn train_stage1(
    cache: &FeatureCache,
    model_cfg: ModelConfig,
    tcfg: &TrainConfig,
    resume: Option<Checkpoint>,
    out_dir: &Path,
) -> Result<(Checkpoint, Vec<StepMetrics>)> {
    tcfg.validate()?;
    if cache.entries.is_empty() {
        return Err(Error::Data("no prepared utterances to train on".to_string()));
    }
    let (mut params, mut adam, start_step) = match resume {
        Some(ckpt) => {
            if ckpt.stage != 1 {
                return Err(Error::invalid(format!(
                    "stage-1 resume needs a stage-1 checkpoint, got stage {}",
                    ckpt.stage
                )));
            }
            let step = ckpt.step;
            let adam = ckpt.adam.clone();
            (ckpt.params()?, adam, step)
        }
        None => {
            let params = ModelParams::init(model_cfg, derive_seed(tcfg.seed, &[0x1417]))?;
            let adam = AdamState::new(AdamConfig {
                lr: tcfg.lr,
                ..Default::default()
            });
            (params, adam, 0)
        }
    };
    let setup = LoopSetup {
        stage: Stage::One,
        stage_tag: 1,
        trainable: Box::new(|_| true),
    };
    let metrics = run_loop(cache, &mut params, &mut adam, tcfg, &setup, start_step, out_dir)?;
    Ok((
        final_checkpoint(1, &params, cache.stats, &adam, tcfg.max_steps),
        metrics,
    ))
}

/// Stage 2: backbone frozen, prosody group trainable, E2 routing. `init`
/// is a stage-1 checkpoint (fresh optimizer) or a stage-2 checkpoint
/// (resumed mid-run). Every utterance must carry an arousal-valence
/// point.
pub fn train_stage2(
    cache: &FeatureCache,
    init: Checkpoint,
    tcfg: &TrainConfig,
    out_dir: &Path,
) -> Result<(Checkpoint, Vec<StepMetrics>)> {
    tcfg.validate()?;
    for entry in &cache.entries {
        if entry.arousal.is_none() || entry.valence.is_none() {
            return Err(Error::Data(format!(
                "utterance {} has no arousal-valence annotation; stage 2 requires one",
                entry.id
            )));
        }
    }
    let (mut params, mut adam, start_step) = match init.stage {
        1 => {
            let params = init.params()?;
            let adam = AdamState::new(AdamConfig {
                lr: tcfg.lr,
                ..Default::default()
            });
            (params, adam, 0)
        }
        2 => {
            let step = init.step;
            let adam = init.adam.clone();
            (init.params()?, adam, step)
        }
        other => return Err(Error::invalid(format!("unknown checkpoint stage {other}"))),
    };
    let setup = LoopSetup {
        stage: Stage::Two,
        stage_tag: 2,
        trainable: Box::new(is_prosody),
    };
    let metrics = run_loop(cache, &mut params, &mut adam, tcfg, &setup, start_step, out_dir)?;
    Ok((
        final_checkpoint(2, &params, cache.stats, &adam, tcfg.max_steps),
        metrics,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioConfig;
    use crate::dataset::cache::{load, prepare};
    use crate::dataset::gen_synthetic_corpus;
    use crate::model::is_backbone;
    use crate::text::PhonemeInventory;

    fn tiny_train(max_steps: u64) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            lr: 1e-3,
            warmup_steps: 10,
            max_steps,
            seed: 5,
            checkpoint_interval: 1000,
            log_interval: 1,
            ..Default::default()
        }
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            mel_bins: 80,
            ..ModelConfig::tiny()
        }
    }

    fn prepared_cache(dir: &Path, n: usize, affect: bool, seed: u64) -> FeatureCache {
        let corpus = gen_synthetic_corpus(&dir.join("corpus"), n, 2, seed, affect).unwrap();
        let cache_dir = dir.join("cache");
        prepare(
            &corpus.utterances,
            &AudioConfig::default(),
            &PhonemeInventory::standard(),
            &cache_dir,
        )
        .unwrap();
        load(&cache_dir).unwrap()
    }

    #[test]
    fn stage1_runs_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cache = prepared_cache(dir.path(), 4, false, 21);
        let t = tiny_train(3);
        let (a, ma) = train_stage1(&cache, tiny_model(), &t, None, &dir.path().join("r1")).unwrap();
        let (b, mb) = train_stage1(&cache, tiny_model(), &t, None, &dir.path().join("r2")).unwrap();
        for (x, y) in ma.iter().zip(&mb) {
            assert_eq!(x.total.to_bits(), y.total.to_bits());
        }
        for (name, ta) in &a.tensors {
            assert_eq!(ta.data(), b.tensors[name].data(), "{name}");
        }
        assert!(ma[0].total.is_finite());
    }

    #[test]
    fn stage2_freezes_backbone_and_moves_affect_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let cache = prepared_cache(dir.path(), 4, true, 22);
        let t = tiny_train(3);
        let (s1, _) = train_stage1(&cache, tiny_model(), &t, None, &dir.path().join("s1")).unwrap();
        let (s2, _) = train_stage2(&cache, s1.clone(), &t, &dir.path().join("s2")).unwrap();
        assert_eq!(s2.stage, 2);
        for (name, before) in &s1.tensors {
            let after = &s2.tensors[name];
            if is_backbone(name) {
                let same = before
                    .data()
                    .iter()
                    .zip(after.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same, "backbone tensor '{name}' changed in stage 2");
            }
        }
        assert!(s2.tensors["pc.v_a"].max_abs_diff(&s1.tensors["pc.v_a"]) > 0.0);
        assert!(s2.tensors["pc.v_v"].max_abs_diff(&s1.tensors["pc.v_v"]) > 0.0);
    }

    #[test]
    fn stage2_rejects_unlabeled_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let cache = prepared_cache(dir.path(), 3, false, 23);
        let t = tiny_train(2);
        let (s1, _) = train_stage1(&cache, tiny_model(), &t, None, &dir.path().join("s1")).unwrap();
        let err = train_stage2(&cache, s1, &t, &dir.path().join("s2")).unwrap_err();
        assert!(err.to_string().contains("utt0000"), "{err}");
    }

    #[test]
    fn resume_equals_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let cache = prepared_cache(dir.path(), 4, false, 24);
        let full = tiny_train(4);
        let (whole, _) =
            train_stage1(&cache, tiny_model(), &full, None, &dir.path().join("w")).unwrap();

        let half = TrainConfig { max_steps: 2, ..full.clone() };
        let (mid, _) = train_stage1(&cache, tiny_model(), &half, None, &dir.path().join("h")).unwrap();
        // round-trip through the on-disk format, then continue
        let p = dir.path().join("mid.ckpt");
        save_checkpoint(&p, &mid).unwrap();
        let mid = load_checkpoint(&p).unwrap();
        let (resumed, _) =
            train_stage1(&cache, tiny_model(), &full, Some(mid), &dir.path().join("r")).unwrap();
        for (name, t) in &whole.tensors {
            let r = &resumed.tensors[name];
            let same = t.data().iter().zip(r.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same, "tensor '{name}' differs after resume");
        }
    }

    #[test]
    fn metrics_csv_written() {
        let dir = tempfile::tempdir().unwrap();
        let cache = prepared_cache(dir.path(), 3, false, 25);
        let out = dir.path().join("run");
        let t = TrainConfig { checkpoint_interval: 2, ..tiny_train(2) };
        train_stage1(&cache, tiny_model(), &t, None, &out).unwrap();
        let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert!(csv.starts_with("step,mel,dur,pitch,energy,total"));
        assert!(csv.lines().count() >= 2);
        assert!(out.join("stage1.ckpt").exists());
    }
}
