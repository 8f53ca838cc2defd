//! Model definition: configuration, the named-parameter store with its
//! backbone/prosody partition, and the forward pass (in [`net`]).

mod net;

pub use net::{
    affect_vector, condition, decode, encode, forward, length_regulate, predict_scalar,
    prepend_speaker, ForwardInput, ForwardOutput, Stage, Teacher,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audio::EMBEDDING_DIM;
use crate::error::{Error, Result};
use crate::nn::rng::derive_seed;
use crate::nn::{init, InitScheme, Tensor};
use crate::text::PhonemeInventory;

/// Architecture hyperparameters. Hidden width scales everything except
/// the arousal/valence vectors and speaker embeddings, which are 256-d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub conv_filter: usize,
    pub conv_kernel: usize,
    pub fft_dropout: f32,
    pub vp_channels: usize,
    pub vp_kernel: usize,
    pub vp_dropout: f32,
    pub buckets: usize,
    pub max_phonemes: usize,
    pub mel_bins: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab: PhonemeInventory::standard().len(),
            hidden: 256,
            layers: 4,
            heads: 2,
            conv_filter: 1024,
            conv_kernel: 9,
            fft_dropout: 0.1,
            vp_channels: 256,
            vp_kernel: 3,
            vp_dropout: 0.5,
            buckets: 256,
            max_phonemes: 256,
            mel_bins: 80,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::invalid(format!(
                "hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if self.hidden % 2 != 0 {
            return Err(Error::invalid("hidden must be even for sinusoidal positions"));
        }
        if self.buckets < 2 {
            return Err(Error::invalid("need at least 2 pitch/energy buckets"));
        }
        if self.conv_kernel % 2 == 0 || self.vp_kernel % 2 == 0 {
            return Err(Error::invalid("conv kernels must be odd (same padding)"));
        }
        if self.vocab < 3 || self.layers == 0 || self.mel_bins == 0 || self.max_phonemes < 2 {
            return Err(Error::invalid("degenerate model configuration"));
        }
        Ok(())
    }

    /// A small configuration for fast tests and desk-scale runs.
    pub fn tiny() -> Self {
        ModelConfig {
            hidden: 32,
            layers: 1,
            heads: 2,
            conv_filter: 48,
            conv_kernel: 3,
            vp_channels: 32,
            vp_kernel: 3,
            buckets: 32,
            max_phonemes: 64,
            mel_bins: 16,
            ..Default::default()
        }
    }
}

/// Backbone parameters are frozen in stage 2; everything else (prosody
/// control block + variance predictors) keeps training.
pub fn is_backbone(name: &str) -> bool {
    const PREFIXES: &[&str] = &[
        "phoneme_emb",
        "speaker_proj.",
        "enc.",
        "dec.",
        "mel_proj.",
        "pitch_emb",
        "energy_emb",
    ];
    PREFIXES.iter().any(|p| name.starts_with(p))
}

pub fn is_prosody(name: &str) -> bool {
    const PREFIXES: &[&str] = &["pc.", "dur_pred.", "pitch_pred.", "energy_pred."];
    PREFIXES.iter().any(|p| name.starts_with(p))
}

/// Every tensor the model owns: (name, shape, init scheme).
fn parameter_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, InitScheme)> {
    use InitScheme::{Embedding, Ones, Xavier, Zeros};
    let h = cfg.hidden;
    let mut specs: Vec<(String, Vec<usize>, InitScheme)> = vec![
        ("phoneme_emb".into(), vec![cfg.vocab, h], Embedding),
        ("speaker_proj.w".into(), vec![EMBEDDING_DIM, h], Xavier),
        ("speaker_proj.b".into(), vec![h], Zeros),
    ];
    for stack in ["enc", "dec"] {
        for l in 0..cfg.layers {
            for nm in ["wq", "wk", "wv", "wo"] {
                specs.push((format!("{stack}.{l}.attn.{nm}"), vec![h, h], Xavier));
                specs.push((format!("{stack}.{l}.attn.{nm}_b"), vec![h], Zeros));
            }
            specs.push((format!("{stack}.{l}.conv1.w"), vec![h * cfg.conv_kernel, cfg.conv_filter], Xavier));
            specs.push((format!("{stack}.{l}.conv1.b"), vec![cfg.conv_filter], Zeros));
            specs.push((format!("{stack}.{l}.conv2.w"), vec![cfg.conv_filter * cfg.conv_kernel, h], Xavier));
            specs.push((format!("{stack}.{l}.conv2.b"), vec![h], Zeros));
            for ln in ["ln1", "ln2"] {
                specs.push((format!("{stack}.{l}.{ln}.g"), vec![h], Ones));
                specs.push((format!("{stack}.{l}.{ln}.b"), vec![h], Zeros));
            }
        }
    }
    specs.push(("mel_proj.w".into(), vec![h, cfg.mel_bins], Xavier));
    specs.push(("mel_proj.b".into(), vec![cfg.mel_bins], Zeros));
    specs.push(("pitch_emb".into(), vec![cfg.buckets, h], Embedding));
    specs.push(("energy_emb".into(), vec![cfg.buckets, h], Embedding));

    specs.push(("pc.v_a".into(), vec![1, EMBEDDING_DIM], Embedding));
    specs.push(("pc.v_v".into(), vec![1, EMBEDDING_DIM], Embedding));
    specs.push(("pc.cond.w".into(), vec![h + EMBEDDING_DIM, h], Xavier));
    specs.push(("pc.cond.b".into(), vec![h], Zeros));
    for pred in ["dur_pred", "pitch_pred", "energy_pred"] {
        let c = cfg.vp_channels;
        specs.push((format!("{pred}.conv1.w"), vec![h * cfg.vp_kernel, c], Xavier));
        specs.push((format!("{pred}.conv1.b"), vec![c], Zeros));
        specs.push((format!("{pred}.conv2.w"), vec![c * cfg.vp_kernel, c], Xavier));
        specs.push((format!("{pred}.conv2.b"), vec![c], Zeros));
        for ln in ["ln1", "ln2"] {
            specs.push((format!("{pred}.{ln}.g"), vec![c], Ones));
            specs.push((format!("{pred}.{ln}.b"), vec![c], Zeros));
        }
        specs.push((format!("{pred}.out.w"), vec![c, 1], Xavier));
        specs.push((format!("{pred}.out.b"), vec![1], Zeros));
    }
    specs
}

fn name_seed(seed: u64, name: &str) -> u64 {
    let parts: Vec<u64> = name
        .as_bytes()
        .chunks(8)
        .map(|c| {
            let mut buf = [0u8; 8];
            buf[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(buf)
        })
        .collect();
    derive_seed(seed, &parts)
}

#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl ModelParams {
    /// Deterministic per (config, seed).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let tensors = parameter_specs(&config)
            .into_iter()
            .map(|(name, shape, scheme)| {
                let t = init(&shape, scheme, name_seed(seed, &name));
                (name, t)
            })
            .collect();
        Ok(ModelParams { config, tensors })
    }

    /// Check a loaded tensor set against this config's expected shapes.
    pub fn from_tensors(
        config: ModelConfig,
        tensors: BTreeMap<String, Tensor<f32>>,
    ) -> Result<Self> {
        config.validate()?;
        let specs = parameter_specs(&config);
        if specs.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (name, shape, _) in &specs {
            let Some(t) = tensors.get(name) else {
                return Err(Error::Checkpoint(format!("missing tensor '{name}'")));
            };
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(ModelParams { config, tensors })
    }

    pub fn cast<U: crate::nn::Scalar>(&self) -> BTreeMap<String, Tensor<U>> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect()
    }
}

/// Inference duration decode: d = max(0, round(exp(p) - 1)) at real
/// positions, 0 at PAD; a fully-zero result gets one frame on the
/// highest-scoring real phoneme.
pub fn durations_from_log(log_dur: &[f32], mask: &[bool]) -> Vec<usize> {
    let mut out: Vec<usize> = log_dur
        .iter()
        .zip(mask)
        .map(|(&p, &real)| {
            if real {
                (p.exp() - 1.0).round().max(0.0) as usize
            } else {
                0
            }
        })
        .collect();
    if out.iter().sum::<usize>() == 0 {
        let best = (0..log_dur.len())
            .filter(|&i| mask[i])
            .max_by(|&a, &b| log_dur[a].total_cmp(&log_dur[b]));
        if let Some(i) = best {
            out[i] = 1;
        }
    }
    out
}

/// floor((x - min) / (max - min) * buckets), clamped into [0, buckets-1].
pub fn bucketize(x: f32, min: f32, max: f32, buckets: usize) -> usize {
    let t = (x - min) / (max - min) * buckets as f32;
    (t.floor().max(0.0) as usize).min(buckets - 1)
}
