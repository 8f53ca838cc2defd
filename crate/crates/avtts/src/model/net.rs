//! The forward pass: encoder with prepended speaker slot (E1), prosody
//! conditioning (E2), variance adaptor, and decoder. Each utterance is
//! built as its own graph; padded positions are masked out after every
//! sublayer so padding never influences real positions.

use std::collections::BTreeMap;

use crate::audio::EMBEDDING_DIM;
use crate::dataset::cache::FeatureStats;
use crate::dataset::AffectPoint;
use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, Scalar, Tensor};

use super::{bucketize, durations_from_log, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

/// Ground-truth values substituted for predictions where present.
/// Pitch/energy are standardized per-frame values.
#[derive(Default, Clone)]
pub struct Teacher {
    pub durations: Option<Vec<usize>>,
    pub pitch: Option<Vec<f32>>,
    pub energy: Option<Vec<f32>>,
}

#[derive(Clone)]
pub struct ForwardInput {
    pub phoneme_ids: Vec<usize>,
    /// true at real positions; PAD positions follow all real ones.
    pub mask: Vec<bool>,
    /// Unit-norm 256-d speaker embedding.
    pub speaker: Vec<f32>,
    pub affect: Option<AffectPoint>,
}

pub struct ForwardOutput {
    pub e1: NodeId,
    pub e2: Option<NodeId>,
    /// (L, 1) log(d+1)-domain duration predictions.
    pub log_dur: NodeId,
    /// (T, 1) standardized predictions over regulated frames.
    pub pitch: NodeId,
    pub energy: NodeId,
    /// (T, mel_bins)
    pub mel: NodeId,
    /// The durations actually used for length regulation.
    pub durations: Vec<usize>,
}

fn param<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    name: &str,
) -> Result<NodeId> {
    let t = params
        .get(name)
        .ok_or_else(|| Error::invalid(format!("missing parameter '{name}'")))?;
    Ok(g.param(name, t))
}

/// x @ {prefix}.w + {prefix}.b
fn linear<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let w = param(g, params, &format!("{prefix}.w"))?;
    let b = param(g, params, &format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// layer_norm followed by the learned gain/bias {prefix}.g / {prefix}.b.
fn layer_norm<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let gain = param(g, params, &format!("{prefix}.g"))?;
    let bias = param(g, params, &format!("{prefix}.b"))?;
    let n = g.layer_norm(x);
    let n = g.mul(n, gain)?;
    g.add(n, bias)
}

/// Zero every padded row: multiply by a materialized (rows, cols) 0/1 mask.
fn mask_rows<T: Scalar>(g: &mut Graph<T>, x: NodeId, mask: &[bool]) -> Result<NodeId> {
    if mask.iter().all(|&m| m) {
        return Ok(x);
    }
    let (rows, cols) = g.value(x).dims2();
    debug_assert_eq!(rows, mask.len());
    let mut data = vec![T::zero(); rows * cols];
    for (i, &m) in mask.iter().enumerate() {
        if m {
            data[i * cols..(i + 1) * cols].fill(T::one());
        }
    }
    let m = g.input(Tensor::new(vec![rows, cols], data));
    g.mul(x, m)
}

/// Sinusoidal position table, added before each stack.
fn positions<T: Scalar>(len: usize, h: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * h];
    for pos in 0..len {
        for i in 0..h / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / h as f64);
            data[pos * h + 2 * i] = T::from_f64x(angle.sin());
            data[pos * h + 2 * i + 1] = T::from_f64x(angle.cos());
        }
    }
    Tensor::new(vec![len, h], data)
}

/// Additive attention mask over keys: 0 at real positions, -1e9 at PAD.
fn key_mask<T: Scalar>(mask: &[bool]) -> Tensor<T> {
    let data: Vec<T> = mask
        .iter()
        .map(|&m| if m { T::zero() } else { T::from_f64x(-1e9) })
        .collect();
    Tensor::new(vec![mask.len()], data)
}

/// Multi-head scaled dot-product self-attention with additive key mask.
fn attention<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    prefix: &str,
    x: NodeId,
    kmask: NodeId,
    heads: usize,
) -> Result<NodeId> {
    let (_, h) = g.value(x).dims2();
    let dh = h / heads;
    let mut proj = |nm: &str| -> Result<NodeId> {
        let w = param(g, params, &format!("{prefix}.{nm}"))?;
        let b = param(g, params, &format!("{prefix}.{nm}_b"))?;
        let y = g.matmul(x, w)?;
        g.add(y, b)
    };
    let q = proj("wq")?;
    let k = proj("wk")?;
    let v = proj("wv")?;

    let scale = T::from_f64x(1.0 / (dh as f64).sqrt());
    let mut ctx = None;
    for head in 0..heads {
        let (a, b) = (head * dh, (head + 1) * dh);
        let qh = g.slice_cols(q, a, b)?;
        let kh = g.slice_cols(k, a, b)?;
        let vh = g.slice_cols(v, a, b)?;
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale);
        let scores = g.add(scores, kmask)?;
        let attn = g.softmax(scores);
        let ctx_h = g.matmul(attn, vh)?;
        ctx = Some(match ctx {
            None => ctx_h,
            Some(c) => g.concat(c, ctx_h, 1)?,
        });
    }
    let ctx = ctx.expect("at least one head");
    let wo = param(g, params, &format!("{prefix}.wo"))?;
    let bo = param(g, params, &format!("{prefix}.wo_b"))?;
    let out = g.matmul(ctx, wo)?;
    g.add(out, bo)
}

/// One feed-forward transformer block: self-attention and a two-layer
/// 1-D convolution, each with residual + layer norm, masked after every
/// sublayer.
fn fft_block<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    prefix: &str,
    cfg: &ModelConfig,
    x: NodeId,
    mask: &[bool],
    kmask: NodeId,
) -> Result<NodeId> {
    let attn = attention(g, params, &format!("{prefix}.attn"), x, kmask, cfg.heads)?;
    let attn = g.dropout(attn, cfg.fft_dropout as f64);
    let x1 = g.add(x, attn)?;
    let x1 = layer_norm(g, params, &format!("{prefix}.ln1"), x1)?;
    let x1 = mask_rows(g, x1, mask)?;

    let c = g.unfold(x1, cfg.conv_kernel)?;
    let c = linear(g, params, &format!("{prefix}.conv1"), c)?;
    let c = g.relu(c);
    // re-mask between the convolutions: conv1's bias makes padded rows
    // nonzero, and conv2 would smear them into real positions
    let c = mask_rows(g, c, mask)?;
    let c = g.unfold(c, cfg.conv_kernel)?;
    let c = linear(g, params, &format!("{prefix}.conv2"), c)?;
    let c = g.dropout(c, cfg.fft_dropout as f64);
    let x2 = g.add(x1, c)?;
    let x2 = layer_norm(g, params, &format!("{prefix}.ln2"), x2)?;
    mask_rows(g, x2, mask)
}

/// Phoneme embeddings with the projected speaker embedding prepended as
/// position 0, before positions are added: (L, *) ids -> (L+1, H).
pub fn prepend_speaker<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    ids: &[usize],
    speaker: &[f32],
) -> Result<NodeId> {
    if speaker.len() != EMBEDDING_DIM {
        return Err(Error::invalid(format!(
            "speaker embedding has {} dimensions, expected {EMBEDDING_DIM}",
            speaker.len()
        )));
    }
    let spk = g.input(Tensor::new(
        vec![1, EMBEDDING_DIM],
        speaker.iter().map(|&x| T::from_f64x(x as f64)).collect(),
    ));
    let spk = linear(g, params, "speaker_proj", spk)?;
    let table = param(g, params, "phoneme_emb")?;
    let phon = g.embedding(table, ids)?;
    g.concat(spk, phon, 0)
}

/// Encoder: positions + FFT stack over the speaker-prepended sequence;
/// the speaker slot is stripped from the output. `mask` covers the L
/// phoneme positions (the speaker slot is always real).
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    cfg: &ModelConfig,
    seq: NodeId,
    mask: &[bool],
) -> Result<NodeId> {
    let (rows, _) = g.value(seq).dims2();
    if rows != mask.len() + 1 {
        return Err(Error::invalid(format!(
            "sequence of {rows} rows does not match mask of {} phonemes",
            mask.len()
        )));
    }
    if rows > cfg.max_phonemes {
        return Err(Error::invalid(format!(
            "{} phonemes + speaker slot exceed max_phonemes {}",
            mask.len(),
            cfg.max_phonemes
        )));
    }
    let mut full_mask = vec![true];
    full_mask.extend_from_slice(mask);

    let pos = g.input(positions(rows, cfg.hidden));
    let mut x = g.add(seq, pos)?;
    x = mask_rows(g, x, &full_mask)?;
    let kmask = g.input(key_mask(&full_mask));
    for l in 0..cfg.layers {
        x = fft_block(g, params, &format!("enc.{l}"), cfg, x, &full_mask, kmask)?;
    }
    g.slice_rows(x, 1, rows)
}

/// e = a_norm * v_A + v_norm * v_V, a (1, 256) node.
pub fn affect_vector<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    affect: AffectPoint,
) -> Result<NodeId> {
    let (a, v) = affect.normalized();
    let va = param(g, params, "pc.v_a")?;
    let vv = param(g, params, "pc.v_v")?;
    let va = g.scale(va, T::from_f64x(a as f64));
    let vv = g.scale(vv, T::from_f64x(v as f64));
    g.add(va, vv)
}

/// E2 = affine(concat(E1_i, e)) per position, masked.
pub fn condition<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    e1: NodeId,
    e: NodeId,
    mask: &[bool],
) -> Result<NodeId> {
    let (rows, _) = g.value(e1).dims2();
    let e_rows = g.gather_rows(e, &vec![0; rows])?;
    let cat = g.concat(e1, e_rows, 1)?;
    let e2 = linear(g, params, "pc.cond", cat)?;
    mask_rows(g, e2, mask)
}

/// Variance predictor head (duration/pitch/energy): two 1-D conv layers
/// with ReLU, layer norm and dropout, then a scalar projection. (N, H) ->
/// (N, 1).
pub fn predict_scalar<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    cfg: &ModelConfig,
    prefix: &str,
    x: NodeId,
    mask: &[bool],
) -> Result<NodeId> {
    let mut h = x;
    for conv in ["conv1", "conv2"] {
        h = g.unfold(h, cfg.vp_kernel)?;
        h = linear(g, params, &format!("{prefix}.{conv}"), h)?;
        h = g.relu(h);
        let ln = if conv == "conv1" { "ln1" } else { "ln2" };
        h = layer_norm(g, params, &format!("{prefix}.{ln}"), h)?;
        h = g.dropout(h, cfg.vp_dropout as f64);
        h = mask_rows(g, h, mask)?;
    }
    linear(g, params, &format!("{prefix}.out"), h)
}

/// Repeat hidden state i exactly durations[i] times.
pub fn length_regulate<T: Scalar>(
    g: &mut Graph<T>,
    hidden: NodeId,
    durations: &[usize],
) -> Result<NodeId> {
    let (rows, _) = g.value(hidden).dims2();
    if durations.len() != rows {
        return Err(Error::ShapeMismatch {
            op: "length_regulate",
            lhs: vec![rows],
            rhs: vec![durations.len()],
        });
    }
    let mut indices = Vec::with_capacity(durations.iter().sum());
    for (i, &d) in durations.iter().enumerate() {
        indices.extend(std::iter::repeat(i).take(d));
    }
    if indices.is_empty() {
        return Err(Error::invalid("length regulation produced zero frames"));
    }
    g.gather_rows(hidden, &indices)
}

/// Bucketized pitch/energy embeddings added to the regulated E1.
fn add_variances<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    cfg: &ModelConfig,
    stats: &FeatureStats,
    reg_e1: NodeId,
    pitch: &[f32],
    energy: &[f32],
) -> Result<NodeId> {
    let (t, _) = g.value(reg_e1).dims2();
    if pitch.len() != t || energy.len() != t {
        return Err(Error::ShapeMismatch {
            op: "add_variances",
            lhs: vec![t],
            rhs: vec![pitch.len(), energy.len()],
        });
    }
    let p_ids: Vec<usize> = pitch
        .iter()
        .map(|&z| bucketize(z, stats.pitch_norm_min, stats.pitch_norm_max, cfg.buckets))
        .collect();
    let e_ids: Vec<usize> = energy
        .iter()
        .map(|&z| bucketize(z, stats.energy_norm_min, stats.energy_norm_max, cfg.buckets))
        .collect();
    let p_table = param(g, params, "pitch_emb")?;
    let e_table = param(g, params, "energy_emb")?;
    let p_emb = g.embedding(p_table, &p_ids)?;
    let e_emb = g.embedding(e_table, &e_ids)?;
    let x = g.add(reg_e1, p_emb)?;
    g.add(x, e_emb)
}

/// Decoder: positions + FFT stack + mel projection. (T, H) -> (T, mel).
pub fn decode<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    cfg: &ModelConfig,
    x: NodeId,
) -> Result<NodeId> {
    let (t, _) = g.value(x).dims2();
    if t == 0 {
        return Err(Error::invalid("cannot decode an empty frame sequence"));
    }
    let mask = vec![true; t];
    let pos = g.input(positions(t, cfg.hidden));
    let mut h = g.add(x, pos)?;
    let kmask = g.input(key_mask(&mask));
    for l in 0..cfg.layers {
        h = fft_block(g, params, &format!("dec.{l}"), cfg, h, &mask, kmask)?;
    }
    linear(g, params, "mel_proj", h)
}

fn node_values_f32<T: Scalar>(g: &Graph<T>, id: NodeId) -> Vec<f32> {
    g.value(id).data().iter().map(|&x| x.to_f64x() as f32).collect()
}

/// Full model forward for one utterance.
///
/// Stage 1 routes E1 into all three predictors; stage 2 (and inference)
/// conditions E1 on the affect vector to form E2 and routes E2 into the
/// predictors. The decoder always consumes regulated E1 plus variance
/// embeddings, so affect reaches the output only through the predicted
/// durations, pitch, and energy.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    params: &BTreeMap<String, Tensor<T>>,
    cfg: &ModelConfig,
    stats: &FeatureStats,
    input: &ForwardInput,
    stage: Stage,
    teacher: &Teacher,
) -> Result<ForwardOutput> {
    if input.mask.len() != input.phoneme_ids.len() {
        return Err(Error::invalid("mask and phoneme ids differ in length"));
    }
    let seq = prepend_speaker(g, params, &input.phoneme_ids, &input.speaker)?;
    let e1 = encode(g, params, cfg, seq, &input.mask)?;

    let (e2, pred_in) = match stage {
        Stage::One => (None, e1),
        Stage::Two => {
            let affect = input.affect.ok_or_else(|| {
                Error::invalid("stage-2 forward requires an arousal-valence point")
            })?;
            let e = affect_vector(g, params, affect)?;
            let e2 = condition(g, params, e1, e, &input.mask)?;
            (Some(e2), e2)
        }
    };

    let log_dur = predict_scalar(g, params, cfg, "dur_pred", pred_in, &input.mask)?;
    let durations = match &teacher.durations {
        Some(d) => {
            if d.len() != input.phoneme_ids.len() {
                return Err(Error::invalid(format!(
                    "{} durations for {} phonemes",
                    d.len(),
                    input.phoneme_ids.len()
                )));
            }
            d.clone()
        }
        None => durations_from_log(&node_values_f32(g, log_dur), &input.mask),
    };

    let reg_pred = length_regulate(g, pred_in, &durations)?;
    let t: usize = durations.iter().sum();
    let frame_mask = vec![true; t];
    let pitch = predict_scalar(g, params, cfg, "pitch_pred", reg_pred, &frame_mask)?;
    let energy = predict_scalar(g, params, cfg, "energy_pred", reg_pred, &frame_mask)?;

    let pitch_vals = match &teacher.pitch {
        Some(p) => p.clone(),
        None => node_values_f32(g, pitch),
    };
    let energy_vals = match &teacher.energy {
        Some(e) => e.clone(),
        None => node_values_f32(g, energy),
    };
    if pitch_vals.len() != t || energy_vals.len() != t {
        return Err(Error::invalid(format!(
            "teacher pitch/energy of {}/{} frames for {t} regulated frames",
            pitch_vals.len(),
            energy_vals.len()
        )));
    }

    let reg_e1 = match stage {
        Stage::One => reg_pred,
        Stage::Two => length_regulate(g, e1, &durations)?,
    };
    let dec_in = add_variances(g, params, cfg, stats, reg_e1, &pitch_vals, &energy_vals)?;
    let mel = decode(g, params, cfg, dec_in)?;

    Ok(ForwardOutput {
        e1,
        e2,
        log_dur,
        pitch,
        energy,
        mel,
        durations,
    })
}
