//! Non-autoregressive multi-speaker TTS with continuous arousal-valence
//! prosody control.
//!
//! The crate is organized bottom-up:
//! - [`nn`]: dense-tensor engine with reverse-mode differentiation and Adam
//! - [`text`]: lexicon-based grapheme-to-phoneme frontend
//! - [`audio`]: mel spectrograms, pitch/energy extraction, Griffin-Lim,
//!   speaker fingerprints, WAV I/O
//! - [`dataset`]: manifests, forced-alignment ingestion, synthetic corpus
//!   generation, batching
//! - [`model`]: encoder / prosody-control block / variance adaptor / decoder
//! - [`train`]: two-stage training, losses, checkpoints
//! - [`verify`]: the executable acceptance suite

pub mod audio;
pub mod dataset;
pub mod error;
pub mod model;
pub mod nn;
pub mod text;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
