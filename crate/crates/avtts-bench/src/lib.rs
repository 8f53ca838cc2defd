//! Shared fixtures for the benchmarks; see `benches/kernels.rs`.

use avtts::model::ModelConfig;

/// The model size used by the forward-pass benchmark: small enough to
/// iterate quickly, large enough to exercise the attention and conv
/// kernels realistically.
pub fn bench_model() -> ModelConfig {
    ModelConfig {
        hidden: 64,
        layers: 2,
        heads: 2,
        conv_filter: 128,
        conv_kernel: 9,
        vp_channels: 64,
        vp_kernel: 3,
        buckets: 256,
        max_phonemes: 128,
        mel_bins: 80,
        ..Default::default()
    }
}
