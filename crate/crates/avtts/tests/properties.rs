//! Property-based tests for the structural laws the pipeline relies on:
//! length-regulator algebra, STFT frame counting, duration rounding, and
//! bucketization bounds.

use avtts::audio::{mel_spectrogram, AudioConfig};
use avtts::model::{bucketize, durations_from_log, length_regulate};
use avtts::nn::{Graph, Tensor};
use proptest::prelude::*;

fn regulate(rows: &[Vec<f32>], durations: &[usize]) -> Vec<Vec<f32>> {
    let h = rows[0].len();
    let data: Vec<f32> = rows.iter().flatten().copied().collect();
    let mut g: Graph<f32> = Graph::new();
    let x = g.input(Tensor::new(vec![rows.len(), h], data));
    let y = length_regulate(&mut g, x, durations).unwrap();
    g.value(y).data().chunks(h).map(|c| c.to_vec()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regulator_output_length_is_duration_sum(
        rows in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 4), 1..8),
        seed in 0u64..1000,
    ) {
        let mut rng_state = seed;
        let durations: Vec<usize> = (0..rows.len())
            .map(|_| {
                rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
                ((rng_state >> 33) % 4) as usize
            })
            .collect();
        prop_assume!(durations.iter().sum::<usize>() > 0);
        let out = regulate(&rows, &durations);
        prop_assert_eq!(out.len(), durations.iter().sum::<usize>());
        // each output frame is an exact copy of its source phoneme row
        let mut idx = 0;
        for (i, &d) in durations.iter().enumerate() {
            for _ in 0..d {
                prop_assert_eq!(&out[idx], &rows[i]);
                idx += 1;
            }
        }
    }

    #[test]
    fn regulator_is_concat_homomorphic(
        a in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 1..5),
        b in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 1..5),
        da in prop::collection::vec(1usize..4, 1..5),
        db in prop::collection::vec(1usize..4, 1..5),
    ) {
        prop_assume!(da.len() >= a.len() && db.len() >= b.len());
        let da = &da[..a.len()];
        let db = &db[..b.len()];
        let joint: Vec<Vec<f32>> = a.iter().chain(&b).cloned().collect();
        let d_all: Vec<usize> = da.iter().chain(db).copied().collect();
        let whole = regulate(&joint, &d_all);
        let mut parts = regulate(&a, da);
        parts.extend(regulate(&b, db));
        prop_assert_eq!(whole, parts);
    }

    #[test]
    fn frame_count_formula_holds(extra in 0usize..20_000) {
        let cfg = AudioConfig::default();
        let n = cfg.fft_size + extra;
        let samples: Vec<f32> = (0..n)
            .map(|i| 0.3 * (2.0 * std::f32::consts::PI * 150.0 * i as f32 / cfg.sample_rate as f32).sin())
            .collect();
        let mel = mel_spectrogram(&samples, &cfg).unwrap();
        prop_assert_eq!(mel.n_frames, 1 + n / cfg.hop);
    }

    #[test]
    fn duration_rounding_never_negative_and_pads_are_zero(
        logs in prop::collection::vec(-3.0f32..5.0, 1..10),
        real in 1usize..10,
    ) {
        prop_assume!(real <= logs.len());
        let mut mask = vec![true; real];
        mask.resize(logs.len(), false);
        let d = durations_from_log(&logs, &mask);
        prop_assert_eq!(d.len(), logs.len());
        for (i, &di) in d.iter().enumerate() {
            if i >= real {
                prop_assert_eq!(di, 0, "pad position got frames");
            }
        }
        // an utterance never collapses to zero frames
        prop_assert!(d.iter().sum::<usize>() >= 1);
    }

    #[test]
    fn bucketize_stays_in_range(x in -100.0f32..100.0, min in -5.0f32..0.0, span in 0.1f32..10.0) {
        let b = bucketize(x, min, min + span, 256);
        prop_assert!(b < 256);
    }

    #[test]
    fn bucketize_is_monotone(x in -5.0f32..5.0, dx in 0.0f32..5.0) {
        let (min, max) = (-5.0, 10.0);
        prop_assert!(bucketize(x, min, max, 256) <= bucketize(x + dx, min, max, 256));
    }
}
