//! Black-box tests of the `avtts` binary: the full pipeline on a tiny
//! synthetic corpus, plus exit-code and warning behavior.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn avtts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avtts"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

const TINY: &[&str] = &[
    "--set", "model.hidden=32",
    "--set", "model.layers=1",
    "--set", "model.heads=2",
    "--set", "model.conv_filter=48",
    "--set", "model.conv_kernel=3",
    "--set", "model.vp_channels=32",
    "--set", "model.vp_kernel=3",
    "--set", "model.buckets=64",
    "--set", "model.max_phonemes=64",
    "--set", "train.max_steps=3",
    "--set", "train.batch_size=4",
    "--set", "train.warmup_steps=10",
    "--set", "train.checkpoint_interval=100",
    "--set", "train.log_interval=1",
    "--set", "train.lr=0.001",
];

/// gen-corpus -> prepare -> stage 1 -> stage 2, returning the run dirs.
fn pipeline(root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let corpus = root.join("corpus");
    let cache = root.join("cache");
    let s1 = root.join("s1");
    let s2 = root.join("s2");
    ok(&avtts(&[
        "gen-corpus", "--out", corpus.to_str().unwrap(),
        "--utts", "8", "--speakers", "2", "--seed", "5", "--affect",
    ]));
    ok(&avtts(&[
        "prepare",
        "--manifest", corpus.join("manifest.jsonl").to_str().unwrap(),
        "--out", cache.to_str().unwrap(),
    ]));
    let mut args = vec![
        "train", "--stage", "1",
        "--data", cache.to_str().unwrap(),
        "--out", s1.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    ok(&avtts(&args));
    let init = s1.join("stage1.ckpt");
    let mut args = vec![
        "train", "--stage", "2",
        "--data", cache.to_str().unwrap(),
        "--init", init.to_str().unwrap(),
        "--out", s2.to_str().unwrap(),
    ];
    args.extend_from_slice(TINY);
    ok(&avtts(&args));
    (cache, s1, s2)
}

fn write_embedding(path: &Path) {
    let mut v: Vec<f32> = (0..256).map(|i| ((i % 13) as f32) - 6.0).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    std::fs::write(path, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn full_pipeline_and_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    let (cache, s1, s2) = pipeline(dir.path());
    assert!(cache.join("effective-config.toml").exists());
    assert!(cache.join("discards.txt").exists());
    assert!(s1.join("effective-config.toml").exists());
    assert!(s1.join("metrics.csv").exists());

    let emb = dir.path().join("spk.json");
    write_embedding(&emb);
    let ckpt = s2.join("stage2.ckpt");

    // synthesis is deterministic given the same inputs and seed
    let wav_a = dir.path().join("a.wav");
    let wav_b = dir.path().join("b.wav");
    for w in [&wav_a, &wav_b] {
        ok(&avtts(&[
            "synthesize",
            "--checkpoint", ckpt.to_str().unwrap(),
            "--text", "the cat sat",
            "--speaker-embedding", emb.to_str().unwrap(),
            "--arousal", "6", "--valence", "3",
            "--out", w.to_str().unwrap(),
        ]));
    }
    let a = std::fs::read(&wav_a).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, std::fs::read(&wav_b).unwrap());

    // --teacher-force makes the mel independent of the requested affect
    let mel_low = dir.path().join("low.json");
    let mel_high = dir.path().join("high.json");
    for (av, mel) in [("1", &mel_low), ("7", &mel_high)] {
        ok(&avtts(&[
            "synthesize",
            "--checkpoint", ckpt.to_str().unwrap(),
            "--text", "the cat sat",
            "--speaker-embedding", emb.to_str().unwrap(),
            "--arousal", av, "--valence", av,
            "--teacher-force",
            "--out", dir.path().join("tf.wav").to_str().unwrap(),
            "--dump-mel", mel.to_str().unwrap(),
        ]));
    }
    assert_eq!(
        std::fs::read(&mel_low).unwrap(),
        std::fs::read(&mel_high).unwrap(),
        "teacher-forced mels must not depend on affect"
    );

    // a stage-1 checkpoint is accepted with a warning
    let out = avtts(&[
        "synthesize",
        "--checkpoint", s1.join("stage1.ckpt").to_str().unwrap(),
        "--text", "hi there",
        "--speaker-embedding", emb.to_str().unwrap(),
        "--out", dir.path().join("s1.wav").to_str().unwrap(),
    ]);
    ok(&out);
    assert!(stderr(&out).contains("affect flags ignored"), "{}", stderr(&out));

    // out-of-range affect is clamped with a warning
    let out = avtts(&[
        "synthesize",
        "--checkpoint", ckpt.to_str().unwrap(),
        "--text", "hi there",
        "--speaker-embedding", emb.to_str().unwrap(),
        "--arousal", "9.5",
        "--out", dir.path().join("c.wav").to_str().unwrap(),
    ]);
    ok(&out);
    assert!(stderr(&out).contains("clamped"), "{}", stderr(&out));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = avtts(&["gen-corpus", "--out", dir.path().to_str().unwrap(), "--utts", "0"]);
    assert_eq!(code(&out), 1);

    let out = avtts(&["verify", "--suite", "everything"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));

    let out = avtts(&[
        "train", "--stage", "2",
        "--data", dir.path().to_str().unwrap(),
        "--out", dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "stage 2 without --init: {}", stderr(&out));

    let out = avtts(&[
        "train", "--stage", "1",
        "--data", dir.path().to_str().unwrap(),
        "--out", dir.path().join("o").to_str().unwrap(),
        "--set", "train.learning_rate=0.1",
    ]);
    assert_eq!(code(&out), 1, "unknown config key: {}", stderr(&out));

    let out = avtts(&["no-such-command"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // training from an unprepared data directory
    let out = avtts(&[
        "train", "--stage", "1",
        "--data", dir.path().join("nope").to_str().unwrap(),
        "--out", dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));

    // synthesizing from a missing checkpoint
    let emb = dir.path().join("spk.json");
    write_embedding(&emb);
    let out = avtts(&[
        "synthesize",
        "--checkpoint", dir.path().join("nope.ckpt").to_str().unwrap(),
        "--text", "hi",
        "--speaker-embedding", emb.to_str().unwrap(),
        "--out", dir.path().join("x.wav").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn help_exits_0() {
    let out = avtts(&["--help"]);
    assert_eq!(code(&out), 0);
}
