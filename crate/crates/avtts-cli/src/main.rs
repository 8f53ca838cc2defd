//! `avtts` command line: synthetic corpus generation, feature
//! preparation, two-stage training, synthesis, and the acceptance suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 verification
//! failure.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avtts::audio::{
    griffin_lim, speaker_fingerprint, wav, AudioConfig, MelSpectrogram, EMBEDDING_DIM,
};
use avtts::dataset::cache::{load, load_embedding, prepare};
use avtts::dataset::{gen_synthetic_corpus, read_manifest, AffectPoint};
use avtts::model::{forward, ForwardInput, Stage, Teacher};
use avtts::nn::Graph;
use avtts::text::{g2p, Lexicon, PhonemeInventory};
use avtts::train::{load_checkpoint, train_stage1, train_stage2};
use avtts::verify::run_suite;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_VERIFY: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: message.into() }
    }
    pub fn data(message: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: message.into() }
    }
}

impl From<avtts::Error> for CliError {
    fn from(e: avtts::Error) -> Self {
        let code = match e {
            avtts::Error::Invalid(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "avtts", version, about = "Multi-speaker TTS with arousal-valence prosody control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus with known prosody rules.
    GenCorpus(GenCorpusArgs),
    /// Extract features and alignments into a training cache.
    Prepare(PrepareArgs),
    /// Train stage 1 (backbone) or stage 2 (prosody control).
    Train(TrainArgs),
    /// Synthesize a WAV from text, a speaker reference, and affect.
    Synthesize(SynthesizeArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    utts: usize,
    #[arg(long, default_value_t = 2)]
    speakers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attach arousal-valence annotations to every utterance.
    #[arg(long)]
    affect: bool,
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feature cache output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override any config field, e.g. --set audio.hop=128.
    #[arg(long = "set")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    stage: u32,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prepared feature cache directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to initialize from (required for stage 2; resumes stage 1).
    #[arg(long)]
    init: Option<PathBuf>,
    /// Run directory for checkpoints, metrics, and the effective config.
    #[arg(long)]
    out: PathBuf,
    /// Override any config field, e.g. --set train.lr=2e-3.
    #[arg(long = "set")]
    set: Vec<String>,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    text: String,
    /// Speaker reference waveform (>= 0.5 s).
    #[arg(long, conflicts_with = "speaker_embedding")]
    speaker_wav: Option<PathBuf>,
    /// Precomputed speaker embedding (JSON array of 256 floats).
    #[arg(long)]
    speaker_embedding: Option<PathBuf>,
    /// Arousal on the raw 1-7 scale.
    #[arg(long, default_value_t = 4.0)]
    arousal: f32,
    /// Valence on the raw 1-7 scale.
    #[arg(long, default_value_t = 4.0)]
    valence: f32,
    #[arg(long)]
    out: PathBuf,
    /// Also write the mel spectrogram as JSON.
    #[arg(long)]
    dump_mel: Option<PathBuf>,
    /// Debug: force variances from a neutral (4,4) pass so the decoder
    /// output is independent of the requested affect.
    #[arg(long)]
    teacher_force: bool,
    /// Vocoder phase-init seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    /// gradients | dsp | invariants | all
    #[arg(long, default_value = "all")]
    suite: String,
}

fn cmd_gen_corpus(a: &GenCorpusArgs) -> Result<(), CliError> {
    if a.utts == 0 {
        return Err(CliError::usage("--utts must be at least 1"));
    }
    if a.speakers == 0 {
        return Err(CliError::usage("--speakers must be at least 1"));
    }
    let corpus = gen_synthetic_corpus(&a.out, a.utts, a.speakers, a.seed, a.affect)?;
    println!(
        "wrote {} utterances for {} speakers; manifest: {}",
        corpus.utterances.len(),
        a.speakers,
        corpus.manifest_path.display()
    );
    Ok(())
}

fn cmd_prepare(a: &PrepareArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref(), &a.set)?;
    let utts = read_manifest(&a.manifest)?;
    let report = prepare(&utts, &cfg.audio, &PhonemeInventory::standard(), &a.out)?;
    cfg.echo(&a.out)?;
    let log: String = report
        .discarded
        .iter()
        .map(|(id, why)| format!("{id}\t{why}\n"))
        .collect();
    std::fs::write(a.out.join("discards.txt"), log).map_err(avtts::Error::from)?;
    println!("kept {} utterances, discarded {}", report.kept.len(), report.discarded.len());
    if report.kept.is_empty() {
        return Err(CliError::data("every utterance was discarded"));
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    if !matches!(a.stage, 1 | 2) {
        return Err(CliError::usage(format!("--stage must be 1 or 2, got {}", a.stage)));
    }
    if a.stage == 2 && a.init.is_none() {
        return Err(CliError::usage("stage 2 requires --init with a checkpoint"));
    }
    let cfg = RunConfig::load(a.config.as_deref(), &a.set)?;
    let cache = load(&a.data)?;
    cfg.echo(&a.out)?;
    let init = match &a.init {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let (ckpt, _) = match a.stage {
        1 => train_stage1(&cache, cfg.model.clone(), &cfg.train, init, &a.out)?,
        2 => {
            let init = init.expect("checked above");
            train_stage2(&cache, init, &cfg.train, &a.out)?
        }
        _ => unreachable!("validated above"),
    };
    println!(
        "stage {} finished at step {}; checkpoint: {}",
        ckpt.stage,
        ckpt.step,
        a.out.join(format!("stage{}.ckpt", ckpt.stage)).display()
    );
    Ok(())
}

fn load_speaker(a: &SynthesizeArgs, acfg: &AudioConfig) -> Result<Vec<f32>, CliError> {
    match (&a.speaker_wav, &a.speaker_embedding) {
        (Some(w), None) => {
            let samples = wav::read_wav(w, acfg.sample_rate)?;
            Ok(speaker_fingerprint(&samples, acfg)?.values)
        }
        (None, Some(e)) => Ok(load_embedding(e)?.values),
        _ => Err(CliError::usage(
            "provide exactly one of --speaker-wav or --speaker-embedding",
        )),
    }
}

fn cmd_synthesize(a: &SynthesizeArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let params = ckpt.params()?;
    let acfg = AudioConfig::default();
    if ckpt.config.mel_bins != acfg.mel_bins {
        return Err(CliError::data(format!(
            "checkpoint predicts {} mel bins but the vocoder expects {}",
            ckpt.config.mel_bins, acfg.mel_bins
        )));
    }

    if AffectPoint::was_clamped(a.arousal, a.valence) {
        eprintln!(
            "warning: arousal/valence clamped to the [1, 7] scale (got {}, {})",
            a.arousal, a.valence
        );
    }
    let affect = AffectPoint::new(a.arousal, a.valence);
    let stage = if ckpt.stage == 1 {
        eprintln!("warning: stage-1 checkpoint has no prosody control; affect flags ignored");
        Stage::One
    } else {
        Stage::Two
    };

    let speaker = load_speaker(a, &acfg)?;
    if speaker.len() != EMBEDDING_DIM {
        return Err(CliError::data(format!(
            "speaker embedding has {} values, expected {EMBEDDING_DIM}",
            speaker.len()
        )));
    }
    let seq = g2p(&a.text, &Lexicon::bundled(), &PhonemeInventory::standard())?;
    let input = ForwardInput {
        mask: seq.mask.iter().map(|&m| m > 0.0).collect(),
        phoneme_ids: seq.ids,
        speaker,
        affect: matches!(stage, Stage::Two).then_some(affect),
    };

    // --teacher-force pins durations/pitch/energy to a neutral (4,4) pass
    // so the mel depends only on text and speaker, not on affect.
    let teacher = if a.teacher_force {
        let mut g: Graph<f32> = Graph::new();
        let neutral = ForwardInput {
            affect: matches!(stage, Stage::Two).then_some(AffectPoint::new(4.0, 4.0)),
            ..input.clone()
        };
        let out = forward(&mut g, &params.tensors, &ckpt.config, &ckpt.stats, &neutral, stage, &Teacher::default())?;
        Teacher {
            pitch: Some(g.value(out.pitch).data().to_vec()),
            energy: Some(g.value(out.energy).data().to_vec()),
            durations: Some(out.durations),
        }
    } else {
        Teacher::default()
    };

    let mut g: Graph<f32> = Graph::new();
    let out = forward(&mut g, &params.tensors, &ckpt.config, &ckpt.stats, &input, stage, &teacher)?;
    let mel_tensor = g.value(out.mel);
    let (t, bins) = mel_tensor.dims2();
    let mel = MelSpectrogram {
        frames: mel_tensor.data().to_vec(),
        n_frames: t,
        n_bins: bins,
    };

    if let Some(p) = &a.dump_mel {
        dump_mel(p, &mel)?;
    }
    let samples = griffin_lim(&mel, &acfg, 60, a.seed);
    wav::write_wav(&a.out, &samples, acfg.sample_rate)?;
    println!(
        "wrote {} ({} frames, {:.2} s)",
        a.out.display(),
        t,
        samples.len() as f32 / acfg.sample_rate as f32
    );
    Ok(())
}

fn dump_mel(path: &Path, mel: &MelSpectrogram) -> Result<(), CliError> {
    let json = serde_json::json!({
        "n_frames": mel.n_frames,
        "n_bins": mel.n_bins,
        "frames": mel.frames,
    });
    std::fs::write(path, serde_json::to_string(&json).map_err(avtts::Error::from)?)
        .map_err(avtts::Error::from)?;
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), CliError> {
    let results = run_suite(&a.suite)?;
    let mut all_pass = true;
    for r in &results {
        println!("{r}");
        all_pass &= r.pass;
    }
    if all_pass {
        println!("suite '{}': all {} criteria passed", a.suite, results.len());
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_VERIFY,
            message: format!("suite '{}' had failing criteria", a.suite),
        })
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Cmd::GenCorpus(a) => cmd_gen_corpus(a),
        Cmd::Prepare(a) => cmd_prepare(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Synthesize(a) => cmd_synthesize(a),
        Cmd::Verify(a) => cmd_verify(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let is_help =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if is_help { ExitCode::SUCCESS } else { ExitCode::from(EXIT_USAGE) };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
