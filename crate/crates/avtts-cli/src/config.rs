//! Run configuration: a TOML file with `[audio]`, `[model]`, and
//! `[train]` sections, every field overridable from the command line
//! with repeated `--set section.key=value` flags. Unknown keys are
//! rejected, and the effective merged config is echoed into the run
//! directory so every run records exactly what it used.

use std::path::Path;

use avtts::audio::AudioConfig;
use avtts::model::ModelConfig;
use avtts::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub audio: AudioConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            audio: AudioConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Load `path` (or defaults when absent), apply `--set` overrides,
    /// and validate.
    pub fn load(path: Option<&Path>, sets: &[String]) -> Result<RunConfig, CliError> {
        let mut value: toml::Value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::data(format!("cannot read config {}: {e}", p.display())))?;
                text.parse()
                    .map_err(|e| CliError::data(format!("config {}: {e}", p.display())))?
            }
            None => toml::Value::Table(Default::default()),
        };
        for s in sets {
            apply_set(&mut value, s)?;
        }
        let cfg: RunConfig = value
            .try_into()
            .map_err(|e| CliError::usage(format!("bad config: {e}")))?;
        cfg.audio.validate().map_err(CliError::from)?;
        cfg.model.validate().map_err(CliError::from)?;
        cfg.train.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    /// Write the merged config to `dir/effective-config.toml`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(avtts::Error::from)?;
        let text = toml::to_string_pretty(self)
            .map_err(|e| CliError::data(format!("serializing config: {e}")))?;
        std::fs::write(dir.join("effective-config.toml"), text).map_err(avtts::Error::from)?;
        Ok(())
    }
}

/// `--set train.lr=2e-3` style override: dotted path, TOML-parsed value.
fn apply_set(root: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--set expects key=value, got '{spec}'")))?;
    // parse the raw text as a TOML value; fall back to a string literal
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("--set key '{path}' is malformed")));
    }
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::usage(format!("--set key '{path}' does not name a table")))?;
        node = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| CliError::usage(format!("--set key '{path}' does not name a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_when_no_file() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
    }

    #[test]
    fn set_overrides_any_field() {
        let cfg = RunConfig::load(
            None,
            &["train.lr=0.002".into(), "model.hidden=64".into(), "audio.hop=128".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.002);
        assert_eq!(cfg.model.hidden, 64);
        assert_eq!(cfg.audio.hop, 128);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::load(None, &["train.learning_rate=0.1".into()]).unwrap_err();
        assert_eq!(err.code, 1, "{}", err.message);
    }

    #[test]
    fn file_then_set_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(&p, "[train]\nlr = 0.01\nseed = 7\n").unwrap();
        let cfg = RunConfig::load(Some(&p), &["train.lr=0.5".into()]).unwrap();
        assert_eq!(cfg.train.lr, 0.5);
        assert_eq!(cfg.train.seed, 7);
    }

    #[test]
    fn invalid_value_rejected() {
        let err = RunConfig::load(None, &["model.hidden=0".into()]).unwrap_err();
        assert_ne!(err.code, 0);
    }
}
