use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gain_core::corpus::ContextMode;
use gain_core::experiment::TaskConfig;
use gain_core::model::ModelConfig;
use gain_core::train::TrainConfig;
use gain_core::GainError;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSettings {
    pub sentences: usize,
    pub context: ContextMode,
    pub filler_vocab: usize,
    /// Fresh random entity strings instead of gazetteer samples.
    pub fresh_entities: bool,
}

impl Default for SynthSettings {
    fn default() -> SynthSettings {
        SynthSettings { sentences: 1000, context: ContextMode::Rich, filler_vocab: 60, fresh_entities: false }
    }
}

/// Everything a run depends on. Defaults, then the `--config` file, then
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub task: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthSettings,
    pub sweep_rates: Vec<f64>,
    /// Repair orphan `I-X` tags on input instead of rejecting the file.
    pub lenient_bio: bool,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: DEFAULT_SEED,
            task: TaskConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSettings::default(),
            sweep_rates: vec![0.0, 0.3, 0.5, 0.7, 1.0],
            lenient_bio: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| GainError::Config(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(r) = self.sweep_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(GainError::Config(format!("sweep rate {r} outside [0, 1]")).into());
        }
        Ok(())
    }
}

/// Output directory of one command, holding the resolved config.
pub struct RunDir {
    pub path: PathBuf,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
}

impl RunDir {
    pub fn create(path: &Path, command: &str, cfg: &RunConfig) -> Result<RunDir> {
        fs::create_dir_all(path).map_err(GainError::from)?;
        let dir = RunDir { path: path.to_path_buf() };
        let record = RunRecord { tool: "gain", version: env!("CARGO_PKG_VERSION"), command, config: cfg };
        dir.write_json("run.json", &record)?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.file(name), text).map_err(GainError::from)?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"seed": 7, "model": {"hidden": 16}, "train": {"stage2_epochs": 3}}"#).unwrap();
        let cfg = RunConfig::load(Some(&p), None).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.model.hidden, cfg.train.stage2_epochs), (7, 7, 16, 3));
        assert_eq!(cfg.model.embed_dim, ModelConfig::default().embed_dim);
        assert_eq!(RunConfig::load(Some(&p), Some(9)).unwrap().train.seed, 9);
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"sede": 7}"#).unwrap();
        let err = RunConfig::load(Some(&p), None).unwrap_err();
        assert!(matches!(err.downcast_ref::<GainError>(), Some(GainError::Config(_))));
    }
}
