//! Run configuration: one TOML document covering every module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CorpusConfig, MelConfig};
use crate::model::ModelConfig;
use crate::schedule::ScheduleConfig;
use crate::train::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub precision: Precision,
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub data: CorpusConfig,
    pub mel: MelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("runs/desk"),
            precision: Precision::F32,
            schedule: ScheduleConfig::desk(),
            model: ModelConfig::desk(),
            data: CorpusConfig::default(),
            mel: MelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("byte {}..{}", s.start, s.end))
                .unwrap_or_else(|| "config".into());
            Error::config(field, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Per-module checks plus the cross-module consistency rules.
    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        self.model.validate()?;
        self.data.validate()?;
        self.mel.validate()?;
        self.train.validate(self.schedule.steps)?;
        let m = &self.model;
        if m.samples_per_frame != self.data.samples_per_frame {
            return Err(Error::config(
                "model.samples_per_frame",
                format!("{} differs from data.samples_per_frame {}", m.samples_per_frame, self.data.samples_per_frame),
            ));
        }
        if m.vocab_size != self.data.vocab_size() {
            return Err(Error::config(
                "model.vocab_size",
                format!("{} differs from the corpus vocabulary {}", m.vocab_size, self.data.vocab_size()),
            ));
        }
        if self.mel.sample_rate != self.data.sample_rate {
            return Err(Error::config(
                "mel.sample_rate",
                format!("{} differs from data.sample_rate {}", self.mel.sample_rate, self.data.sample_rate),
            ));
        }
        if self.mel.hop != self.data.samples_per_frame {
            return Err(Error::config(
                "mel.hop",
                format!("{} must equal samples_per_frame {}", self.mel.hop, self.data.samples_per_frame),
            ));
        }
        if m.multitask && m.mel_bins != self.mel.bins {
            return Err(Error::config(
                "model.mel_bins",
                format!("{} differs from mel.bins {}", m.mel_bins, self.mel.bins),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml("seed = 7\n[train]\nsteps = 3\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.steps, 3);
        assert_eq!(c.model, ModelConfig::desk());
    }

    #[test]
    fn cross_module_errors_name_the_field() {
        let mut c = RunConfig::default();
        c.model.samples_per_frame = 80;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("model.ublocks") || err.contains("samples_per_frame"), "{err}");
        let mut c = RunConfig::default();
        c.mel.hop = 20;
        assert!(c.validate().unwrap_err().to_string().contains("mel.hop"));
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }
}
