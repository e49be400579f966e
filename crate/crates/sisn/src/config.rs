//! TOML run-configuration files.
//!
//! Every key is optional and falls back to a documented default; unknown keys
//! are rejected so typos fail loudly. Example:
//!
//! ```toml
//! [model]
//! num_esag = 10
//! num_isab = 10
//! channels = 64
//! splits = 2
//! scale = 4
//! reduction = 4
//!
//! [train]
//! epochs = 200
//! batch_size = 8
//! base_lr = 1e-4
//! halve_every = 50
//! seed = 0
//! lr_patch = 48
//! checkpoint_every = 1
//!
//! [data]
//! ratios = [8, 1, 1]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SisnError};
use crate::model::SisnConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub num_esag: usize,
    pub num_isab: usize,
    pub channels: usize,
    pub splits: usize,
    pub scale: usize,
    pub reduction: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = SisnConfig::paper_default(4);
        ModelSection {
            num_esag: d.num_esag,
            num_isab: d.num_isab,
            channels: d.channels,
            splits: d.splits,
            scale: d.scale,
            reduction: d.reduction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub halve_every: usize,
    pub seed: u64,
    pub lr_patch: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 200,
            batch_size: 8,
            base_lr: 1e-4,
            halve_every: 50,
            seed: 0,
            lr_patch: 48,
            checkpoint_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Train/val/test proportions used when building manifests.
    pub ratios: [usize; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { ratios: [8, 1, 1] }
    }
}

/// The full run configuration, as stored in a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl RunConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<RunConfigFile> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(1);
            SisnError::Parse { file: origin.into(), line, message: e.message().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<RunConfigFile> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SisnError::Io { path: path.into(), source: e })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self) -> SisnConfig {
        SisnConfig {
            num_esag: self.model.num_esag,
            num_isab: self.model.num_isab,
            channels: self.model.channels,
            splits: self.model.splits,
            scale: self.model.scale,
            reduction: self.model.reduction,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            base_lr: self.train.base_lr,
            halve_every: self.train.halve_every,
            seed: self.train.seed,
            model: self.model_config(),
            lr_patch: self.train.lr_patch,
            checkpoint_every: self.train.checkpoint_every,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfigFile::parse("", "inline").unwrap();
        assert_eq!(c, RunConfigFile::default());
        assert_eq!(c.model_config(), SisnConfig::paper_default(4));
        assert_eq!(c.train_config().base_lr, 1e-4);
        assert!(c.train_config().validate().is_ok());
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let c = RunConfigFile::parse("[model]\nscale = 8\nchannels = 16\n", "inline").unwrap();
        assert_eq!(c.model.scale, 8);
        assert_eq!(c.model.channels, 16);
        assert_eq!(c.model.num_esag, 10);
        assert_eq!(c.train.epochs, 200);
    }

    #[test]
    fn parse_serialize_parse_is_identity() {
        let text = "[train]\nepochs = 3\nseed = 42\n[model]\nscale = 2\n";
        let once = RunConfigFile::parse(text, "inline").unwrap();
        let twice = RunConfigFile::parse(&once.to_toml(), "reserialized").unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn unknown_key_rejected_with_location() {
        let err = RunConfigFile::parse("[train]\nepochs = 3\nlerning_rate = 0.1\n", "run.toml")
            .unwrap_err();
        assert_eq!(err.class(), "parse");
        let msg = err.to_string();
        assert!(msg.contains("run.toml"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("lerning_rate"), "{msg}");
    }

    #[test]
    fn type_error_names_line() {
        let err = RunConfigFile::parse("[model]\nscale = \"four\"\n", "run.toml").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
