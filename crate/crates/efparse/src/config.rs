//! Run configuration: one JSON document, every field optional, overridden
//! by command-line flags (flags > config file > defaults).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{PosGroupTable, PunctuationPolicy};
use crate::model::HyperParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    // paths
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub pretrained: Option<PathBuf>,
    pub external_context: Option<PathBuf>,

    // architecture
    pub hyper: HyperParams,

    // training
    pub epochs: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `null` disables.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub explore: bool,
    pub word_dropout_alpha: f64,

    // evaluation
    pub punctuation: PunctuationPolicy,
    pub pos_groups: PosGroupTable,
    pub bin_width: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: None,
            dev: None,
            test: None,
            model: None,
            pretrained: None,
            external_context: None,
            hyper: HyperParams::default(),
            epochs: 30,
            learning_rate: 0.1,
            clip_norm: Some(5.0),
            seed: 42,
            explore: true,
            word_dropout_alpha: 0.25,
            punctuation: PunctuationPolicy::default(),
            pos_groups: PosGroupTable::default(),
            bin_width: 5,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_partial_config() {
        let json = r#"{"epochs": 5, "hyper": {"tree_dim": 64}}"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.hyper.tree_dim, 64);
        assert_eq!(cfg.hyper.word_dim, 100); // default preserved
        assert_eq!(cfg.bin_width, 5);
        assert!(cfg.punctuation.is_punct(","));
    }

    #[test]
    fn encoder_enum_round_trips() {
        for (kind, name) in [
            (crate::subtree::EncoderKind::TreeLstm, "tree-lstm"),
            (crate::subtree::EncoderKind::Rcnn, "rcnn"),
            (crate::subtree::EncoderKind::None, "none"),
        ] {
            let json = format!(r#"{{"hyper": {{"encoder": "{name}"}}}}"#);
            let cfg: RunConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(cfg.hyper.encoder, kind);
        }
    }
}
