//! Declarative run configuration: a TOML file, validated, with a canonical
//! digest stamped into every output file for provenance.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::TrainConfig;
use crate::gateway::{canonical_json, ProviderConfig, ReplayMode, SamplingParams};
use crate::prompt::{PromptOptions, Strategy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {msg}")]
    Invalid { path: PathBuf, msg: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplaySection {
    pub mode: ReplayMode,
    #[serde(default)]
    pub store: Option<PathBuf>,
}

/// Optional alignment settings for the translation path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignSection {
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_k_markers() -> usize {
    10
}

fn default_min_reads() -> u64 {
    200
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Bundle directory (relative paths resolve against the workdir).
    pub bundle: PathBuf,
    pub output_dir: PathBuf,
    /// Markers per sample fed into the question template.
    #[serde(default = "default_k_markers")]
    pub k_markers: usize,
    /// Raw-count bundles drop cells below this total before normalization.
    #[serde(default = "default_min_reads")]
    pub min_reads: u64,
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub sampling: SamplingParams,
    pub replay: ReplaySection,
    #[serde(default)]
    pub prompts: PromptOptions,
    pub providers: Vec<ProviderConfig>,
    #[serde(default)]
    pub align: Option<AlignSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate(path)?;
        Ok(cfg)
    }

    pub fn validate(&self, path: &Path) -> Result<(), ConfigError> {
        let invalid = |msg: String| ConfigError::Invalid {
            path: path.to_path_buf(),
            msg,
        };
        if self.providers.is_empty() {
            return Err(invalid("at least one provider is required".to_string()));
        }
        if self.strategies.is_empty() {
            return Err(invalid("at least one strategy is required".to_string()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.strategies {
            if !seen.insert(s) {
                return Err(invalid(format!("duplicate strategy '{}'", s.as_str())));
            }
        }
        let mut names = std::collections::HashSet::new();
        for p in &self.providers {
            if !names.insert(&p.name) {
                return Err(invalid(format!("duplicate provider name '{}'", p.name)));
            }
            if let Err(e) = p.validate() {
                return Err(invalid(e.to_string()));
            }
        }
        if self.k_markers == 0 {
            return Err(invalid("k_markers must be at least 1".to_string()));
        }
        match self.replay.mode {
            ReplayMode::Record | ReplayMode::Replay => {
                if self.replay.store.is_none() {
                    return Err(invalid(format!(
                        "replay mode '{:?}' needs replay.store",
                        self.replay.mode
                    )));
                }
            }
            ReplayMode::Live => {
                if self.replay.store.is_some() {
                    return Err(invalid(
                        "replay.store is set but mode is 'live'".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical_json(&value).as_bytes()))
    }
}

/// Directory-safe rendering of a model or provider name.
pub fn sanitize_component(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '-'
            }
        })
        .collect();
    if cleaned.is_empty() {
        "unnamed".to_string()
    } else {
        cleaned
    }
}
