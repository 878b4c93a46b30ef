//! Run configuration: one TOML table per pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SyntheticConfig, WindowingConfig};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::models::ArchitectureConfig;
use crate::training::{EnsembleConfig, TrainConfig};
use crate::transforms::TransformParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// `synthetic`, `hhar`, `uci`, `motionsense` or `pamap2`.
    pub dataset: String,
    /// Directory holding the corpus in its published layout.
    pub root: Option<PathBuf>,
    /// Repetition seeds; each reseeds the labeled subset and every model.
    pub seeds: Vec<u64>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: "synthetic".into(),
            root: None,
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub epsilons: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.0, 0.025, 0.05, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub windowing: WindowingConfig,
    pub transforms: TransformParams,
    pub model: ArchitectureConfig,
    pub pretext: TrainConfig,
    pub supervised: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub distill: DistillConfig,
    pub eval: EvalConfig,
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .and_then(|s| key_at(text, s.start))
                .unwrap_or_else(|| "<root>".into());
            config_error(&key, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |key: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::InvalidParameter(m) => config_error(key, m),
                e => e,
            })
        };
        if self.data.seeds.is_empty() {
            return Err(config_error("data.seeds", "at least one seed is required"));
        }
        let mut seen = self.data.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.data.seeds.len() {
            return Err(config_error("data.seeds", "seeds must be distinct"));
        }
        wrap("transforms", self.transforms.validate())?;
        wrap("pretext", self.pretext.validate())?;
        wrap("supervised", self.supervised.validate())?;
        wrap("ensemble", self.ensemble.validate())?;
        wrap("distill", self.distill.validate())?;
        if let Some(e) = self.eval.epsilons.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
            return Err(config_error("eval.epsilons", format!("{e} is not a non-negative number")));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of the given sections.
    pub fn hash_of(parts: &[&dyn erased::Json]) -> Result<String> {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p.json()?.as_bytes());
            h.update([0u8]);
        }
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn hash(&self) -> Result<String> {
        Self::hash_of(&[self])
    }
}

/// The key on the line containing byte `offset`, qualified by the last table
/// header above it.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let before = &text[..offset.min(text.len())];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next()?.trim();
    let table = before
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(['[', ']']).trim().to_string());
    let key = line.split('=').next()?.trim();
    if key.is_empty() || key.starts_with('[') {
        return table;
    }
    Some(match table {
        Some(t) => format!("{t}.{key}"),
        None => key.to_string(),
    })
}

/// Object-safe JSON serialization for hashing heterogeneous sections.
pub mod erased {
    use crate::error::Result;

    pub trait Json {
        fn json(&self) -> Result<String>;
    }

    impl<T: serde::Serialize> Json for T {
        fn json(&self) -> Result<String> {
            Ok(serde_json::to_string(self)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
    }

    #[test]
    fn sections_parse() {
        let cfg = Config::parse(
            "[data]\nseeds = [1, 2]\n[ensemble]\nmembers = 5\n[distill]\nepochs = 3\n[distill.schedule]\nt0 = 4.0\n",
        )
        .unwrap();
        assert_eq!(cfg.data.seeds, vec![1, 2]);
        assert_eq!(cfg.ensemble.members, 5);
        assert_eq!(cfg.distill.schedule.t0, 4.0);
    }

    #[test]
    fn errors_name_the_key() {
        let e = Config::parse("[pretext]\nepochs = \"many\"\n").unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "pretext.epochs"), "{e}");
        let e = Config::parse("[ensemble]\nmembers = 0\n").unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "ensemble"), "{e}");
        let e = Config::parse("[data]\nseeds = [1, 1]\n").unwrap_err();
        assert!(matches!(&e, Error::Config { key, .. } if key == "data.seeds"), "{e}");
        assert!(Config::parse("[nonsense]\nx = 1\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.distill.epochs += 1;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 64);
    }
}
