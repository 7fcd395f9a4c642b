//! Experiment configuration: one TOML (or JSON) file drives generation,
//! pre-training, post-training and evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::il::PretrainConfig;
use crate::policy::PolicyConfig;
use crate::rl::RlConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub train_manifest: PathBuf,
    pub eval_manifest: PathBuf,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            train_manifest: PathBuf::from("suites/train/manifest.json"),
            eval_manifest: PathBuf::from("suites/eval/manifest.json"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub workers: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { workers: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub suite: SuiteConfig,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub pretrain: PretrainConfig,
    pub rl: RlConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.policy.validate()?;
        self.pretrain.focal.validate()?;
        self.rl.validate()
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse(origin, e))
    }

    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(origin, e))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Reads a `.json` file as JSON and anything else as TOML. Relative
    /// suite paths are resolved against the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text, path)?
        } else {
            Self::from_toml_str(&text, path)?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.suite.train_manifest, &mut cfg.suite.eval_manifest] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text, Path::new("mem")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[rl]\ncycles = 3\n", Path::new("mem")).unwrap();
        assert_eq!(cfg.rl.cycles, 3);
        assert_eq!(cfg.rl.gamma, 0.9);
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n", Path::new("mem")).is_err());
    }

    #[test]
    fn json_is_accepted_and_paths_resolve() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c.json");
        fs::write(&p, r#"{"suite": {"train_manifest": "t/manifest.json"}}"#).unwrap();
        let cfg = ExperimentConfig::load(&p).unwrap();
        assert_eq!(cfg.suite.train_manifest, d.path().join("t/manifest.json"));
    }
}
