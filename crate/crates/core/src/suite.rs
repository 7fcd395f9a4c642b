//! Scenario suites on disk: a directory of scenario files plus a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::scenario::{load_scenario, save_scenario, Scenario};
use crate::synth::{synth_scenario, SynthParams, Template};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub template: Option<Template>,
    /// Relative to the manifest's directory.
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl SuiteManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Per-clip seeds derived from the suite seed; distinct suite seeds give
/// unrelated clip seeds.
pub fn clip_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.next_u64()).collect()
}

/// Generates `count` clips cycling through `templates` and writes them with
/// a manifest into `out_dir`.
pub fn generate_suite(
    out_dir: impl AsRef<Path>,
    seed: u64,
    templates: &[Template],
    count: usize,
    env: &EnvConfig,
) -> Result<SuiteManifest> {
    let out_dir = out_dir.as_ref();
    if templates.is_empty() && count > 0 {
        return Err(Error::InvalidConfig("at least one template is required".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = SuiteManifest {
        seed,
        entries: Vec::with_capacity(count),
    };
    for (k, s) in clip_seeds(seed, count).into_iter().enumerate() {
        let template = templates[k % templates.len()];
        let params = SynthParams {
            env: *env,
            ..SynthParams::new(template)
        };
        let sc = synth_scenario(s, &params);
        let file = PathBuf::from(format!("{}.json", sc.id));
        save_scenario(out_dir.join(&file), &sc)?;
        manifest.entries.push(ManifestEntry {
            id: sc.id,
            template: Some(template),
            file,
        });
    }
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Loads and validates every scenario listed in a manifest.
pub fn load_suite(manifest_path: impl AsRef<Path>) -> Result<Vec<Arc<Scenario>>> {
    let manifest_path = manifest_path.as_ref();
    let manifest = SuiteManifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .entries
        .iter()
        .map(|e| load_scenario(dir.join(&e.file)).map(Arc::new))
        .collect()
}
