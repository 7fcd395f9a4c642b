//! Binary checkpoint container.
//!
//! Layout: the magic bytes `CLCK`, a little-endian `u32` format version, a
//! `u64` header length, a JSON header, then raw little-endian `f64` data for
//! the parameters followed by the two Adam moment sets, in tensor order.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::policy::{Policy, PolicyConfig, PolicyParams};

const MAGIC: &[u8; 4] = b"CLCK";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: Policy,
    pub adam: AdamState,
    pub rng: Option<ChaCha8Rng>,
    /// Opaque trainer bookkeeping (schedule position, rollout buffer, ...).
    pub trainer: serde_json::Value,
}

impl Checkpoint {
    pub fn new(policy: Policy) -> Self {
        let adam = AdamState::new(&policy.params);
        Self {
            policy,
            adam,
            rng: None,
            trainer: serde_json::Value::Null,
        }
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.policy.cfg)
    }
}

/// SHA-256 of the canonical JSON encoding of the network configuration.
pub fn fingerprint(cfg: &PolicyConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    policy_config: PolicyConfig,
    tensors: Vec<TensorEntry>,
    adam_step: u64,
    rng: Option<ChaCha8Rng>,
    trainer: serde_json::Value,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let header = Header {
        fingerprint: ckpt.fingerprint(),
        policy_config: ckpt.policy.cfg.clone(),
        tensors: ckpt
            .policy
            .params
            .tensors()
            .into_iter()
            .map(|(name, shape, _)| TensorEntry { name, shape })
            .collect(),
        adam_step: ckpt.adam.step,
        rng: ckpt.rng.clone(),
        trainer: ckpt.trainer.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for set in [&ckpt.policy.params, &ckpt.adam.m, &ckpt.adam.v] {
        for (_, _, data) in set.tensors() {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
    let bad = |m: &str| Error::parse(origin, m);
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| Error::parse(origin, e))?;
    if fingerprint(&header.policy_config) != header.fingerprint {
        return Err(bad("header fingerprint does not match its own config"));
    }
    let mut sets = [
        PolicyParams::zeros(&header.policy_config),
        PolicyParams::zeros(&header.policy_config),
        PolicyParams::zeros(&header.policy_config),
    ];
    let expected: Vec<(String, Vec<usize>)> = sets[0]
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    let stored: Vec<(String, Vec<usize>)> = header
        .tensors
        .iter()
        .map(|t| (t.name.clone(), t.shape.clone()))
        .collect();
    if expected != stored {
        return Err(bad("tensor table does not match the stored config"));
    }
    let data = &body[hlen..];
    let total = sets[0].num_params() * 3;
    if data.len() != total * 8 {
        return Err(bad("data section has the wrong length"));
    }
    let mut k = 0;
    for set in &mut sets {
        for t in set.slices_mut() {
            for v in t.iter_mut() {
                *v = f64::from_le_bytes(data[k * 8..k * 8 + 8].try_into().expect("8 bytes"));
                k += 1;
            }
        }
    }
    let [params, m, v] = sets;
    Ok(Checkpoint {
        policy: Policy::new(header.policy_config, params)?,
        adam: AdamState {
            m,
            v,
            step: header.adam_step,
        },
        rng: header.rng,
        trainer: header.trainer,
    })
}

/// Writes atomically via a temporary sibling file.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&encode_checkpoint(ckpt)).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint; when `expected` is given its fingerprint must match.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&PolicyConfig>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = decode_checkpoint(&bytes, path)?;
    if let Some(cfg) = expected {
        let want = fingerprint(cfg);
        if want != ckpt.fingerprint() {
            return Err(Error::VersionMismatch(format!(
                "{} was written for config {}, expected {}",
                path.display(),
                &ckpt.fingerprint()[..12],
                &want[..12]
            )));
        }
    }
    Ok(ckpt)
}
