//! Imitation learning: anchor matching of expert displacements and the dual
//! focal loss, used for planning pre-training and for the IL rounds of
//! post-training.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::env::{Env, EnvConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureConfig, FeatureExtractor};
use crate::geometry::AnchorGrid;
use crate::optim::{adamw_step, AdamState, AdamWConfig, CosineSchedule};
use crate::policy::{Gradients, HeadVars, LossGraph, Policy};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub gamma: f64,
    pub alpha: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self { gamma: 2.0, alpha: 1.0 }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.alpha > 0.0) {
            return Err(Error::InvalidConfig("focal loss needs gamma >= 0 and alpha > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSample {
    pub features: Vec<f64>,
    /// Expert displacement over the next horizon in the ego frame at the
    /// sample time: (lateral, positive right; longitudinal).
    pub p_gt: (f64, f64),
    #[serde(default)]
    pub clip: String,
    #[serde(default)]
    pub frame: usize,
}

fn nearest(anchors: &[f64], value: f64) -> usize {
    let lo = anchors[0];
    let hi = anchors[anchors.len() - 1];
    let span = hi - lo;
    let target = (value.clamp(lo, hi) - lo) / span;
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, a) in anchors.iter().enumerate() {
        let d = ((a - lo) / span - target).abs();
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    best
}

/// Normalized nearest-neighbour anchor indices; out-of-range displacements
/// map to the extreme anchors and ties resolve to the lower index.
pub fn match_anchor(p_gt: (f64, f64), grid: &AnchorGrid) -> (usize, usize) {
    (nearest(&grid.lateral, p_gt.0), nearest(&grid.longitudinal, p_gt.1))
}

/// `-alpha (1 - p)^gamma ln p` for the target entry of a distribution.
pub fn focal_loss(dist: &[f64], target: usize, cfg: &FocalConfig) -> f64 {
    let p = dist[target];
    let w = if cfg.gamma == 0.0 { 1.0 } else { (1.0 - p).powf(cfg.gamma) };
    -cfg.alpha * w * p.ln()
}

/// Focal loss on the tape from a log-probability node.
pub fn focal_var(tape: &mut Tape, logp: Var, cfg: &FocalConfig) -> Var {
    let p = tape.exp(logp);
    let q = tape.rsub_const(1.0, p);
    let w = tape.powf(q, cfg.gamma);
    let wl = tape.mul(w, logp);
    tape.scale(wl, -cfg.alpha)
}

/// Mean over samples of the two per-head focal losses.
pub fn record_il_loss(
    tape: &mut Tape,
    heads: &[HeadVars],
    targets: &[(usize, usize)],
    cfg: &FocalConfig,
) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if heads.len() != targets.len() {
        return Err(Error::LengthMismatch(format!(
            "{} samples, {} targets",
            heads.len(),
            targets.len()
        )));
    }
    let mut terms = Vec::with_capacity(heads.len());
    for (h, &(i, j)) in heads.iter().zip(targets) {
        let lx = tape.log_softmax(&h.logits_x);
        let ly = tape.log_softmax(&h.logits_y);
        let fx = focal_var(tape, lx[i], cfg);
        let fy = focal_var(tape, ly[j], cfg);
        terms.push(tape.add(fx, fy));
    }
    let s = tape.sum(&terms);
    Ok(tape.scale(s, 1.0 / heads.len() as f64))
}

fn il_graph(
    policy: &Policy,
    batch: &[&DemonstrationSample],
    grid: &AnchorGrid,
    cfg: &FocalConfig,
) -> Result<LossGraph> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let feats: Vec<&[f64]> = batch.iter().map(|s| s.features.as_slice()).collect();
    let targets: Vec<(usize, usize)> = batch.iter().map(|s| match_anchor(s.p_gt, grid)).collect();
    let mut g = LossGraph::build(policy, &feats)?;
    let (tape, heads) = g.parts();
    let out = record_il_loss(tape, heads, &targets, cfg)?;
    g.add_output(out);
    Ok(g)
}

pub fn il_loss(
    policy: &Policy,
    batch: &[&DemonstrationSample],
    grid: &AnchorGrid,
    cfg: &FocalConfig,
) -> Result<f64> {
    il_graph(policy, batch, grid, cfg)?.loss_value()
}

pub fn il_loss_and_grad(
    policy: &Policy,
    batch: &[&DemonstrationSample],
    grid: &AnchorGrid,
    cfg: &FocalConfig,
) -> Result<(f64, Gradients)> {
    let g = il_graph(policy, batch, grid, cfg)?;
    Ok((g.loss_value()?, policy.backward(&g)?))
}

/// One optimizer step on a demonstration batch; returns the pre-step loss.
pub fn il_update(
    policy: &mut Policy,
    adam: &mut AdamState,
    batch: &[&DemonstrationSample],
    focal: &FocalConfig,
    hyper: &AdamWConfig,
    lr: f64,
) -> Result<f64> {
    let grid = policy.cfg.features.grid.build()?;
    let (loss, grads) = il_loss_and_grad(policy, batch, &grid, focal)?;
    adamw_step(&mut policy.params, &grads, adam, hyper, lr)?;
    Ok(loss)
}

/// Expert-playback demonstrations: one sample per frame that has a full
/// horizon of expert motion ahead of it.
pub fn build_demonstrations(
    scenario: &Arc<Scenario>,
    env_cfg: &EnvConfig,
    feat_cfg: &FeatureConfig,
) -> Vec<DemonstrationSample> {
    let env = Env::new(scenario.clone(), *env_cfg);
    let fx = FeatureExtractor::new(scenario, feat_cfg);
    let ahead = (env_cfg.kinematics.horizon * scenario.frame_rate).round() as usize;
    let traj = &scenario.expert_traj;
    let mut out = Vec::new();
    let mut state = env.reset();
    for f in 0..traj.len().saturating_sub(ahead) {
        let here = traj[f].pose;
        let (lon, lat) = here.to_local(traj[f + ahead].pose.position());
        out.push(DemonstrationSample {
            features: fx.extract(&state, scenario),
            p_gt: (lat, lon),
            clip: scenario.id.clone(),
            frame: f,
        });
        if state.done {
            break;
        }
        // advance along the expert so the previous-action features match
        // what the policy observes during expert playback
        let (next, _) = env.step(&state, env.expert_action(f)).expect("episode not done");
        state = next;
        state.ego = traj[f + 1].pose;
    }
    out
}

pub fn save_demonstrations(path: impl AsRef<Path>, samples: &[DemonstrationSample]) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for s in samples {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::parse(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_demonstrations(path: impl AsRef<Path>) -> Result<Vec<DemonstrationSample>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, e))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: CosineSchedule,
    pub adam: AdamWConfig,
    pub focal: FocalConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            seed: 0,
            schedule: CosineSchedule {
                base: 1e-4,
                min_lr: 0.0,
                warmup: 0,
                total: 0,
            },
            adam: AdamWConfig::default(),
            focal: FocalConfig::default(),
        }
    }
}

/// Shuffled mini-batches drawn epoch by epoch.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Planning pre-training. Returns the optimizer state and the per-step loss.
pub fn pretrain(
    dataset: &[DemonstrationSample],
    policy: &mut Policy,
    cfg: &PretrainConfig,
    mut on_step: impl FnMut(u64, f64),
) -> Result<(AdamState, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    cfg.focal.validate()?;
    let mut adam = AdamState::new(&policy.params);
    let mut sampler = BatchSampler::new(dataset.len(), cfg.seed);
    let mut log = Vec::with_capacity(cfg.steps as usize);
    let schedule = cfg.schedule.with_total(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sampler.next_batch(cfg.batch_size);
        let batch: Vec<&DemonstrationSample> = idx.iter().map(|k| &dataset[*k]).collect();
        let lr = schedule.lr(step);
        let loss = il_update(policy, &mut adam, &batch, &cfg.focal, &cfg.adam, lr)?;
        on_step(step, loss);
        log.push(loss);
    }
    Ok((adam, log))
}
