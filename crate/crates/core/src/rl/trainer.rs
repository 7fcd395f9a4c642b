//! The post-training cycle: several RL rounds (collect a clip into the
//! sliding window, then PPO epochs over the window) followed by an IL round.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::env::{EnvConfig, Termination};
use crate::error::{Error, Result};
use crate::il::{il_update, DemonstrationSample, FocalConfig};
use crate::optim::{adamw_step, AdamState, AdamWConfig, CosineSchedule};
use crate::policy::Policy;
use crate::rl::buffer::RolloutBuffer;
use crate::rl::losses::{composite_loss_and_grad, LossWeights};
use crate::rl::rollout::{collect_rollouts, GaeParams, RolloutTask};
use crate::rl::Transition;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub weights: LossWeights,
    pub workers: usize,
    pub rl_rounds_per_cycle: usize,
    pub il_rounds_per_cycle: usize,
    pub clips_per_round: usize,
    pub buffer_clips: usize,
    /// PPO passes over the window per RL round.
    pub epochs: usize,
    pub minibatch: usize,
    pub il_batch: usize,
    pub il_steps_per_round: usize,
    /// `total = 0` sizes the cosine schedule from the configured cycles.
    pub schedule: CosineSchedule,
    pub adam: AdamWConfig,
    pub focal: FocalConfig,
    pub normalize_advantages: bool,
    pub cycles: u64,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lambda: 0.95,
            weights: LossWeights::default(),
            workers: 4,
            rl_rounds_per_cycle: 4,
            il_rounds_per_cycle: 1,
            clips_per_round: 1,
            buffer_clips: 4,
            epochs: 4,
            minibatch: 32,
            il_batch: 128,
            il_steps_per_round: 3,
            schedule: CosineSchedule {
                base: 5e-6,
                min_lr: 0.0,
                warmup: 0,
                total: 0,
            },
            adam: AdamWConfig {
                lr: 5e-6,
                ..AdamWConfig::default()
            },
            focal: FocalConfig::default(),
            normalize_advantages: false,
            cycles: 50,
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("gamma and lambda must lie in (0, 1]");
        }
        if !(self.weights.eps_x > 0.0 && self.weights.eps_y > 0.0) {
            return bad("clipping thresholds must be positive");
        }
        if self.buffer_clips == 0 || self.minibatch == 0 || self.il_batch == 0 {
            return bad("buffer size and batch sizes must be positive");
        }
        if self.rl_rounds_per_cycle > 0 && self.clips_per_round == 0 {
            return bad("RL rounds need at least one clip per round");
        }
        self.focal.validate()
    }

    /// Optimizer steps over the whole run, assuming full clips.
    pub fn estimated_updates(&self, frames_per_clip: usize) -> u64 {
        let window = (self.buffer_clips * frames_per_clip).max(1);
        let per_round = self.epochs * window.div_ceil(self.minibatch);
        let per_cycle = self.rl_rounds_per_cycle * per_round + self.il_rounds_per_cycle * self.il_steps_per_round;
        self.cycles * per_cycle as u64
    }
}

/// Everything besides parameters, moments and rng needed to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub cycle: u64,
    pub task_counter: u64,
    pub schedule_total: u64,
    pub buffer: RolloutBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub cycle: u64,
    pub round: usize,
    pub phase: String,
    pub update: usize,
    pub lr: f64,
    pub total: f64,
    pub ppo: f64,
    pub l_dc: f64,
    pub l_sc: f64,
    pub l_pd: f64,
    pub l_hd: f64,
    pub value: f64,
    pub il: f64,
    pub clip_frac_x: f64,
    pub clip_frac_y: f64,
    pub mean_ratio_x: f64,
    pub mean_ratio_y: f64,
    pub episodes: usize,
    pub terminations: String,
    pub buffer_clips: usize,
    pub decomposition_error: f64,
}

impl LogRow {
    pub const HEADER: &'static str = "cycle,round,phase,update,lr,total,ppo,l_dc,l_sc,l_pd,l_hd,value,il,\
clip_frac_x,clip_frac_y,mean_ratio_x,mean_ratio_y,episodes,terminations,buffer_clips,decomposition_error";

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{:e},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:e}",
            self.cycle,
            self.round,
            self.phase,
            self.update,
            self.lr,
            self.total,
            self.ppo,
            self.l_dc,
            self.l_sc,
            self.l_pd,
            self.l_hd,
            self.value,
            self.il,
            self.clip_frac_x,
            self.clip_frac_y,
            self.mean_ratio_x,
            self.mean_ratio_y,
            self.episodes,
            self.terminations,
            self.buffer_clips,
            self.decomposition_error
        )
        .expect("write to string");
        s
    }

    fn base(cycle: u64, round: usize, phase: &str, update: usize, lr: f64) -> Self {
        Self {
            cycle,
            round,
            phase: phase.into(),
            update,
            lr,
            total: 0.0,
            ppo: 0.0,
            l_dc: 0.0,
            l_sc: 0.0,
            l_pd: 0.0,
            l_hd: 0.0,
            value: 0.0,
            il: 0.0,
            clip_frac_x: 0.0,
            clip_frac_y: 0.0,
            mean_ratio_x: 0.0,
            mean_ratio_y: 0.0,
            episodes: 0,
            terminations: String::new(),
            buffer_clips: 0,
            decomposition_error: 0.0,
        }
    }
}

fn histogram(terms: &[Termination]) -> String {
    let mut h: BTreeMap<&str, usize> = BTreeMap::new();
    for t in terms {
        *h.entry(t.as_str()).or_default() += 1;
    }
    h.iter().map(|(k, v)| format!("{k}:{v}")).collect::<Vec<_>>().join(";")
}

pub struct Trainer {
    pub cfg: RlConfig,
    pub env_cfg: EnvConfig,
    pub policy: Policy,
    pub adam: AdamState,
    pub state: TrainerState,
    rng: ChaCha8Rng,
    pool: Vec<Arc<Scenario>>,
    demos: Vec<DemonstrationSample>,
}

impl Trainer {
    /// Starts post-training from a pre-trained policy with fresh optimizer
    /// state.
    pub fn new(
        cfg: RlConfig,
        env_cfg: EnvConfig,
        policy: Policy,
        pool: Vec<Arc<Scenario>>,
        demos: Vec<DemonstrationSample>,
    ) -> Result<Self> {
        cfg.validate()?;
        if pool.is_empty() {
            return Err(Error::EmptyScenarioPool);
        }
        let frames = pool.iter().map(|s| s.num_frames() - 1).max().unwrap_or(0);
        let schedule_total = cfg.schedule.with_total(cfg.estimated_updates(frames)).total;
        let adam = AdamState::new(&policy.params);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let buffer = RolloutBuffer::new(cfg.buffer_clips);
        Ok(Self {
            cfg,
            env_cfg,
            policy,
            adam,
            state: TrainerState {
                cycle: 0,
                task_counter: 0,
                schedule_total,
                buffer,
            },
            rng,
            pool,
            demos,
        })
    }

    /// Restores a trainer saved by [`Trainer::checkpoint`].
    pub fn resume(
        cfg: RlConfig,
        env_cfg: EnvConfig,
        ckpt: Checkpoint,
        pool: Vec<Arc<Scenario>>,
        demos: Vec<DemonstrationSample>,
    ) -> Result<Self> {
        cfg.validate()?;
        if pool.is_empty() {
            return Err(Error::EmptyScenarioPool);
        }
        let state: TrainerState = serde_json::from_value(ckpt.trainer)
            .map_err(|e| Error::VersionMismatch(format!("checkpoint has no resumable trainer state: {e}")))?;
        let rng = ckpt
            .rng
            .ok_or_else(|| Error::VersionMismatch("checkpoint has no rng state".into()))?;
        Ok(Self {
            cfg,
            env_cfg,
            policy: ckpt.policy,
            adam: ckpt.adam,
            state,
            rng,
            pool,
            demos,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            policy: self.policy.clone(),
            adam: self.adam.clone(),
            rng: Some(self.rng.clone()),
            trainer: serde_json::to_value(&self.state).expect("trainer state serializes"),
        }
    }

    fn lr(&self) -> f64 {
        CosineSchedule {
            total: self.state.schedule_total,
            ..self.cfg.schedule
        }
        .lr(self.adam.step)
    }

    fn gae(&self) -> GaeParams {
        GaeParams {
            gamma: self.cfg.gamma,
            lambda: self.cfg.lambda,
        }
    }

    /// Runs one cycle and returns its log rows.
    pub fn training_cycle(&mut self) -> Result<Vec<LogRow>> {
        let mut rows = Vec::new();
        let cycle = self.state.cycle;
        let mut round = 0;
        for _ in 0..self.cfg.rl_rounds_per_cycle {
            rows.extend(self.rl_round(cycle, round)?);
            round += 1;
        }
        for _ in 0..self.cfg.il_rounds_per_cycle {
            rows.extend(self.il_round(cycle, round)?);
            round += 1;
        }
        self.state.cycle += 1;
        Ok(rows)
    }

    fn rl_round(&mut self, cycle: u64, round: usize) -> Result<Vec<LogRow>> {
        // the snapshot is published here, after the previous round's updates
        let snapshot = Arc::new(self.policy.clone());
        let tasks: Vec<RolloutTask> = (0..self.cfg.clips_per_round)
            .map(|_| {
                let t = RolloutTask {
                    index: self.state.task_counter,
                    scenario: self.rng.gen_range(0..self.pool.len()),
                    seed: self.cfg.seed,
                };
                self.state.task_counter += 1;
                t
            })
            .collect();
        let gae = self.gae();
        let summary = collect_rollouts(
            self.cfg.workers,
            &snapshot,
            &self.pool,
            &mut self.state.buffer,
            &tasks,
            &self.env_cfg,
            gae,
        )?;
        let terms: Vec<Termination> = summary.iter().map(|s| s.2).collect();
        let decomposition_error = self
            .state
            .buffer
            .clips()
            .map(|c| c.decomposition_error)
            .fold(0.0, f64::max);

        let mut index: Vec<(usize, usize)> = Vec::new();
        for (ci, c) in self.state.buffer.clips().enumerate() {
            index.extend((0..c.transitions.len()).map(|t| (ci, t)));
        }
        let clips: Vec<_> = self.state.buffer.clips().cloned().collect();
        let mut rows = Vec::new();
        let mut update = 0;
        for _ in 0..self.cfg.epochs {
            index.shuffle(&mut self.rng);
            for chunk in index.chunks(self.cfg.minibatch) {
                let batch: Vec<&Transition> = chunk.iter().map(|&(c, t)| &clips[c].transitions[t]).collect();
                let mut adv: Vec<[f64; 4]> = chunk.iter().map(|&(c, t)| clips[c].advantages.adv[t]).collect();
                let returns: Vec<[f64; 4]> = chunk.iter().map(|&(c, t)| clips[c].advantages.returns[t]).collect();
                if self.cfg.normalize_advantages {
                    normalize(&mut adv);
                }
                let lr = self.lr();
                let (b, grads) = composite_loss_and_grad(&self.policy, &batch, &adv, &returns, &self.cfg.weights)?;
                adamw_step(&mut self.policy.params, &grads, &mut self.adam, &self.cfg.adam, lr)?;
                let mut row = LogRow::base(cycle, round, "rl", update, lr);
                row.total = b.total;
                row.ppo = b.ppo;
                row.l_dc = b.l_dc;
                row.l_sc = b.l_sc;
                row.l_pd = b.l_pd;
                row.l_hd = b.l_hd;
                row.value = b.value;
                row.clip_frac_x = b.diag.clip_frac_x;
                row.clip_frac_y = b.diag.clip_frac_y;
                row.mean_ratio_x = b.diag.mean_ratio_x;
                row.mean_ratio_y = b.diag.mean_ratio_y;
                row.episodes = summary.len();
                row.terminations = histogram(&terms);
                row.buffer_clips = self.state.buffer.len();
                row.decomposition_error = decomposition_error;
                rows.push(row);
                update += 1;
            }
        }
        if rows.is_empty() {
            // a round that collected only empty clips still leaves a trace
            let mut row = LogRow::base(cycle, round, "rl", 0, self.lr());
            row.episodes = summary.len();
            row.terminations = histogram(&terms);
            row.buffer_clips = self.state.buffer.len();
            rows.push(row);
        }
        Ok(rows)
    }

    fn il_round(&mut self, cycle: u64, round: usize) -> Result<Vec<LogRow>> {
        if self.demos.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut rows = Vec::new();
        for update in 0..self.cfg.il_steps_per_round {
            let batch: Vec<&DemonstrationSample> = (0..self.cfg.il_batch)
                .map(|_| &self.demos[self.rng.gen_range(0..self.demos.len())])
                .collect();
            let lr = self.lr();
            let loss = il_update(&mut self.policy, &mut self.adam, &batch, &self.cfg.focal, &self.cfg.adam, lr)?;
            let mut row = LogRow::base(cycle, round, "il", update, lr);
            row.il = loss;
            row.total = loss;
            row.buffer_clips = self.state.buffer.len();
            rows.push(row);
        }
        if rows.is_empty() {
            rows.push(LogRow::base(cycle, round, "il", 0, self.lr()));
        }
        Ok(rows)
    }
}

fn normalize(adv: &mut [[f64; 4]]) {
    let n = adv.len() as f64;
    for c in 0..4 {
        let mean = adv.iter().map(|a| a[c]).sum::<f64>() / n;
        let var = adv.iter().map(|a| (a[c] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt().max(1e-8);
        for a in adv.iter_mut() {
            a[c] = (a[c] - mean) / sd;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::il::build_demonstrations;
    use crate::policy::PolicyConfig;
    use crate::synth::{synth_scenario, SynthParams, Template};

    fn small() -> (RlConfig, Policy, Vec<Arc<Scenario>>, Vec<DemonstrationSample>) {
        let pcfg = PolicyConfig {
            hidden: vec![16],
            ..PolicyConfig::default()
        };
        let policy = Policy::init(pcfg.clone(), &mut ChaCha8Rng::seed_from_u64(3));
        let pool: Vec<Arc<Scenario>> = (0..3)
            .map(|k| Arc::new(synth_scenario(k, &SynthParams::new(Template::CrossingPedestrian))))
            .collect();
        let demos = pool
            .iter()
            .flat_map(|s| build_demonstrations(s, &EnvConfig::default(), &pcfg.features))
            .collect();
        let cfg = RlConfig {
            workers: 1,
            epochs: 1,
            minibatch: 64,
            il_batch: 16,
            il_steps_per_round: 2,
            cycles: 3,
            schedule: CosineSchedule {
                base: 1e-4,
                ..RlConfig::default().schedule
            },
            ..RlConfig::default()
        };
        (cfg, policy, pool, demos)
    }

    #[test]
    fn cycle_is_four_rl_rounds_then_one_il_round() {
        let (cfg, policy, pool, demos) = small();
        let mut t = Trainer::new(cfg, EnvConfig::default(), policy, pool, demos).unwrap();
        let rows = t.training_cycle().unwrap();
        let mut rounds: Vec<(usize, String)> = rows.iter().map(|r| (r.round, r.phase.clone())).collect();
        rounds.dedup();
        let want: Vec<(usize, String)> = vec![
            (0, "rl".into()),
            (1, "rl".into()),
            (2, "rl".into()),
            (3, "rl".into()),
            (4, "il".into()),
        ];
        assert_eq!(rounds, want);
        assert!(t.state.buffer.len() <= 4);
    }

    #[test]
    fn zero_rl_rounds_is_pure_il() {
        let (mut cfg, policy, pool, demos) = small();
        cfg.rl_rounds_per_cycle = 0;
        let mut t = Trainer::new(cfg, EnvConfig::default(), policy, pool, demos).unwrap();
        let rows = t.training_cycle().unwrap();
        assert!(rows.iter().all(|r| r.phase == "il"));
        assert!(t.state.buffer.is_empty());
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let (cfg, policy, pool, demos) = small();
        let mut a = Trainer::new(cfg.clone(), EnvConfig::default(), policy.clone(), pool.clone(), demos.clone()).unwrap();
        for _ in 0..2 {
            a.training_cycle().unwrap();
        }
        let mut b = Trainer::new(cfg.clone(), EnvConfig::default(), policy, pool.clone(), demos.clone()).unwrap();
        b.training_cycle().unwrap();
        let bytes = crate::checkpoint::encode_checkpoint(&b.checkpoint());
        let ckpt = crate::checkpoint::decode_checkpoint(&bytes, std::path::Path::new("mem")).unwrap();
        let mut c = Trainer::resume(cfg, EnvConfig::default(), ckpt, pool, demos).unwrap();
        c.training_cycle().unwrap();
        assert_eq!(
            crate::checkpoint::encode_checkpoint(&a.checkpoint()),
            crate::checkpoint::encode_checkpoint(&c.checkpoint())
        );
    }
}
