//! Episode collection with a frozen policy snapshot, optionally across
//! several worker threads.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, Termination};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::policy::{sample_action, Policy, SampleMode};
use crate::rl::buffer::RolloutBuffer;
use crate::rl::gae::{compute_gae, decomposition_error, AdvantageSet};
use crate::rl::{Directions, Transition};
use crate::scenario::Scenario;

/// A unit of rollout work. The result depends only on these fields and the
/// snapshot, never on which worker runs it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutTask {
    pub index: u64,
    pub scenario: usize,
    pub seed: u64,
}

impl RolloutTask {
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClipRollout {
    pub task: u64,
    pub clip: String,
    pub transitions: Vec<Transition>,
    /// Snapshot value of the state after the last transition when the clip
    /// ended by truncation; zero after a failure.
    pub bootstrap: [f64; 4],
    pub termination: Termination,
    pub advantages: AdvantageSet,
    /// Gap between summed component advantages and the directly computed
    /// lateral/longitudinal advantages.
    pub decomposition_error: f64,
}

impl ClipRollout {
    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.rewards.iter().sum::<f64>()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaeParams {
    pub gamma: f64,
    pub lambda: f64,
}

/// Runs one stochastic episode from the clip start to termination.
pub fn run_episode(
    policy: &Policy,
    scenario: &Arc<Scenario>,
    env_cfg: &EnvConfig,
    task: &RolloutTask,
    gae: GaeParams,
) -> Result<ClipRollout> {
    let env = Env::new(scenario.clone(), *env_cfg);
    let fx = FeatureExtractor::new(scenario, &policy.cfg.features);
    let grid = policy.cfg.features.grid.build()?;
    let mut rng = task.rng();
    let mut state = env.reset();
    let mut transitions = Vec::with_capacity(scenario.num_frames());
    while !state.done {
        let features = fx.extract(&state, scenario);
        let (dists, values) = policy.forward(&features)?;
        let a = sample_action(&dists, &mut rng, SampleMode::Stochastic);
        let (next, reward) = env.step(&state, grid.displacement(a.i, a.j))?;
        transitions.push(Transition {
            features,
            i: a.i,
            j: a.j,
            p_x_old: dists.p_x,
            p_y_old: dists.p_y,
            logp_x_old: a.logp_x,
            logp_y_old: a.logp_y,
            values_old: values.as_array(),
            rewards: Transition::rewards_from(&reward),
            directions: Directions::from_reward(&reward),
            terminal: next.termination.is_failure(),
            termination: next.termination,
            frame: state.frame,
            clip: scenario.id.clone(),
        });
        state = next;
    }
    let bootstrap = if state.termination.is_failure() {
        [0.0; 4]
    } else {
        policy.forward(&fx.extract(&state, scenario))?.1.as_array()
    };
    let rewards: Vec<[f64; 4]> = transitions.iter().map(|t| t.rewards).collect();
    let values: Vec<[f64; 4]> = transitions.iter().map(|t| t.values_old).collect();
    let terminal: Vec<bool> = transitions.iter().map(|t| t.terminal).collect();
    let advantages = compute_gae(&rewards, &values, &terminal, bootstrap, gae.gamma, gae.lambda)?;
    let decomposition_error =
        decomposition_error(&rewards, &values, &terminal, bootstrap, gae.gamma, gae.lambda, &advantages)?;
    Ok(ClipRollout {
        task: task.index,
        clip: scenario.id.clone(),
        transitions,
        bootstrap,
        termination: state.termination,
        advantages,
        decomposition_error,
    })
}

/// Runs `tasks` on up to `workers` threads against a read-only snapshot.
/// Workers pull tasks from a shared counter and send finished clips over a
/// channel; results are returned in task order.
pub fn run_tasks(
    workers: usize,
    snapshot: &Arc<Policy>,
    pool: &[Arc<Scenario>],
    tasks: &[RolloutTask],
    env_cfg: &EnvConfig,
    gae: GaeParams,
) -> Result<Vec<ClipRollout>> {
    if pool.is_empty() {
        return Err(Error::EmptyScenarioPool);
    }
    if let Some(t) = tasks.iter().find(|t| t.scenario >= pool.len()) {
        return Err(Error::IndexOutOfRange {
            index: t.scenario,
            len: pool.len(),
        });
    }
    let workers = workers.max(1).min(tasks.len().max(1));
    if workers == 1 {
        return tasks
            .iter()
            .map(|t| run_episode(snapshot, &pool[t.scenario], env_cfg, t, gae))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    thread::scope(|s| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let policy = Arc::clone(snapshot);
            s.spawn(move || loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(t) = tasks.get(k) else { break };
                let r = run_episode(&policy, &pool[t.scenario], env_cfg, t, gae);
                if tx.send((k, r)).is_err() {
                    break;
                }
            });
        }
    });
    drop(tx);
    let mut results: Vec<(usize, Result<ClipRollout>)> = rx.into_iter().collect();
    results.sort_by_key(|(k, _)| *k);
    results.into_iter().map(|(_, r)| r).collect()
}

/// Collects one clip per task and pushes them into the buffer in task order.
pub fn collect_rollouts(
    workers: usize,
    snapshot: &Arc<Policy>,
    pool: &[Arc<Scenario>],
    buffer: &mut RolloutBuffer,
    tasks: &[RolloutTask],
    env_cfg: &EnvConfig,
    gae: GaeParams,
) -> Result<Vec<(u64, String, Termination)>> {
    let clips = run_tasks(workers, snapshot, pool, tasks, env_cfg, gae)?;
    let mut summary = Vec::with_capacity(clips.len());
    for c in clips {
        summary.push((c.task, c.clip.clone(), c.termination));
        buffer.push(c);
    }
    Ok(summary)
}
