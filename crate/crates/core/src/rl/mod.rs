//! Reinforced post-training: rollouts, per-component GAE, clipped PPO with
//! the four directional auxiliary objectives, and the RL/IL cycle.

pub mod buffer;
pub mod gae;
pub mod losses;
pub mod rollout;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::env::{CollisionDirection, RewardBreakdown, Termination};
use crate::geometry::{Rotation, Side};

pub use buffer::RolloutBuffer;
pub use gae::{compute_gae, AdvantageSet};
pub use losses::{aux_losses, composite_loss, ppo_loss, prob_partitions, value_loss};
pub use rollout::{collect_rollouts, ClipRollout, RolloutTask};
pub use trainer::{RlConfig, Trainer};

/// Directional factors selecting the corrective direction of each
/// auxiliary objective; 0 when the event did not occur.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Directions {
    pub f_dc: i8,
    pub f_sc: i8,
    pub f_pd: i8,
    pub f_hd: i8,
}

impl Directions {
    pub fn from_reward(r: &RewardBreakdown) -> Self {
        Self {
            f_dc: match r.collision_direction {
                Some(CollisionDirection::Ahead) => 1,
                Some(CollisionDirection::Behind) => -1,
                None => 0,
            },
            f_sc: side_factor(r.obstacle_side),
            f_pd: side_factor(r.deviation_side),
            // a counterclockwise deviation calls for a clockwise (rightward)
            // correction
            f_hd: match r.rotation_dir {
                Some(Rotation::Counterclockwise) => 1,
                Some(Rotation::Clockwise) => -1,
                None => 0,
            },
        }
    }
}

fn side_factor(s: Option<Side>) -> i8 {
    match s {
        Some(Side::Left) => 1,
        Some(Side::Right) => -1,
        None => 0,
    }
}

/// One policy step recorded under a frozen snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub features: Vec<f64>,
    pub i: usize,
    pub j: usize,
    pub p_x_old: Vec<f64>,
    pub p_y_old: Vec<f64>,
    pub logp_x_old: f64,
    pub logp_y_old: f64,
    /// Old value components, `[sc, pd, hd, dc]`.
    pub values_old: [f64; 4],
    /// Reward components, `[sc, pd, hd, dc]`.
    pub rewards: [f64; 4],
    pub directions: Directions,
    /// Failure termination; clip end is not terminal.
    pub terminal: bool,
    pub termination: Termination,
    pub frame: usize,
    pub clip: String,
}

impl Transition {
    pub fn rewards_from(r: &RewardBreakdown) -> [f64; 4] {
        [r.r_sc, r.r_pd, r.r_hd, r.r_dc]
    }
}
