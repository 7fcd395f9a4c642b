//! Closed-loop environment: the ego follows the bicycle model, other agents
//! replay their logged tracks, and four event detectors emit penalties and
//! terminate the episode.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    action_to_control, bicycle_step, control_to_action, heading_error, polygon_box_overlap,
    polygon_centroid, project_to_polyline, wrap_angle, Control, KinematicConfig, OrientedBox, Pose,
    Rotation, Side,
};
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardMagnitudes {
    pub dc: f64,
    pub sc: f64,
    pub pd: f64,
    pub hd: f64,
}

impl Default for RewardMagnitudes {
    fn default() -> Self {
        Self {
            dc: -5.0,
            sc: -5.0,
            pd: -2.0,
            hd: -2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Position deviation threshold, meters.
    pub d_max: f64,
    /// Heading deviation threshold, radians.
    pub psi_max: f64,
    pub rewards: RewardMagnitudes,
    pub ego_length: f64,
    pub ego_width: f64,
    pub kinematics: KinematicConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            d_max: 2.0,
            psi_max: 40f64.to_radians(),
            rewards: RewardMagnitudes::default(),
            ego_length: 4.6,
            ego_width: 1.85,
            kinematics: KinematicConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.kinematics.validate()?;
        if !(self.d_max > 0.0) {
            return Err(Error::InvalidConfig("d_max must be positive".into()));
        }
        if !(self.psi_max > 0.0 && self.psi_max < PI) {
            return Err(Error::InvalidConfig("psi_max must lie in (0, pi)".into()));
        }
        let r = &self.rewards;
        if [r.dc, r.sc, r.pd, r.hd].iter().any(|v| *v > 0.0) {
            return Err(Error::InvalidConfig("reward magnitudes must be <= 0".into()));
        }
        if !(self.ego_length > 0.0 && self.ego_width > 0.0) {
            return Err(Error::InvalidConfig("ego footprint must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    #[default]
    None,
    DynamicCollision,
    StaticCollision,
    PositionDeviation,
    HeadingDeviation,
    ClipEnd,
}

impl Termination {
    /// Failure terminations are absorbing; clip end is a truncation.
    pub fn is_failure(self) -> bool {
        !matches!(self, Termination::None | Termination::ClipEnd)
    }

    pub const ALL: [Termination; 6] = [
        Termination::None,
        Termination::DynamicCollision,
        Termination::StaticCollision,
        Termination::PositionDeviation,
        Termination::HeadingDeviation,
        Termination::ClipEnd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::None => "none",
            Termination::DynamicCollision => "dynamic_collision",
            Termination::StaticCollision => "static_collision",
            Termination::PositionDeviation => "position_deviation",
            Termination::HeadingDeviation => "heading_deviation",
            Termination::ClipEnd => "clip_end",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionDirection {
    Ahead,
    Behind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub frame: usize,
    pub ego: Pose,
    pub ego_speed: f64,
    /// Displacement `(dx, dy)` of the last executed action.
    pub prev_action: (f64, f64),
    pub done: bool,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_dc: f64,
    pub r_sc: f64,
    pub r_pd: f64,
    pub r_hd: f64,
    pub collision_direction: Option<CollisionDirection>,
    pub obstacle_side: Option<Side>,
    pub deviation_side: Option<Side>,
    /// Sense in which the ego heading deviates from the expert heading.
    pub rotation_dir: Option<Rotation>,
}

impl RewardBreakdown {
    pub fn total(&self) -> f64 {
        self.r_dc + self.r_sc + self.r_pd + self.r_hd
    }

    pub fn has_event(&self) -> bool {
        self.r_dc < 0.0 || self.r_sc < 0.0 || self.r_pd < 0.0 || self.r_hd < 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deviation {
    pub pos_dev: f64,
    pub side: Option<Side>,
    pub head_dev: f64,
    pub rotation: Option<Rotation>,
    /// Expert heading at the matched point.
    pub matched_heading: f64,
}

/// Closest-point deviation of the ego from the expert path.
pub fn compute_deviation(ego: Pose, expert_path: &[Pose]) -> Deviation {
    let proj = if expert_path.len() == 1 {
        let p = expert_path[0];
        project_to_polyline(ego.position(), &[p, p]).expect("two vertices")
    } else {
        project_to_polyline(ego.position(), expert_path).expect("validated expert path")
    };
    let (head_dev, rotation) = heading_error(ego.psi, proj.heading);
    Deviation {
        pos_dev: proj.distance,
        side: proj.side,
        head_dev,
        rotation,
        matched_heading: proj.heading,
    }
}

/// Direction of the nearest overlapping agent relative to the ego, if any.
pub fn detect_dynamic_collision(ego: &OrientedBox, agents: &[OrientedBox]) -> Option<CollisionDirection> {
    let ego_pos = ego.center.position();
    agents
        .iter()
        .filter(|a| crate::geometry::obb_overlap(ego, a))
        .min_by(|a, b| {
            let da = dist(ego_pos, a.center.position());
            let db = dist(ego_pos, b.center.position());
            da.total_cmp(&db)
        })
        .map(|a| {
            let (lon, _) = ego.center.to_local(a.center.position());
            if lon >= 0.0 {
                CollisionDirection::Ahead
            } else {
                CollisionDirection::Behind
            }
        })
}

/// Side of the nearest overlapping static obstacle; a centroid exactly on
/// the ego centerline counts as left.
pub fn detect_static_collision(ego: &OrientedBox, obstacles: &[Vec<[f64; 2]>]) -> Option<Side> {
    let ego_pos = ego.center.position();
    obstacles
        .iter()
        .filter(|p| polygon_box_overlap(p, ego))
        .map(|p| polygon_centroid(p))
        .min_by(|a, b| dist(ego_pos, *a).total_cmp(&dist(ego_pos, *b)))
        .map(|c| {
            let (_, lat_right) = ego.center.to_local(c);
            if lat_right > 0.0 {
                Side::Right
            } else {
                Side::Left
            }
        })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// A scenario bound to an environment config. Stepping is a pure function
/// of `(state, action)`.
#[derive(Debug, Clone)]
pub struct Env {
    scenario: Arc<Scenario>,
    cfg: EnvConfig,
    expert_path: Vec<Pose>,
}

impl Env {
    pub fn new(scenario: Arc<Scenario>, cfg: EnvConfig) -> Self {
        let expert_path = scenario.expert_poses();
        Self {
            scenario,
            cfg,
            expert_path,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn scenario_arc(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn expert_path(&self) -> &[Pose] {
        &self.expert_path
    }

    pub fn reset(&self) -> EnvState {
        let first = self.scenario.expert_traj[0];
        EnvState {
            frame: 0,
            ego: first.pose,
            ego_speed: first.speed,
            prev_action: (0.0, first.speed * self.cfg.kinematics.horizon),
            done: false,
            termination: Termination::None,
        }
    }

    pub fn ego_box(&self, pose: Pose) -> OrientedBox {
        OrientedBox::new(pose, self.cfg.ego_length, self.cfg.ego_width)
    }

    /// Control executed for a horizon displacement. A non-positive forward
    /// displacement stops the vehicle.
    pub fn control_for(&self, dx: f64, dy: f64) -> Control {
        if dy <= 0.0 {
            return Control::STOP;
        }
        action_to_control(dx, dy, &self.cfg.kinematics).unwrap_or(Control::STOP)
    }

    pub fn step(&self, state: &EnvState, action: (f64, f64)) -> Result<(EnvState, RewardBreakdown)> {
        if state.done {
            return Err(Error::SteppedDoneEpisode);
        }
        let kin = KinematicConfig {
            dt: self.scenario.dt(),
            ..self.cfg.kinematics
        };
        let ctrl = self.control_for(action.0, action.1);
        let ego = bicycle_step(state.ego, ctrl, &kin);
        let frame = state.frame + 1;

        let (reward, termination) = self.evaluate(ego, frame);
        let termination = if termination == Termination::None && frame >= self.scenario.last_frame() {
            Termination::ClipEnd
        } else {
            termination
        };
        let next = EnvState {
            frame,
            ego,
            ego_speed: ctrl.v,
            prev_action: action,
            done: termination != Termination::None,
            termination,
        };
        Ok((next, reward))
    }

    /// Evaluates the four event detectors at an ego pose and frame.
    pub fn evaluate(&self, ego: Pose, frame: usize) -> (RewardBreakdown, Termination) {
        let r = &self.cfg.rewards;
        let ego_box = self.ego_box(ego);
        let mut out = RewardBreakdown::default();
        let mut termination = Termination::None;

        let agents = self.scenario.agent_boxes(frame);
        if let Some(dir) = detect_dynamic_collision(&ego_box, &agents) {
            out.r_dc = r.dc;
            out.collision_direction = Some(dir);
            termination = Termination::DynamicCollision;
        }
        if let Some(side) = detect_static_collision(&ego_box, &self.scenario.static_obstacles) {
            out.r_sc = r.sc;
            out.obstacle_side = Some(side);
            if termination == Termination::None {
                termination = Termination::StaticCollision;
            }
        }
        let dev = compute_deviation(ego, &self.expert_path);
        if dev.pos_dev > self.cfg.d_max {
            out.r_pd = r.pd;
            out.deviation_side = dev.side;
            if termination == Termination::None {
                termination = Termination::PositionDeviation;
            }
        }
        if dev.head_dev > self.cfg.psi_max {
            out.r_hd = r.hd;
            out.rotation_dir = dev.rotation;
            if termination == Termination::None {
                termination = Termination::HeadingDeviation;
            }
        }
        (out, termination)
    }

    /// Horizon displacement that reproduces the expert's motion from
    /// `frame` to `frame + 1` exactly under the Euler bicycle model.
    pub fn expert_action(&self, frame: usize) -> (f64, f64) {
        let last = self.scenario.last_frame();
        if frame >= last {
            return (0.0, 0.0);
        }
        let a = self.expert_path[frame];
        let b = self.expert_path[frame + 1];
        let dt = self.scenario.dt();
        let v = (b.x - a.x).hypot(b.y - a.y) / dt;
        if v == 0.0 {
            return (0.0, 0.0);
        }
        let kin = &self.cfg.kinematics;
        let delta = (wrap_angle(b.psi - a.psi) * kin.wheelbase / (v * dt)).atan();
        control_to_action(Control { v, delta }, kin)
    }
}
