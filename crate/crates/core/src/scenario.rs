//! Driving clips: the expert ego trajectory, log-replayed agents, static
//! obstacles and the navigation route, plus their JSON file format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{is_convex, OrientedBox, Pose};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertFrame {
    pub t: f64,
    pub pose: Pose,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub pose: Pose,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTrack {
    pub id: String,
    pub length: f64,
    pub width: f64,
    /// Keyed by frame index; missing frames mean the agent is not in the scene.
    pub states: BTreeMap<usize, AgentState>,
}

impl AgentTrack {
    pub fn box_at(&self, frame: usize) -> Option<OrientedBox> {
        self.states
            .get(&frame)
            .map(|s| OrientedBox::new(s.pose, self.length, self.width))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub frame_rate: f64,
    pub duration: f64,
    pub expert_traj: Vec<ExpertFrame>,
    pub agents: Vec<AgentTrack>,
    pub static_obstacles: Vec<Vec<[f64; 2]>>,
    pub route: Vec<[f64; 2]>,
}

impl Scenario {
    pub fn num_frames(&self) -> usize {
        self.expert_traj.len()
    }

    /// Index of the last frame; an episode ends when the ego reaches it.
    pub fn last_frame(&self) -> usize {
        self.expert_traj.len() - 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.frame_rate
    }

    pub fn expert_poses(&self) -> Vec<Pose> {
        self.expert_traj.iter().map(|f| f.pose).collect()
    }

    /// Boxes of all agents present at `frame`, in track order.
    pub fn agent_boxes(&self, frame: usize) -> Vec<OrientedBox> {
        self.agents.iter().filter_map(|a| a.box_at(frame)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::schema("frame_rate", "must be positive and finite"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::schema("duration", "must be positive and finite"));
        }
        let frames = self.duration * self.frame_rate;
        if (frames - frames.round()).abs() > 1e-9 {
            return Err(Error::schema(
                "duration",
                "duration * frame_rate must be an integer frame count",
            ));
        }
        let expected = frames.round() as usize + 1;
        if self.expert_traj.len() != expected {
            return Err(Error::schema(
                "expert_traj",
                format!("expected {expected} frames, found {}", self.expert_traj.len()),
            ));
        }
        let t0 = self.expert_traj[0].t;
        for (k, f) in self.expert_traj.iter().enumerate() {
            let finite = [f.t, f.pose.x, f.pose.y, f.pose.psi, f.speed]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::schema("expert_traj", format!("frame {k} has non-finite values")));
            }
            if f.speed < 0.0 {
                return Err(Error::schema("expert_traj", format!("frame {k} has negative speed")));
            }
            let want = t0 + k as f64 / self.frame_rate;
            if (f.t - want).abs() > 1e-6 {
                return Err(Error::schema(
                    "expert_traj",
                    format!("timestamp of frame {k} is {}, expected {want}", f.t),
                ));
            }
        }
        for a in &self.agents {
            if !(a.length > 0.0 && a.width > 0.0) {
                return Err(Error::schema("agents", format!("agent {} has a non-positive footprint", a.id)));
            }
            if let Some((&last, _)) = a.states.iter().next_back() {
                if last >= expected {
                    return Err(Error::schema(
                        "agents",
                        format!("agent {} has a state at frame {last} beyond the clip", a.id),
                    ));
                }
            }
            for s in a.states.values() {
                if ![s.pose.x, s.pose.y, s.pose.psi, s.speed].iter().all(|v| v.is_finite()) {
                    return Err(Error::schema("agents", format!("agent {} has non-finite state", a.id)));
                }
            }
        }
        for (k, poly) in self.static_obstacles.iter().enumerate() {
            if !is_convex(poly) {
                return Err(Error::schema(
                    "static_obstacles",
                    format!("obstacle {k} is not a convex polygon with at least 3 vertices"),
                ));
            }
        }
        if self.route.len() < 2 {
            return Err(Error::schema("route", "needs at least two waypoints"));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AgentFile {
    id: String,
    length: f64,
    width: f64,
    states: BTreeMap<String, [f64; 4]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioFile {
    id: String,
    frame_rate: f64,
    duration: f64,
    expert_traj: Vec<[f64; 5]>,
    agents: Vec<AgentFile>,
    static_obstacles: Vec<Vec<[f64; 2]>>,
    route: Vec<[f64; 2]>,
}

const REQUIRED_KEYS: [&str; 7] = [
    "id",
    "frame_rate",
    "duration",
    "expert_traj",
    "agents",
    "static_obstacles",
    "route",
];

impl Scenario {
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Scenario> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::parse(origin, e))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::schema("<root>", "expected a JSON object"))?;
        for key in REQUIRED_KEYS {
            if !obj.contains_key(key) {
                return Err(Error::schema(key, "missing"));
            }
        }
        let file: ScenarioFile =
            serde_json::from_value(value).map_err(|e| Error::schema("<root>", e.to_string()))?;
        let mut agents = Vec::with_capacity(file.agents.len());
        for a in file.agents {
            let mut states = BTreeMap::new();
            for (k, s) in a.states {
                let frame: usize = k
                    .parse()
                    .map_err(|_| Error::schema("agents", format!("bad frame index `{k}` for agent {}", a.id)))?;
                states.insert(
                    frame,
                    AgentState {
                        pose: Pose::new(s[0], s[1], s[2]),
                        speed: s[3],
                    },
                );
            }
            agents.push(AgentTrack {
                id: a.id,
                length: a.length,
                width: a.width,
                states,
            });
        }
        let scenario = Scenario {
            id: file.id,
            frame_rate: file.frame_rate,
            duration: file.duration,
            expert_traj: file
                .expert_traj
                .iter()
                .map(|r| ExpertFrame {
                    t: r[0],
                    pose: Pose::new(r[1], r[2], r[3]),
                    speed: r[4],
                })
                .collect(),
            agents,
            static_obstacles: file.static_obstacles,
            route: file.route,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json_string(&self) -> String {
        let file = ScenarioFile {
            id: self.id.clone(),
            frame_rate: self.frame_rate,
            duration: self.duration,
            expert_traj: self
                .expert_traj
                .iter()
                .map(|f| [f.t, f.pose.x, f.pose.y, f.pose.psi, f.speed])
                .collect(),
            agents: self
                .agents
                .iter()
                .map(|a| AgentFile {
                    id: a.id.clone(),
                    length: a.length,
                    width: a.width,
                    states: a
                        .states
                        .iter()
                        .map(|(k, s)| (k.to_string(), [s.pose.x, s.pose.y, s.pose.psi, s.speed]))
                        .collect(),
                })
                .collect(),
            static_obstacles: self.static_obstacles.clone(),
            route: self.route.clone(),
        };
        serde_json::to_string(&file).expect("scenario serializes")
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scenario::from_json_str(&text, path)
}

pub fn save_scenario(path: impl AsRef<Path>, scenario: &Scenario) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scenario.to_json_string()).map_err(|e| Error::io(path, e))
}
