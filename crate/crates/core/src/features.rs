//! Privileged scene features fed to the policy in place of a perception
//! stack. All positions are in the ego frame (longitudinal forward, lateral
//! positive right) and scaled to roughly unit range.

use serde::{Deserialize, Serialize};

use crate::env::EnvState;
use crate::error::{Error, Result};
use crate::geometry::{
    point_polygon_distance, polygon_centroid, project_to_polyline, wrap_angle, GridConfig, Pose,
    Side,
};
use crate::scenario::Scenario;

const POS_SCALE: f64 = 20.0;
const POS_CLAMP: f64 = 3.0;
const SPEED_SCALE: f64 = 10.0;
const SIZE_SCALE: f64 = 5.0;
const CURVATURE_SCALE: f64 = 50.0;
const AGENT_SLOT: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Number of nearest agents encoded.
    pub k_agents: usize,
    /// Arc distances ahead at which route curvature is sampled, meters.
    pub lookaheads: Vec<f64>,
    pub grid: GridConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            k_agents: 6,
            lookaheads: vec![5.0, 15.0, 30.0],
            grid: GridConfig::default(),
        }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        // speed, route offset, heading error, curvatures, agents, obstacle,
        // progress, previous action
        1 + 2 + self.lookaheads.len() + AGENT_SLOT * self.k_agents + 4 + 1 + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookaheads.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidConfig("lookaheads must be positive".into()));
        }
        self.grid.build().map(|_| ())
    }

    /// Offset of the first agent slot within the vector.
    pub fn agent_offset(&self) -> usize {
        3 + self.lookaheads.len()
    }
}

/// Per-scenario precomputation (route poses and arc lengths).
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    route: Vec<Pose>,
    arc: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(scenario: &Scenario, cfg: &FeatureConfig) -> Self {
        let pts = &scenario.route;
        let mut route = Vec::with_capacity(pts.len());
        for k in 0..pts.len() {
            let (a, b) = if k + 1 < pts.len() {
                (pts[k], pts[k + 1])
            } else {
                (pts[k - 1], pts[k])
            };
            route.push(Pose::new(pts[k][0], pts[k][1], (b[1] - a[1]).atan2(b[0] - a[0])));
        }
        let mut arc = vec![0.0; pts.len()];
        for k in 1..pts.len() {
            arc[k] = arc[k - 1] + (pts[k][0] - pts[k - 1][0]).hypot(pts[k][1] - pts[k - 1][1]);
        }
        Self {
            cfg: cfg.clone(),
            route,
            arc,
        }
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// Heading of the route segment containing arc position `s`.
    fn heading_at(&self, s: f64) -> f64 {
        let k = self.arc.partition_point(|a| *a <= s).clamp(1, self.arc.len() - 1);
        self.route[k - 1].psi
    }

    pub fn extract(&self, state: &EnvState, scenario: &Scenario) -> Vec<f64> {
        let cfg = &self.cfg;
        let ego = state.ego;
        let mut out = Vec::with_capacity(cfg.dim());
        out.push(state.ego_speed / SPEED_SCALE);

        let proj = project_to_polyline(ego.position(), &self.route).expect("validated route");
        let offset = match proj.side {
            Some(Side::Right) => proj.distance,
            Some(Side::Left) => -proj.distance,
            None => 0.0,
        };
        out.push(offset / 2.0);
        out.push(wrap_angle(ego.psi - proj.heading));
        let h0 = self.heading_at(proj.arc_pos);
        for l in &cfg.lookaheads {
            let h = self.heading_at(proj.arc_pos + l);
            out.push(wrap_angle(h - h0) / l * CURVATURE_SCALE);
        }

        let frame = state.frame.min(scenario.last_frame());
        let mut agents: Vec<(f64, [f64; AGENT_SLOT])> = scenario
            .agents
            .iter()
            .filter_map(|a| {
                let s = a.states.get(&frame)?;
                let d = (s.pose.x - ego.x).hypot(s.pose.y - ego.y);
                let (lon, lat) = ego.to_local(s.pose.position());
                Some((
                    d,
                    [
                        1.0,
                        scaled(lon),
                        scaled(lat),
                        wrap_angle(s.pose.psi - ego.psi) / std::f64::consts::PI,
                        s.speed / SPEED_SCALE,
                        a.length / SIZE_SCALE,
                        a.width / SIZE_SCALE,
                    ],
                ))
            })
            .collect();
        // stable sort keeps track order among equal distances
        agents.sort_by(|a, b| a.0.total_cmp(&b.0));
        for k in 0..cfg.k_agents {
            match agents.get(k) {
                Some((_, slot)) => out.extend_from_slice(slot),
                None => out.extend_from_slice(&[0.0; AGENT_SLOT]),
            }
        }

        let nearest = scenario
            .static_obstacles
            .iter()
            .map(|p| (point_polygon_distance(ego.position(), p), p))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match nearest {
            Some((d, poly)) => {
                let (lon, lat) = ego.to_local(polygon_centroid(poly));
                out.extend_from_slice(&[1.0, scaled(lon), scaled(lat), (d / POS_SCALE).min(POS_CLAMP)]);
            }
            None => out.extend_from_slice(&[0.0; 4]),
        }

        let total = *self.arc.last().expect("validated route");
        out.push(if total > 0.0 { proj.arc_pos / total } else { 0.0 });

        let g = &cfg.grid;
        out.push(state.prev_action.0 / g.dx_max);
        out.push(state.prev_action.1 / g.dy_max);
        debug_assert_eq!(out.len(), cfg.dim());
        out
    }
}

fn scaled(x: f64) -> f64 {
    (x / POS_SCALE).clamp(-POS_CLAMP, POS_CLAMP)
}

/// One-shot feature extraction; prefer [`FeatureExtractor`] in loops.
pub fn extract_features(state: &EnvState, scenario: &Scenario, cfg: &FeatureConfig) -> Vec<f64> {
    FeatureExtractor::new(scenario, cfg).extract(state, scenario)
}
