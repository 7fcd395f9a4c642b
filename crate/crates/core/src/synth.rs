//! Procedural scenario generator.
//!
//! Each template lays out a constant-curvature road, simulates an expert
//! driver (IDM longitudinal control + pure-pursuit steering) with the same
//! Euler bicycle model the environment uses, and places log-replayed agents
//! and obstacles around it. A candidate clip is accepted only if replaying
//! the expert through [`Env`] finishes without any event.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, Termination};
use crate::geometry::{bicycle_step, wrap_angle, Control, KinematicConfig, Pose};
use crate::scenario::{AgentState, AgentTrack, ExpertFrame, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    LeadVehicleBraking,
    CrossingPedestrian,
    StaticDetour,
    DenseTrafficCrawl,
    UnobstructedCruise,
}

impl Template {
    pub const ALL: [Template; 5] = [
        Template::LeadVehicleBraking,
        Template::CrossingPedestrian,
        Template::StaticDetour,
        Template::DenseTrafficCrawl,
        Template::UnobstructedCruise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Template::LeadVehicleBraking => "lead_vehicle_braking",
            Template::CrossingPedestrian => "crossing_pedestrian",
            Template::StaticDetour => "static_detour",
            Template::DenseTrafficCrawl => "dense_traffic_crawl",
            Template::UnobstructedCruise => "unobstructed_cruise",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Template::LeadVehicleBraking => 0x9e37_79b9_7f4a_7c15,
            Template::CrossingPedestrian => 0xbf58_476d_1ce4_e5b9,
            Template::StaticDetour => 0x94d0_49bb_1331_11eb,
            Template::DenseTrafficCrawl => 0x2545_f491_4f6c_dd1d,
            Template::UnobstructedCruise => 0x5851_f42d_4c95_7f2d,
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Template::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub template: Template,
    pub frame_rate: f64,
    pub duration: f64,
    /// Environment used to verify that the expert drives the clip cleanly.
    pub env: EnvConfig,
}

impl SynthParams {
    pub fn new(template: Template) -> Self {
        Self {
            template,
            frame_rate: 10.0,
            duration: 8.0,
            env: EnvConfig::default(),
        }
    }
}

const MAX_ATTEMPTS: u64 = 512;

/// Deterministically generates a clip for `(seed, params)`.
pub fn synth_scenario(seed: u64, params: &SynthParams) -> Scenario {
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ params.template.salt());
        rng.set_stream(attempt);
        let mut scenario = build(&mut rng, params);
        scenario.id = format!("{}-{seed}", params.template);
        if expert_is_clean(&scenario, &params.env) {
            return scenario;
        }
    }
    panic!(
        "could not generate a clean {} clip for seed {seed} in {MAX_ATTEMPTS} attempts",
        params.template
    );
}

fn expert_is_clean(scenario: &Scenario, cfg: &EnvConfig) -> bool {
    if scenario.validate().is_err() {
        return false;
    }
    let env = Env::new(Arc::new(scenario.clone()), *cfg);
    let mut s = env.reset();
    // the initial pose must be clean as well
    if env.evaluate(s.ego, 0).0.has_event() {
        return false;
    }
    while !s.done {
        let (next, r) = env.step(&s, env.expert_action(s.frame)).expect("not done");
        if r.has_event() {
            return false;
        }
        s = next;
    }
    s.termination == Termination::ClipEnd
}

/// Constant-curvature reference road. Offsets are lateral, positive right.
#[derive(Debug, Clone, Copy)]
struct Road {
    start: Pose,
    curvature: f64,
}

impl Road {
    fn center(&self, s: f64) -> Pose {
        let k = self.curvature;
        let h0 = self.start.psi;
        if k.abs() < 1e-12 {
            Pose::new(self.start.x + s * h0.cos(), self.start.y + s * h0.sin(), h0)
        } else {
            let h = h0 + k * s;
            Pose::new(
                self.start.x + (h.sin() - h0.sin()) / k,
                self.start.y - (h.cos() - h0.cos()) / k,
                h,
            )
        }
    }

    fn at(&self, s: f64, offset: f64) -> Pose {
        let c = self.center(s);
        let p = c.to_world(0.0, offset);
        Pose::new(p[0], p[1], c.psi)
    }

    /// Arc position and right offset of a world point (valid near the road).
    fn project(&self, p: [f64; 2]) -> (f64, f64) {
        let k = self.curvature;
        if k.abs() < 1e-12 {
            let (lon, lat) = self.start.to_local(p);
            (lon, lat)
        } else {
            let r = 1.0 / k;
            let h0 = self.start.psi;
            // centre of the turning circle (left of start for k > 0)
            let cx = self.start.x - r * h0.sin();
            let cy = self.start.y + r * h0.cos();
            let ang = (p[1] - cy).atan2(p[0] - cx);
            let ang0 = (self.start.y - cy).atan2(self.start.x - cx);
            let dist = (p[0] - cx).hypot(p[1] - cy);
            let s = wrap_angle(ang - ang0) * r;
            // right offset grows when moving away from the centre for k > 0
            let offset = (dist - r.abs()) * k.signum();
            (s, offset)
        }
    }
}

struct Idm {
    v_des: f64,
    a_max: f64,
    b: f64,
    s0: f64,
    headway: f64,
}

impl Idm {
    fn accel(&self, v: f64, lead: Option<(f64, f64)>) -> f64 {
        let free = 1.0 - (v / self.v_des.max(0.1)).powi(4);
        let interaction = match lead {
            Some((gap, v_lead)) => {
                let s_star =
                    self.s0 + v * self.headway + v * (v - v_lead) / (2.0 * (self.a_max * self.b).sqrt());
                (s_star.max(0.0) / gap.max(0.1)).powi(2)
            }
            None => 0.0,
        };
        (self.a_max * (free - interaction)).clamp(-8.0, 2.5)
    }
}

const EGO_LEN: f64 = 4.6;
const CAR_LEN: f64 = 4.5;
const CAR_WID: f64 = 1.9;

/// Everything the expert simulation needs to know about other road users.
enum Leader<'a> {
    None,
    /// Arc position and speed of a leading agent per frame, plus its length.
    Track(&'a [(f64, f64)], f64),
    /// A stop line at arc position `.0`, active on frames where `.1` is true.
    StopLine(f64, &'a [bool]),
}

struct ExpertRun {
    frames: Vec<ExpertFrame>,
    arc: Vec<f64>,
}

fn simulate_expert(
    road: &Road,
    v0: f64,
    idm: &Idm,
    leader: Leader<'_>,
    offset_profile: &dyn Fn(f64) -> f64,
    n_frames: usize,
    dt: f64,
) -> ExpertRun {
    let kin = KinematicConfig {
        dt,
        ..KinematicConfig::default()
    };
    let mut pose = road.at(0.0, offset_profile(0.0));
    let mut v = v0;
    let mut frames = Vec::with_capacity(n_frames);
    let mut arc = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let (s, _) = road.project(pose.position());
        if f > 0 {
            let lead = match &leader {
                Leader::None => None,
                Leader::Track(track, len) => {
                    let (sl, vl) = track[f];
                    Some((sl - s - (len + EGO_LEN) / 2.0, vl))
                }
                Leader::StopLine(at, active) => {
                    if active[f] && s < *at {
                        Some((at - s - EGO_LEN / 2.0, 0.0))
                    } else {
                        None
                    }
                }
            };
            v = (v + idm.accel(v, lead) * dt).max(0.0);
            if v < 0.05 {
                v = 0.0;
            }
        }
        frames.push(ExpertFrame {
            t: f as f64 * dt,
            pose,
            speed: v,
        });
        arc.push(s);
        // pure pursuit on the offset reference
        let ld = (0.9 * v).max(5.0);
        let target = road.at(s + ld, offset_profile(s + ld));
        let (lon, lat_right) = pose.to_local(target.position());
        let d2 = lon * lon + lat_right * lat_right;
        let curvature = -2.0 * lat_right / d2;
        let delta = (kin.wheelbase * curvature).atan().clamp(-0.45, 0.45);
        pose = bicycle_step(pose, Control { v, delta }, &kin);
    }
    ExpertRun { frames, arc }
}

fn random_road(rng: &mut ChaCha8Rng, max_curvature: f64) -> Road {
    let start = Pose::new(
        rng.gen_range(-100.0..100.0),
        rng.gen_range(-100.0..100.0),
        rng.gen_range(-PI..PI),
    );
    let curvature = if rng.gen_bool(0.5) {
        0.0
    } else {
        rng.gen_range(-max_curvature..max_curvature)
    };
    Road { start, curvature }
}

fn route_for(road: &Road, length: f64) -> Vec<[f64; 2]> {
    let n = (length / 2.0).ceil() as usize;
    (0..=n).map(|k| road.center(k as f64 * 2.0).position()).collect()
}

fn track_on_road(road: &Road, samples: &[(f64, f64)], offset: f64) -> BTreeMap<usize, AgentState> {
    samples
        .iter()
        .enumerate()
        .map(|(f, &(s, v))| (f, AgentState { pose: road.at(s, offset), speed: v }))
        .collect()
}

fn smoothstep(a: f64, b: f64, x: f64) -> f64 {
    if x <= a {
        0.0
    } else if x >= b {
        1.0
    } else {
        0.5 - 0.5 * (PI * (x - a) / (b - a)).cos()
    }
}

fn build(rng: &mut ChaCha8Rng, params: &SynthParams) -> Scenario {
    let n_frames = (params.duration * params.frame_rate).round() as usize + 1;
    let dt = 1.0 / params.frame_rate;
    let zero = |_: f64| 0.0;
    let (road, run, agents, obstacles) = match params.template {
        Template::UnobstructedCruise => {
            let road = random_road(rng, 0.01);
            let v0 = rng.gen_range(6.0..13.0);
            let idm = Idm {
                v_des: v0 * rng.gen_range(0.85..1.15),
                a_max: 1.2,
                b: 2.0,
                s0: 3.0,
                headway: 1.2,
            };
            let run = simulate_expert(&road, v0, &idm, Leader::None, &zero, n_frames, dt);
            (road, run, vec![], vec![])
        }
        Template::LeadVehicleBraking => {
            let road = random_road(rng, 0.006);
            let v0 = rng.gen_range(8.0..12.0);
            let gap0 = rng.gen_range(14.0..22.0);
            let t_brake = rng.gen_range(1.0..3.5);
            let decel = rng.gen_range(2.5..5.0);
            let v_end = v0 * rng.gen_range(0.0..0.4);
            let mut lead = Vec::with_capacity(n_frames);
            let (mut s, mut v) = (gap0 + (CAR_LEN + EGO_LEN) / 2.0, v0);
            for f in 0..n_frames {
                lead.push((s, v));
                if f as f64 * dt >= t_brake {
                    v = (v - decel * dt).max(v_end);
                }
                s += v * dt;
            }
            let idm = Idm {
                v_des: v0 * 1.05,
                a_max: 1.5,
                b: 3.0,
                s0: 3.5,
                headway: 1.3,
            };
            let run = simulate_expert(&road, v0, &idm, Leader::Track(&lead, CAR_LEN), &zero, n_frames, dt);
            let agent = AgentTrack {
                id: "lead".into(),
                length: CAR_LEN,
                width: CAR_WID,
                states: track_on_road(&road, &lead, 0.0),
            };
            (road, run, vec![agent], vec![])
        }
        Template::CrossingPedestrian => {
            let road = random_road(rng, 0.004);
            let v0 = rng.gen_range(7.0..11.0);
            let s_cross = rng.gen_range(30.0..50.0);
            let speed = rng.gen_range(1.0..1.8);
            let t_centre = rng.gen_range(2.0..5.0);
            let from_right = rng.gen_bool(0.5);
            let dir = if from_right { -1.0 } else { 1.0 };
            // offset(t) = -dir * speed * (t_centre - t): walks towards +dir
            let offset_at = |t: f64| dir * speed * (t - t_centre);
            let band_enter = 0.925 + 2.5;
            let band_exit = 0.925 + 0.8;
            let mut states = BTreeMap::new();
            let mut blocking = Vec::with_capacity(n_frames);
            let heading = road.center(s_cross).psi - dir * PI / 2.0;
            for f in 0..n_frames {
                let t = f as f64 * dt;
                let o = offset_at(t);
                if o.abs() <= 9.0 {
                    let p = road.at(s_cross, o);
                    states.insert(
                        f,
                        AgentState {
                            pose: Pose::new(p.x, p.y, heading),
                            speed,
                        },
                    );
                }
                // still to cross or inside the lane band
                let progress = o * dir;
                blocking.push(progress > -band_enter && progress < band_exit);
            }
            let stop_at = s_cross - 0.3 - rng.gen_range(1.0..2.5);
            let idm = Idm {
                v_des: v0,
                a_max: 1.5,
                b: 3.0,
                s0: 1.0,
                headway: 1.0,
            };
            let run = simulate_expert(
                &road,
                v0,
                &idm,
                Leader::StopLine(stop_at, &blocking),
                &zero,
                n_frames,
                dt,
            );
            let agent = AgentTrack {
                id: "ped".into(),
                length: 0.6,
                width: 0.6,
                states,
            };
            (road, run, vec![agent], vec![])
        }
        Template::StaticDetour => {
            let road = random_road(rng, 0.004);
            let v0 = rng.gen_range(6.0..10.0);
            let s_obs = rng.gen_range(30.0..50.0);
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let obs_offset = side * rng.gen_range(0.2..0.8);
            let obs_w = 2.0;
            let obs_l = 4.6;
            let margin = rng.gen_range(0.5..0.9);
            let pass = obs_offset - side * (obs_w / 2.0 + 0.925 + margin);
            let lead_in = rng.gen_range(16.0..24.0);
            let hold = obs_l / 2.0 + EGO_LEN / 2.0 + 1.0;
            let profile = move |s: f64| {
                pass * (smoothstep(s_obs - hold - lead_in, s_obs - hold, s)
                    - smoothstep(s_obs + hold, s_obs + hold + lead_in, s))
            };
            let idm = Idm {
                v_des: v0 * rng.gen_range(0.9..1.05),
                a_max: 1.0,
                b: 2.0,
                s0: 3.0,
                headway: 1.2,
            };
            let run = simulate_expert(&road, v0, &idm, Leader::None, &profile, n_frames, dt);
            let c = road.at(s_obs, obs_offset);
            let parked = crate::geometry::OrientedBox::new(c, obs_l, obs_w);
            let poly: Vec<[f64; 2]> = parked.corners().to_vec();
            (road, run, vec![], vec![poly])
        }
        Template::DenseTrafficCrawl => {
            let road = random_road(rng, 0.004);
            let v0 = rng.gen_range(1.5..4.0);
            let gap0 = rng.gen_range(5.0..9.0);
            let period = rng.gen_range(3.0..6.0);
            let phase = rng.gen_range(0.0..2.0 * PI);
            let mut lead = Vec::with_capacity(n_frames);
            let (mut s, mut v) = (gap0 + (CAR_LEN + EGO_LEN) / 2.0, v0);
            for f in 0..n_frames {
                lead.push((s, v));
                let t = f as f64 * dt;
                let target = (v0 * (1.0 + (2.0 * PI * t / period + phase).sin())).max(0.0);
                v = (v + (target - v).clamp(-3.0 * dt, 1.5 * dt)).max(0.0);
                s += v * dt;
            }
            let idm = Idm {
                v_des: 2.0 * v0 + 1.0,
                a_max: 1.5,
                b: 2.5,
                s0: 2.0,
                headway: 1.0,
            };
            let run = simulate_expert(&road, v0, &idm, Leader::Track(&lead, CAR_LEN), &zero, n_frames, dt);
            let mut agents = vec![AgentTrack {
                id: "lead".into(),
                length: CAR_LEN,
                width: CAR_WID,
                states: track_on_road(&road, &lead, 0.0),
            }];
            // a follower replaying an IDM response to the expert
            let follow_idm = Idm {
                v_des: 2.0 * v0 + 1.0,
                a_max: 1.5,
                b: 2.5,
                s0: 2.0,
                headway: 0.9,
            };
            let mut follow = Vec::with_capacity(n_frames);
            let (mut fs, mut fv) = (-(rng.gen_range(4.0..7.0) + (CAR_LEN + EGO_LEN) / 2.0), v0);
            for f in 0..n_frames {
                follow.push((fs, fv));
                let gap = run.arc[f] - fs - (CAR_LEN + EGO_LEN) / 2.0;
                fv = (fv + follow_idm.accel(fv, Some((gap, run.frames[f].speed))) * dt).max(0.0);
                fs += fv * dt;
            }
            agents.push(AgentTrack {
                id: "follow".into(),
                length: CAR_LEN,
                width: CAR_WID,
                states: track_on_road(&road, &follow, 0.0),
            });
            for (k, lane) in [-3.5, 3.5].into_iter().enumerate() {
                if rng.gen_bool(0.7) {
                    let speed = rng.gen_range(0.5..5.0);
                    let s0 = rng.gen_range(-15.0..25.0);
                    let samples: Vec<(f64, f64)> =
                        (0..n_frames).map(|f| (s0 + speed * f as f64 * dt, speed)).collect();
                    agents.push(AgentTrack {
                        id: format!("adj{k}"),
                        length: CAR_LEN,
                        width: CAR_WID,
                        states: track_on_road(&road, &samples, lane),
                    });
                }
            }
            (road, run, agents, vec![])
        }
    };
    let travelled = run.arc.last().copied().unwrap_or(0.0);
    Scenario {
        id: String::new(),
        frame_rate: params.frame_rate,
        duration: params.duration,
        expert_traj: run.frames,
        agents,
        static_obstacles: obstacles,
        route: route_for(&road, travelled.max(0.0) + 60.0),
    }
}
