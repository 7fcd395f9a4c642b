//! Closed-loop benchmark: greedy episodes over a suite, per-frame episode
//! logs and the nine evaluation metrics.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;

use serde::{Deserialize, Serialize};

use crate::env::{compute_deviation, Env, EnvConfig, EnvState, RewardBreakdown, Termination};
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::geometry::{wrap_angle, Pose};
use crate::policy::{argmax, Policy};
use crate::scenario::Scenario;

/// One visited frame. `action` is the displacement chosen at this frame
/// (absent on the final frame); `reward` is what arriving here earned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub clip: String,
    pub frame: usize,
    pub dt: f64,
    pub pose: Pose,
    pub speed: f64,
    pub expert_pose: Pose,
    pub action: Option<(f64, f64)>,
    pub action_indices: Option<(usize, usize)>,
    pub reward: RewardBreakdown,
    pub termination: Termination,
    pub d_min: f64,
    pub v_long: f64,
    pub v_lat: f64,
    /// Agent footprints and static obstacles, recorded on event frames only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub footprints: Vec<Vec<[f64; 2]>>,
}

impl FrameRecord {
    pub fn is_event(&self) -> bool {
        self.reward.has_event()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub clip: String,
    pub dt: f64,
    pub frames: Vec<FrameRecord>,
    pub termination: Termination,
}

impl EpisodeLog {
    /// Frames strictly before the first event.
    pub fn safe_frames(&self) -> &[FrameRecord] {
        let end = self.frames.iter().position(|f| f.is_event()).unwrap_or(self.frames.len());
        &self.frames[..end]
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for f in &self.frames {
            s.push_str(&serde_json::to_string(f).expect("frame record serializes"));
            s.push('\n');
        }
        s
    }

    pub fn from_jsonl(text: &str, origin: &Path) -> Result<Self> {
        let mut frames: Vec<FrameRecord> = Vec::new();
        for (k, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: FrameRecord = serde_json::from_str(line)
                .map_err(|e| Error::parse(origin, format!("line {}: {e}", k + 1)))?;
            frames.push(rec);
        }
        let first = frames.first().ok_or_else(|| Error::parse(origin, "empty episode log"))?;
        let (clip, dt) = (first.clip.clone(), first.dt);
        for (k, f) in frames.iter().enumerate() {
            if f.clip != clip || f.frame != first.frame + k {
                return Err(Error::parse(origin, format!("record {k} is not contiguous with the episode")));
            }
        }
        let n_term = frames.iter().filter(|f| f.termination != Termination::None).count();
        let termination = frames.last().map(|f| f.termination).unwrap_or_default();
        if n_term > 1 || (n_term == 1 && termination == Termination::None) {
            return Err(Error::parse(origin, "termination must be recorded once, on the last frame"));
        }
        Ok(Self {
            clip,
            dt,
            frames,
            termination,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path)
    }
}

/// Mean `d_min` over every pre-event frame of every episode.
pub fn compute_add(logs: &[EpisodeLog]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for log in logs {
        for f in log.safe_frames() {
            sum += f.d_min;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoSafeFrames);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Longitudinal,
    Lateral,
}

/// Mean absolute second difference of one episode's axis velocity over its
/// interior safe frames.
pub fn episode_jerk(log: &EpisodeLog, axis: Axis) -> Result<f64> {
    let v: Vec<f64> = log
        .safe_frames()
        .iter()
        .map(|f| match axis {
            Axis::Longitudinal => f.v_long,
            Axis::Lateral => f.v_lat,
        })
        .collect();
    if v.len() < 3 {
        return Err(Error::TooFewFrames);
    }
    let dt2 = log.dt * log.dt;
    let total: f64 = v.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs() / dt2).sum();
    Ok(total / (v.len() - 2) as f64)
}

/// Per-episode jerk averaged over the episodes long enough to have one.
pub fn compute_jerk(logs: &[EpisodeLog], axis: Axis) -> Result<f64> {
    let per: Vec<f64> = logs.iter().filter_map(|l| episode_jerk(l, axis).ok()).collect();
    if per.is_empty() {
        return Err(Error::TooFewFrames);
    }
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_total: usize,
    pub n_dc: usize,
    pub n_sc: usize,
    pub n_pd: usize,
    pub n_hd: usize,
    pub cr: f64,
    pub dcr: f64,
    pub scr: f64,
    pub dr: f64,
    pub pdr: f64,
    pub hdr: f64,
    /// Undefined when no episode has a pre-event frame.
    pub add: Option<f64>,
    pub long_jerk: Option<f64>,
    pub lat_jerk: Option<f64>,
}

impl MetricsReport {
    pub fn from_logs(logs: &[EpisodeLog]) -> Self {
        let count = |t: Termination| logs.iter().filter(|l| l.termination == t).count();
        let n_total = logs.len();
        let (n_dc, n_sc) = (count(Termination::DynamicCollision), count(Termination::StaticCollision));
        let (n_pd, n_hd) = (count(Termination::PositionDeviation), count(Termination::HeadingDeviation));
        let ratio = |k: usize| if n_total == 0 { 0.0 } else { k as f64 / n_total as f64 };
        Self {
            n_total,
            n_dc,
            n_sc,
            n_pd,
            n_hd,
            cr: ratio(n_dc + n_sc),
            dcr: ratio(n_dc),
            scr: ratio(n_sc),
            dr: ratio(n_pd + n_hd),
            pdr: ratio(n_pd),
            hdr: ratio(n_hd),
            add: compute_add(logs).ok(),
            long_jerk: compute_jerk(logs, Axis::Longitudinal).ok(),
            lat_jerk: compute_jerk(logs, Axis::Lateral).ok(),
        }
    }

    /// Count identities, plus the ratio identities up to one rounding step.
    pub fn check_identities(&self) -> bool {
        let counts = self.n_dc + self.n_sc + self.n_pd + self.n_hd <= self.n_total;
        let tol = 4.0 * f64::EPSILON;
        let cr = (self.cr - (self.dcr + self.scr)).abs() <= tol;
        let dr = (self.dr - (self.pdr + self.hdr)).abs() <= tol;
        let bounded = [self.cr, self.dcr, self.scr, self.dr, self.pdr, self.hdr]
            .iter()
            .all(|r| (0.0..=1.0).contains(r));
        counts && cr && dr && bounded
    }

    pub fn rows(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("CR", Some(self.cr)),
            ("DCR", Some(self.dcr)),
            ("SCR", Some(self.scr)),
            ("DR", Some(self.dr)),
            ("PDR", Some(self.pdr)),
            ("HDR", Some(self.hdr)),
            ("ADD", self.add),
            ("long_jerk", self.long_jerk),
            ("lat_jerk", self.lat_jerk),
            ("N_total", Some(self.n_total as f64)),
            ("N_dc", Some(self.n_dc as f64)),
            ("N_sc", Some(self.n_sc as f64)),
            ("N_pd", Some(self.n_pd as f64)),
            ("N_hd", Some(self.n_hd as f64)),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.rows() {
            match v {
                Some(v) => s.push_str(&format!("{k},{v}\n")),
                None => s.push_str(&format!("{k},\n")),
            }
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.rows().into_iter().take(9) {
            match v {
                Some(v) => s.push_str(&format!("{k:<10} {v:>10.4}\n")),
                None => s.push_str(&format!("{k:<10} {:>10}\n", "n/a")),
            }
        }
        s.push_str(&format!(
            "episodes {} (dc {}, sc {}, pd {}, hd {})\n",
            self.n_total, self.n_dc, self.n_sc, self.n_pd, self.n_hd
        ));
        s
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let json = dir.join("metrics.json");
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        let csv = dir.join("metrics.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))
    }
}

/// Who drives during evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Driver<'a> {
    /// Greedy (arg-max) actions of a policy.
    Greedy(&'a Policy),
    /// Exact playback of the expert trajectory.
    Expert,
}

fn record(env: &Env, state: &EnvState, reward: RewardBreakdown) -> FrameRecord {
    let sc = env.scenario();
    let dev = compute_deviation(state.ego, env.expert_path());
    let rel = wrap_angle(state.ego.psi - dev.matched_heading);
    let footprints = if reward.has_event() {
        let mut fp: Vec<Vec<[f64; 2]>> = sc
            .agent_boxes(state.frame)
            .iter()
            .map(|b| b.corners().to_vec())
            .collect();
        fp.extend(sc.static_obstacles.iter().cloned());
        fp
    } else {
        Vec::new()
    };
    FrameRecord {
        clip: sc.id.clone(),
        frame: state.frame,
        dt: sc.dt(),
        pose: state.ego,
        speed: state.ego_speed,
        expert_pose: env.expert_path()[state.frame.min(sc.last_frame())],
        action: None,
        action_indices: None,
        reward,
        termination: state.termination,
        d_min: dev.pos_dev,
        v_long: state.ego_speed * rel.cos(),
        // positive to the right of the expert path
        v_lat: -state.ego_speed * rel.sin(),
        footprints,
    }
}

/// Plays one episode to termination.
pub fn run_episode(driver: Driver<'_>, scenario: &Arc<Scenario>, env_cfg: &EnvConfig) -> Result<EpisodeLog> {
    let env = Env::new(scenario.clone(), *env_cfg);
    let mut state = env.reset();
    let mut frames = vec![record(&env, &state, RewardBreakdown::default())];
    let policy_parts = match driver {
        Driver::Greedy(p) => Some((p, FeatureExtractor::new(scenario, &p.cfg.features), p.cfg.features.grid.build()?)),
        Driver::Expert => None,
    };
    while !state.done {
        let (action, indices) = match &policy_parts {
            Some((p, fx, grid)) => {
                let (d, _) = p.forward(&fx.extract(&state, scenario))?;
                let (i, j) = (argmax(&d.p_x), argmax(&d.p_y));
                (grid.displacement(i, j), Some((i, j)))
            }
            None => (env.expert_action(state.frame), None),
        };
        let last = frames.last_mut().expect("episode has a first frame");
        last.action = Some(action);
        last.action_indices = indices;
        let (next, reward) = env.step(&state, action)?;
        frames.push(record(&env, &next, reward));
        state = next;
    }
    Ok(EpisodeLog {
        clip: scenario.id.clone(),
        dt: scenario.dt(),
        frames,
        termination: state.termination,
    })
}

/// One episode per clip, spread across `workers` threads; logs are returned
/// in suite order.
pub fn run_benchmark(
    driver: Driver<'_>,
    suite: &[Arc<Scenario>],
    env_cfg: &EnvConfig,
    workers: usize,
) -> Result<(MetricsReport, Vec<EpisodeLog>)> {
    if suite.is_empty() {
        return Err(Error::EmptyScenarioPool);
    }
    let workers = workers.clamp(1, suite.len());
    let logs: Vec<EpisodeLog> = if workers == 1 {
        suite.iter().map(|s| run_episode(driver, s, env_cfg)).collect::<Result<_>>()?
    } else {
        let next = AtomicUsize::new(0);
        let (tx, rx) = mpsc::channel();
        thread::scope(|s| {
            for _ in 0..workers {
                let tx = tx.clone();
                let next = &next;
                s.spawn(move || loop {
                    let k = next.fetch_add(1, Ordering::Relaxed);
                    let Some(sc) = suite.get(k) else { break };
                    if tx.send((k, run_episode(driver, sc, env_cfg))).is_err() {
                        break;
                    }
                });
            }
        });
        drop(tx);
        let mut out: Vec<(usize, Result<EpisodeLog>)> = rx.into_iter().collect();
        out.sort_by_key(|(k, _)| *k);
        out.into_iter().map(|(_, r)| r).collect::<Result<_>>()?
    };
    Ok((MetricsReport::from_logs(&logs), logs))
}

/// Writes one `<clip>.jsonl` per episode into `dir`.
pub fn save_episode_logs(dir: impl AsRef<Path>, logs: &[EpisodeLog]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for log in logs {
        let path = dir.join(format!("{}.jsonl", log.clip));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(log.to_jsonl().as_bytes()).map_err(|e| Error::io(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
