//! Planar geometry and kinematics.
//!
//! World frame is right-handed with headings measured counterclockwise from
//! the world x-axis. The ego frame has its longitudinal axis along the
//! heading and its lateral axis pointing to the **right**, so that lateral
//! anchor order (low index = left, high index = right) matches steering
//! direction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid maps -pi to pi already; guard the 2*pi rounding edge
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Self {
            x,
            y,
            psi: wrap_angle(psi),
        }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Expresses a world point in this pose's frame as `(longitudinal, lateral_right)`.
    pub fn to_local(&self, p: [f64; 2]) -> (f64, f64) {
        let (s, c) = self.psi.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        (c * dx + s * dy, s * dx - c * dy)
    }

    /// Inverse of [`Pose::to_local`].
    pub fn to_world(&self, lon: f64, lat_right: f64) -> [f64; 2] {
        let (s, c) = self.psi.sin_cos();
        [
            self.x + c * lon + s * lat_right,
            self.y + s * lon - c * lat_right,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    /// Linear velocity, m/s.
    pub v: f64,
    /// Front-wheel steering angle, rad. Positive steers left.
    pub delta: f64,
}

impl Control {
    pub const STOP: Control = Control { v: 0.0, delta: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicConfig {
    pub wheelbase: f64,
    pub dt: f64,
    /// Duration one action describes, seconds.
    pub horizon: f64,
    pub delta_max: f64,
}

impl Default for KinematicConfig {
    fn default() -> Self {
        Self {
            wheelbase: 2.8,
            dt: 0.1,
            horizon: 0.5,
            delta_max: 0.6,
        }
    }
}

impl KinematicConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.wheelbase > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "wheelbase must be positive, got {}",
                self.wheelbase
            )));
        }
        if !(self.delta_max > 0.0 && self.delta_max < PI / 2.0) {
            return Err(Error::InvalidConfig(format!(
                "delta_max must lie in (0, pi/2), got {}",
                self.delta_max
            )));
        }
        let n = self.horizon / self.dt;
        if !(n >= 1.0 - 1e-9) || (n - n.round()).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "horizon {} is not an integer multiple of dt {}",
                self.horizon, self.dt
            )));
        }
        Ok(())
    }

    /// Number of integration steps covered by one action.
    pub fn horizon_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// One explicit Euler step of the kinematic bicycle model.
pub fn bicycle_step(pose: Pose, ctrl: Control, cfg: &KinematicConfig) -> Pose {
    let (s, c) = pose.psi.sin_cos();
    Pose {
        x: pose.x + ctrl.v * c * cfg.dt,
        y: pose.y + ctrl.v * s * cfg.dt,
        psi: wrap_angle(pose.psi + ctrl.v / cfg.wheelbase * ctrl.delta.tan() * cfg.dt),
    }
}

/// `sin(n*theta/2) / sin(theta/2)`, the length factor of `n` equal chords
/// turning by `theta` each.
fn chord_gain(n: f64, theta: f64) -> f64 {
    if theta.abs() < 1e-9 {
        // second-order expansion
        n * (1.0 - (n * n - 1.0) * theta * theta / 24.0)
    } else {
        (n * theta / 2.0).sin() / (theta / 2.0).sin()
    }
}

/// Converts a displacement over the action horizon (lateral `dx` to the
/// right, longitudinal `dy` forward) into the constant control that carries
/// the Euler-integrated bicycle model from the origin to exactly that point
/// after `horizon / dt` steps.
pub fn action_to_control(dx: f64, dy: f64, cfg: &KinematicConfig) -> Result<Control> {
    if dx == 0.0 && dy == 0.0 {
        return Ok(Control::STOP);
    }
    if !(dy > 0.0) {
        return Err(Error::DegenerateAction { dx, dy });
    }
    let n = cfg.horizon_steps() as f64;
    // chord direction measured counterclockwise, so a rightward dx is negative
    let chord_angle = (-dx).atan2(dy);
    let chord = dx.hypot(dy);
    if n < 2.0 {
        if chord_angle != 0.0 {
            return Err(Error::DegenerateAction { dx, dy });
        }
        return Ok(Control {
            v: chord / cfg.dt,
            delta: 0.0,
        });
    }
    // the Euler chord points along the mean of the n visited headings
    let theta = 2.0 * chord_angle / (n - 1.0);
    let v = chord / (cfg.dt * chord_gain(n, theta));
    let delta = (theta * cfg.wheelbase / (v * cfg.dt)).atan();
    Ok(Control {
        v,
        delta: delta.clamp(-cfg.delta_max, cfg.delta_max),
    })
}

/// Inverse of [`action_to_control`]: the horizon displacement `(dx, dy)`
/// produced by holding `ctrl` constant.
pub fn control_to_action(ctrl: Control, cfg: &KinematicConfig) -> (f64, f64) {
    if ctrl.v == 0.0 {
        return (0.0, 0.0);
    }
    let n = cfg.horizon_steps() as f64;
    let theta = ctrl.v / cfg.wheelbase * ctrl.delta.tan() * cfg.dt;
    let chord = ctrl.v * cfg.dt * chord_gain(n, theta);
    let chord_angle = (n - 1.0) * theta / 2.0;
    (-chord * chord_angle.sin(), chord * chord_angle.cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGrid {
    pub lateral: Vec<f64>,
    pub longitudinal: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub dx_min: f64,
    pub dx_max: f64,
    pub dy_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_x: 61,
            n_y: 61,
            dx_min: -0.75,
            dx_max: 0.75,
            dy_max: 15.0,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<AnchorGrid> {
        build_anchor_grid(self.n_x, self.n_y, self.dx_min, self.dx_max, self.dy_max)
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo + step * k as f64
            }
        })
        .collect()
}

pub fn build_anchor_grid(
    n_x: usize,
    n_y: usize,
    dx_min: f64,
    dx_max: f64,
    dy_max: f64,
) -> Result<AnchorGrid> {
    if n_x < 3 || n_x % 2 == 0 {
        return Err(Error::InvalidGrid(format!("n_x must be odd and >= 3, got {n_x}")));
    }
    if n_y < 2 {
        return Err(Error::InvalidGrid(format!("n_y must be >= 2, got {n_y}")));
    }
    if !(dx_min < 0.0 && 0.0 < dx_max) {
        return Err(Error::InvalidGrid(format!(
            "lateral range must straddle zero, got [{dx_min}, {dx_max}]"
        )));
    }
    if (dx_min + dx_max).abs() > 1e-12 * dx_max.abs().max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "lateral range must be symmetric, got [{dx_min}, {dx_max}]"
        )));
    }
    if !(dy_max > 0.0) {
        return Err(Error::InvalidGrid(format!("dy_max must be positive, got {dy_max}")));
    }
    let mut lateral = linspace(dx_min, dx_max, n_x);
    // exact zero at the centre
    lateral[n_x / 2] = 0.0;
    Ok(AnchorGrid {
        lateral,
        longitudinal: linspace(0.0, dy_max, n_y),
    })
}

impl AnchorGrid {
    pub fn n_x(&self) -> usize {
        self.lateral.len()
    }

    pub fn n_y(&self) -> usize {
        self.longitudinal.len()
    }

    pub fn displacement(&self, i: usize, j: usize) -> (f64, f64) {
        (self.lateral[i], self.longitudinal[j])
    }

    pub fn dx_min(&self) -> f64 {
        self.lateral[0]
    }

    pub fn dx_max(&self) -> f64 {
        self.lateral[self.lateral.len() - 1]
    }

    pub fn dy_max(&self) -> f64 {
        self.longitudinal[self.longitudinal.len() - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Pose,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(center: Pose, length: f64, width: f64) -> Self {
        Self {
            center,
            length,
            width,
        }
    }

    fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.center.psi.sin_cos();
        [[c, s], [-s, c]]
    }

    /// Corners in counterclockwise order starting at front-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let hl = self.length / 2.0;
        let hw = self.width / 2.0;
        let p = &self.center;
        [
            p.to_world(hl, -hw),
            p.to_world(-hl, -hw),
            p.to_world(-hl, hw),
            p.to_world(hl, hw),
        ]
    }

    /// Half-extent of the box projected onto unit axis `a`.
    fn radius_along(&self, a: [f64; 2]) -> f64 {
        let [u, w] = self.axes();
        self.length / 2.0 * dot(u, a).abs() + self.width / 2.0 * dot(w, a).abs()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (lon, lat) = self.center.to_local(p);
        lon.abs() <= self.length / 2.0 && lat.abs() <= self.width / 2.0
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Separating-axis test over the four box axes. Touching boxes overlap.
pub fn obb_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let d = [b.center.x - a.center.x, b.center.y - a.center.y];
    a.axes()
        .into_iter()
        .chain(b.axes())
        .all(|axis| dot(d, axis).abs() <= a.radius_along(axis) + b.radius_along(axis))
}

/// Separating-axis test between a convex polygon and a box. Touching counts
/// as overlap.
pub fn polygon_box_overlap(poly: &[[f64; 2]], b: &OrientedBox) -> bool {
    let c = b.center.position();
    let separated_on = |axis: [f64; 2]| {
        let (lo, hi) = poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let s = dot(*p, axis);
            (lo.min(s), hi.max(s))
        });
        let mid = dot(c, axis);
        let r = b.radius_along(axis);
        hi < mid - r || lo > mid + r
    };
    if b.axes().into_iter().any(|axis| separated_on(axis)) {
        return false;
    }
    let n = poly.len();
    for k in 0..n {
        let p = poly[k];
        let q = poly[(k + 1) % n];
        let e = [q[0] - p[0], q[1] - p[1]];
        let len = e[0].hypot(e[1]);
        if len == 0.0 {
            continue;
        }
        if separated_on([-e[1] / len, e[0] / len]) {
            return false;
        }
    }
    true
}

/// Vertex-average centroid.
pub fn polygon_centroid(poly: &[[f64; 2]]) -> [f64; 2] {
    let n = poly.len() as f64;
    let (sx, sy) = poly.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
    [sx / n, sy / n]
}

/// Whether a polygon is convex with a consistent winding and at least three
/// distinct vertices.
pub fn is_convex(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for k in 0..n {
        let a = poly[k];
        let b = poly[(k + 1) % n];
        let c = poly[(k + 2) % n];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    sign != 0.0
}

/// Euclidean distance from a point to a convex polygon (0 inside).
pub fn point_polygon_distance(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut inside = true;
    let mut best = f64::INFINITY;
    let orient = {
        let mut area = 0.0;
        for k in 0..n {
            let a = poly[k];
            let b = poly[(k + 1) % n];
            area += a[0] * b[1] - b[0] * a[1];
        }
        area.signum()
    };
    for k in 0..n {
        let a = poly[k];
        let b = poly[(k + 1) % n];
        let (d, _) = point_segment(p, a, b);
        best = best.min(d);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross * orient < 0.0 {
            inside = false;
        }
    }
    if inside {
        0.0
    } else {
        best
    }
}

/// Distance from `p` to segment `ab` and the clamped segment parameter.
fn point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let e = [b[0] - a[0], b[1] - a[1]];
    let len2 = dot(e, e);
    let t = if len2 > 0.0 {
        (dot([p[0] - a[0], p[1] - a[1]], e) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let f = [a[0] + t * e[0], a[1] + t * e[1]];
    ((p[0] - f[0]).hypot(p[1] - f[1]), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    Clockwise,
    Counterclockwise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub distance: f64,
    /// Heading interpolated along the matched segment.
    pub heading: f64,
    /// Side of the polyline the point lies on; `None` when on the line.
    pub side: Option<Side>,
    /// Arc length from the first vertex to the foot point.
    pub arc_pos: f64,
    pub segment: usize,
    pub t: f64,
}

/// Closest-point projection of `p` onto a polyline of poses.
pub fn project_to_polyline(p: [f64; 2], polyline: &[Pose]) -> Result<Projection> {
    if polyline.len() < 2 {
        return Err(Error::EmptyPolyline(polyline.len()));
    }
    let mut best: Option<(f64, usize, f64)> = None;
    for (k, w) in polyline.windows(2).enumerate() {
        let (d, t) = point_segment(p, w[0].position(), w[1].position());
        if best.map_or(true, |(bd, _, _)| d < bd) {
            best = Some((d, k, t));
        }
    }
    let (distance, segment, t) = best.expect("at least one segment");
    let a = polyline[segment];
    let b = polyline[segment + 1];
    let heading = wrap_angle(a.psi + t * wrap_angle(b.psi - a.psi));
    let mut e = [b.x - a.x, b.y - a.y];
    let seg_len = e[0].hypot(e[1]);
    if seg_len == 0.0 {
        e = [heading.cos(), heading.sin()];
    }
    let foot = [a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)];
    let cross = e[0] * (p[1] - foot[1]) - e[1] * (p[0] - foot[0]);
    let side = if distance == 0.0 || cross == 0.0 {
        None
    } else if cross > 0.0 {
        Some(Side::Left)
    } else {
        Some(Side::Right)
    };
    let arc_pos = polyline[..=segment]
        .windows(2)
        .map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y))
        .sum::<f64>()
        + t * seg_len;
    Ok(Projection {
        distance,
        heading,
        side,
        arc_pos,
        segment,
        t,
    })
}

/// Magnitude and sense of `psi` relative to `psi_ref`. A negative wrapped
/// difference is a clockwise deviation.
pub fn heading_error(psi: f64, psi_ref: f64) -> (f64, Option<Rotation>) {
    let d = wrap_angle(psi - psi_ref);
    let dir = if d < 0.0 {
        Some(Rotation::Clockwise)
    } else if d > 0.0 {
        Some(Rotation::Counterclockwise)
    } else {
        None
    };
    (d.abs(), dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn cfg() -> KinematicConfig {
        KinematicConfig::default()
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn bicycle_step_hand_values() {
        let c = cfg();
        let p = bicycle_step(Pose::new(0.0, 0.0, 0.0), Control::STOP, &c);
        assert_eq!(p, Pose::new(0.0, 0.0, 0.0));
        let p = bicycle_step(Pose::new(0.0, 0.0, 0.0), Control { v: 10.0, delta: 0.0 }, &c);
        assert_eq!((p.x, p.y, p.psi), (1.0, 0.0, 0.0));
        let p = bicycle_step(Pose::new(0.0, 0.0, 0.0), Control { v: 10.0, delta: 0.1 }, &c);
        assert!((p.psi - 0.035834).abs() < 1e-6, "{}", p.psi);
        assert_eq!(p.psi, 10.0 / 2.8 * 0.1f64.tan() * 0.1);
    }

    #[test]
    fn zero_velocity_is_identity_for_any_steer() {
        let c = cfg();
        let p0 = Pose::new(3.0, -2.0, 1.2);
        for delta in [-0.6, -0.1, 0.0, 0.3, 0.6] {
            assert_eq!(bicycle_step(p0, Control { v: 0.0, delta }, &c), p0);
        }
    }

    #[test]
    fn euler_circle_deviation_is_first_order() {
        // rear axle should orbit a circle of radius L / tan(delta)
        let deviation = |dt: f64| {
            let c = KinematicConfig { dt, ..cfg() };
            let ctrl = Control { v: 5.0, delta: 0.3 };
            let r = c.wheelbase / ctrl.delta.tan();
            let centre = [0.0, r];
            let mut p = Pose::new(0.0, 0.0, 0.0);
            let steps = (2.0 / dt).round() as usize;
            let mut worst = 0.0f64;
            for _ in 0..steps {
                p = bicycle_step(p, ctrl, &c);
                let d = ((p.x - centre[0]).hypot(p.y - centre[1]) - r).abs();
                worst = worst.max(d);
            }
            worst
        };
        let coarse = deviation(0.02);
        let fine = deviation(0.01);
        let ratio = coarse / fine;
        assert!((ratio - 2.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn action_to_control_trivial_cases() {
        let c = cfg();
        let u = action_to_control(0.0, 10.0, &c).unwrap();
        assert!((u.v - 20.0).abs() < 1e-12);
        assert_eq!(u.delta, 0.0);
        assert_eq!(action_to_control(0.0, 0.0, &c).unwrap(), Control::STOP);
        assert!(matches!(
            action_to_control(0.3, 0.0, &c),
            Err(Error::DegenerateAction { .. })
        ));
    }

    fn roll(ctrl: Control, c: &KinematicConfig) -> Pose {
        let mut p = Pose::new(0.0, 0.0, 0.0);
        for _ in 0..c.horizon_steps() {
            p = bicycle_step(p, ctrl, c);
        }
        p
    }

    #[test]
    fn chord_round_trip_lands_on_target() {
        let c = cfg();
        let u = action_to_control(0.5, 10.0, &c).unwrap();
        // rightward chord turns clockwise
        assert!(u.delta < 0.0);
        let p = roll(u, &c);
        let target = Pose::new(0.0, 0.0, 0.0).to_world(10.0, 0.5);
        assert!((p.x - target[0]).hypot(p.y - target[1]) < 1e-3);
        assert!((p.x - target[0]).hypot(p.y - target[1]) < 1e-12);
    }

    #[test]
    fn control_to_action_inverts() {
        let c = cfg();
        for &(v, delta) in &[(8.0, 0.0), (8.0, 0.05), (3.0, -0.2), (12.0, 0.01)] {
            let (dx, dy) = control_to_action(Control { v, delta }, &c);
            let back = action_to_control(dx, dy, &c).unwrap();
            assert!((back.v - v).abs() < 1e-10, "{v} {delta} {back:?}");
            assert!((back.delta - delta).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_examples() {
        let g = build_anchor_grid(61, 61, -0.75, 0.75, 15.0).unwrap();
        assert!((g.lateral[1] - g.lateral[0] - 0.025).abs() < 1e-12);
        assert!((g.longitudinal[1] - g.longitudinal[0] - 0.25).abs() < 1e-12);
        assert_eq!(g.lateral[30], 0.0);
        assert_eq!(g.longitudinal[0], 0.0);
        assert_eq!(g.dy_max(), 15.0);
        for w in g.lateral.windows(2).chain(g.longitudinal.windows(2)) {
            assert!(w[1] > w[0]);
        }
        for k in 0..61 {
            assert!((g.lateral[k] + g.lateral[60 - k]).abs() < 1e-12);
        }
        let g = build_anchor_grid(3, 2, -1.0, 1.0, 1.0).unwrap();
        assert_eq!(g.lateral, vec![-1.0, 0.0, 1.0]);
        assert_eq!(g.longitudinal, vec![0.0, 1.0]);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(matches!(build_anchor_grid(60, 61, -0.75, 0.75, 15.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(build_anchor_grid(61, 1, -0.75, 0.75, 15.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(build_anchor_grid(61, 61, 0.1, 0.75, 15.0), Err(Error::InvalidGrid(_))));
        assert!(matches!(build_anchor_grid(61, 61, -0.75, 0.75, 0.0), Err(Error::InvalidGrid(_))));
    }

    fn unit(x: f64, y: f64, psi: f64) -> OrientedBox {
        OrientedBox::new(Pose::new(x, y, psi), 1.0, 1.0)
    }

    /// Brute-force oracle: sample points of `a` on a grid and test containment in `b`.
    fn sampled_overlap(a: &OrientedBox, b: &OrientedBox, res: f64) -> bool {
        let nl = (a.length / res).ceil() as usize;
        let nw = (a.width / res).ceil() as usize;
        for i in 0..=nl {
            for j in 0..=nw {
                let lon = -a.length / 2.0 + a.length * i as f64 / nl as f64;
                let lat = -a.width / 2.0 + a.width * j as f64 / nw as f64;
                if b.contains(a.center.to_world(lon, lat)) {
                    return true;
                }
            }
        }
        false
    }

    #[test]
    fn obb_examples() {
        let a = unit(0.0, 0.0, 0.0);
        assert!(obb_overlap(&a, &a));
        assert!(!obb_overlap(&a, &unit(3.0, 0.0, 0.0)));
        let b = unit(1.0, 0.0, FRAC_PI_4);
        assert!(sampled_overlap(&a, &b, 1e-3) || sampled_overlap(&b, &a, 1e-3));
        assert!(obb_overlap(&a, &b));
        // touching edges count as overlap
        assert!(obb_overlap(&a, &unit(1.0, 0.0, 0.0)));
        assert!(!obb_overlap(&a, &unit(1.0 + 1e-9, 0.0, 0.0)));
    }

    #[test]
    fn obb_matches_sampling_oracle() {
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut disagreements = 0;
        for _ in 0..300 {
            let a = OrientedBox::new(Pose::new(0.0, 0.0, next() * 6.0), 1.0 + next() * 3.0, 0.5 + next());
            let b = OrientedBox::new(
                Pose::new(next() * 6.0 - 3.0, next() * 6.0 - 3.0, next() * 6.0),
                1.0 + next() * 3.0,
                0.5 + next(),
            );
            let oracle = sampled_overlap(&a, &b, 0.02) || sampled_overlap(&b, &a, 0.02);
            if oracle != obb_overlap(&a, &b) {
                // sampling can only miss overlaps thinner than its resolution
                assert!(obb_overlap(&a, &b), "SAT says disjoint but sampler found overlap");
                disagreements += 1;
            }
        }
        assert!(disagreements <= 3, "{disagreements}");
    }

    #[test]
    fn polygon_box_examples() {
        let ego = OrientedBox::new(Pose::new(0.0, 0.0, 0.0), 4.6, 1.85);
        // curb wedge clipping the right front corner (ego frame right = -y)
        let curb = [[2.0, -0.8], [3.0, -0.8], [3.0, -2.0], [2.0, -2.0]];
        assert!(polygon_box_overlap(&curb, &ego));
        let far = [[10.0, 0.0], [11.0, 0.0], [11.0, 1.0]];
        assert!(!polygon_box_overlap(&far, &ego));
        // rotated triangle whose bounding box overlaps but which does not
        let tri = [[2.0, 1.6], [3.0, 0.6], [3.0, 1.6]];
        assert!(!polygon_box_overlap(&tri, &ego));
    }

    #[test]
    fn convexity() {
        assert!(is_convex(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]));
        assert!(!is_convex(&[[0.0, 0.0], [2.0, 0.0], [1.0, 0.5], [2.0, 2.0], [0.0, 2.0]]));
        assert!(!is_convex(&[[0.0, 0.0], [1.0, 0.0]]));
    }

    fn straight() -> Vec<Pose> {
        (0..5).map(|k| Pose::new(k as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn projection_examples() {
        let line = straight();
        let p = project_to_polyline([1.5, 0.0], &line).unwrap();
        assert_eq!(p.distance, 0.0);
        assert_eq!(p.side, None);
        assert!((p.arc_pos - 1.5).abs() < 1e-12);
        let p = project_to_polyline([2.3, 2.0], &line).unwrap();
        assert!((p.distance - 2.0).abs() < 1e-12);
        assert_eq!(p.heading, 0.0);
        assert_eq!(p.side, Some(Side::Left));
        let p = project_to_polyline([2.3, -0.5], &line).unwrap();
        assert_eq!(p.side, Some(Side::Right));
        assert!(matches!(
            project_to_polyline([0.0, 0.0], &line[..1]),
            Err(Error::EmptyPolyline(1))
        ));
    }

    #[test]
    fn projection_matches_dense_sampling() {
        let zig: Vec<Pose> = [[0.0, 0.0], [2.0, 1.5], [4.0, -0.5], [5.0, 2.0], [7.5, 1.0]]
            .windows(2)
            .map(|w| Pose::new(w[0][0], w[0][1], (w[1][1] - w[0][1]).atan2(w[1][0] - w[0][0])))
            .chain(std::iter::once(Pose::new(7.5, 1.0, -0.4)))
            .collect();
        for q in [[1.3, 1.9], [3.1, -1.7], [4.4, 1.2], [6.8, 3.0], [-1.0, 0.5]] {
            let mut best = f64::INFINITY;
            for w in zig.windows(2) {
                let len = (w[1].x - w[0].x).hypot(w[1].y - w[0].y);
                let n = (len / 1e-3).ceil() as usize;
                for k in 0..=n {
                    let t = k as f64 / n as f64;
                    let x = w[0].x + t * (w[1].x - w[0].x);
                    let y = w[0].y + t * (w[1].y - w[0].y);
                    best = best.min((q[0] - x).hypot(q[1] - y));
                }
            }
            let p = project_to_polyline(q, &zig).unwrap();
            assert!((p.distance - best).abs() < 2e-3, "{q:?}: {} vs {best}", p.distance);
        }
    }

    #[test]
    fn heading_error_examples() {
        assert_eq!(heading_error(0.0, 0.0), (0.0, None));
        let (m, d) = heading_error(0.1, -0.1);
        assert!((m - 0.2).abs() < 1e-15);
        assert_eq!(d, Some(Rotation::Counterclockwise));
        let (m, d) = heading_error(PI - 0.05, -PI + 0.05);
        assert!((m - 0.1).abs() < 1e-12);
        assert_eq!(d, Some(Rotation::Clockwise));
    }

    proptest! {
        #[test]
        fn obb_overlap_symmetric(
            ax in -5.0..5.0f64, ay in -5.0..5.0f64, ap in -4.0..4.0f64, al in 0.2..5.0f64, aw in 0.2..3.0f64,
            bx in -5.0..5.0f64, by in -5.0..5.0f64, bp in -4.0..4.0f64, bl in 0.2..5.0f64, bw in 0.2..3.0f64,
        ) {
            let a = OrientedBox::new(Pose::new(ax, ay, ap), al, aw);
            let b = OrientedBox::new(Pose::new(bx, by, bp), bl, bw);
            prop_assert_eq!(obb_overlap(&a, &b), obb_overlap(&b, &a));
        }

        #[test]
        fn projection_rigid_invariance(
            px in -10.0..10.0f64, py in -10.0..10.0f64,
            tx in -50.0..50.0f64, ty in -50.0..50.0f64, rot in -3.0..3.0f64,
        ) {
            let line: Vec<Pose> = (0..6)
                .map(|k| Pose::new(k as f64 * 2.0, (k as f64 * 0.7).sin() * 3.0, 0.0))
                .collect();
            let (s, c) = rot.sin_cos();
            let tf = |p: [f64; 2]| [c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty];
            let moved: Vec<Pose> = line
                .iter()
                .map(|p| { let q = tf(p.position()); Pose::new(q[0], q[1], p.psi + rot) })
                .collect();
            let d0 = project_to_polyline([px, py], &line).unwrap().distance;
            let d1 = project_to_polyline(tf([px, py]), &moved).unwrap().distance;
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn heading_error_swap(a in -10.0..10.0f64, b in -10.0..10.0f64) {
            let (m1, d1) = heading_error(a, b);
            let (m2, d2) = heading_error(b, a);
            prop_assert!((m1 - m2).abs() < 1e-12);
            prop_assert!((0.0..=PI).contains(&m1));
            if m1 > 1e-12 && m1 < PI - 1e-12 {
                prop_assert_ne!(d1, d2);
            }
        }
    }
}
