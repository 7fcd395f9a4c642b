//! Static SVG trace plot of one episode: expert path, ego path, footprints
//! on event frames and event markers.

use std::fmt::Write as _;

use crate::env::Termination;
use crate::metrics::EpisodeLog;

const SIZE: f64 = 800.0;
const MARGIN: f64 = 20.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct View {
    x0: f64,
    y1: f64,
    scale: f64,
}

impl View {
    fn fit(points: &[[f64; 2]]) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in points {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        if points.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let span = (x1 - x0).max(y1 - y0).max(1.0);
        Self {
            x0,
            y1,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    // world y up, svg y down
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (MARGIN + (p[0] - self.x0) * self.scale, MARGIN + (self.y1 - p[1]) * self.scale)
    }

    fn points(&self, pts: impl IntoIterator<Item = [f64; 2]>) -> String {
        pts.into_iter()
            .map(|p| {
                let (x, y) = self.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn render_episode(log: &EpisodeLog) -> String {
    let expert: Vec<[f64; 2]> = log.frames.iter().map(|f| [f.expert_pose.x, f.expert_pose.y]).collect();
    let ego: Vec<[f64; 2]> = log.frames.iter().map(|f| [f.pose.x, f.pose.y]).collect();
    let mut all = expert.clone();
    all.extend(&ego);
    for f in &log.frames {
        for poly in &f.footprints {
            all.extend(poly);
        }
    }
    let view = View::fit(&all);

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(
        s,
        "<title>{} ({})</title>",
        escape(&log.clip),
        log.termination.as_str()
    )
    .unwrap();
    writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    writeln!(
        s,
        r##"<polyline class="expert" fill="none" stroke="#2a7" stroke-width="2" stroke-dasharray="6 4" points="{}"/>"##,
        view.points(expert.iter().copied())
    )
    .unwrap();
    writeln!(
        s,
        r##"<polyline class="ego" fill="none" stroke="#26c" stroke-width="2" points="{}"/>"##,
        view.points(ego.iter().copied())
    )
    .unwrap();
    for f in log.frames.iter().filter(|f| f.is_event()) {
        for poly in &f.footprints {
            writeln!(
                s,
                r##"<polygon class="footprint" fill="#f2c" fill-opacity="0.25" stroke="#a18" points="{}"/>"##,
                view.points(poly.iter().copied())
            )
            .unwrap();
        }
        let (x, y) = view.map([f.pose.x, f.pose.y]);
        let label = if f.termination == Termination::None {
            "event".to_string()
        } else {
            f.termination.as_str().to_string()
        };
        writeln!(
            s,
            r##"<circle class="event" cx="{x:.2}" cy="{y:.2}" r="6" fill="#d22"><title>frame {} {}</title></circle>"##,
            f.frame,
            escape(&label)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}
