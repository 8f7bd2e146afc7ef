use std::fmt::Write as _;

use crate::env::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::sim::Obstacle;

const VIEW: f64 = 600.0;
const OBSTACLE_FILL: &str = "#9e9e9e";
const PATH_STROKE: &str = "#1f4fd1";
const GOAL_FILL: &str = "#2e9d3a";

/// Parses a line-delimited trajectory log.
pub fn read_trajectory(text: &str) -> Result<Vec<TrajectoryRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Usage(format!("trajectory line {}: {e}", i + 1)))
        })
        .collect()
}

/// Draws a trajectory log: obstacles gray, the payload path as a blue
/// polyline (one vertex per tick record), the goal as a green disc.
///
/// The viewport is fixed at 600×600 and maps the whole arena. A log holding
/// several episodes gives one polyline each over the first episode's layout.
pub fn render_trajectory_svg(records: &[TrajectoryRecord]) -> Result<String> {
    let Some(TrajectoryRecord::Scenario {
        arena_half_extent,
        goal,
        goal_threshold,
        obstacles,
        ..
    }) = records.first()
    else {
        return Err(Error::Usage("trajectory log must start with a scenario record".into()));
    };
    let h = *arena_half_extent;
    let scale = VIEW / (2.0 * h);
    let px = |p: Vec2| ((p.x + h) * scale, (h - p.y) * scale);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{VIEW}" height="{VIEW}" viewBox="0 0 {VIEW} {VIEW}">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{VIEW}" height="{VIEW}" fill="white" stroke="black"/>"#);
    for o in obstacles {
        match *o {
            Obstacle::Cylinder { center, radius } => {
                let (x, y) = px(center);
                let _ = writeln!(
                    svg,
                    r#"<circle class="obstacle" cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="{OBSTACLE_FILL}"/>"#,
                    radius * scale
                );
            }
            Obstacle::WallSegment { start, end, thickness } => {
                let (x1, y1) = px(start);
                let (x2, y2) = px(end);
                let _ = writeln!(
                    svg,
                    r#"<line class="obstacle" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{OBSTACLE_FILL}" stroke-width="{:.2}" stroke-linecap="round"/>"#,
                    thickness * scale
                );
            }
        }
    }
    let (gx, gy) = px(*goal);
    let _ = writeln!(
        svg,
        r#"<circle class="goal" cx="{gx:.2}" cy="{gy:.2}" r="{:.2}" fill="{GOAL_FILL}"/>"#,
        goal_threshold.max(0.1) * scale
    );

    let mut paths: Vec<Vec<Vec2>> = Vec::new();
    for r in records {
        match r {
            TrajectoryRecord::Scenario { .. } => paths.push(Vec::new()),
            TrajectoryRecord::Tick { payload, .. } => {
                if let Some(p) = paths.last_mut() {
                    p.push(payload.position);
                }
            }
        }
    }
    for path in paths.iter().filter(|p| !p.is_empty()) {
        let points: Vec<String> = path
            .iter()
            .map(|&p| {
                let (x, y) = px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="payload-path" points="{}" fill="none" stroke="{PATH_STROKE}" stroke-width="2"/>"#,
            points.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
