//! Equal-aspect orbit plot of one trajectory (x-y projection, one path per
//! body, start markers).

use std::fmt::Write;

use tribody_core::Trajectory;

const SIZE: f64 = 520.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 3] = ["#b04040", "#40a060", "#4060b0"];

pub fn trajectory_svg(traj: &Trajectory, title: &str) -> String {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for state in &traj.states {
        for q in &state.positions {
            min_x = min_x.min(q.x);
            max_x = max_x.max(q.x);
            min_y = min_y.min(q.y);
            max_y = max_y.max(q.y);
        }
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1e-9);
    let cx = 0.5 * (min_x + max_x);
    let cy = 0.5 * (min_y + max_y);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let to_x = |x: f64| SIZE / 2.0 + (x - cx) * scale;
    let to_y = |y: f64| SIZE / 2.0 - (y - cy) * scale;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="15">{title} ({:.2} time units, {} samples)</text>"#,
        traj.span(),
        traj.len()
    );
    for body in 0..3 {
        let mut path = String::from("M");
        for state in &traj.states {
            let q = state.positions[body];
            let _ = write!(path, "{:.2},{:.2} ", to_x(q.x), to_y(q.y));
        }
        let _ = write!(
            svg,
            r##"<path d="{path}" fill="none" stroke="{}" stroke-width="1.2" stroke-opacity="0.85"/>"##,
            COLORS[body]
        );
        let start = traj.states[0].positions[body];
        let _ = write!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="5" fill="{}"/>"##,
            to_x(start.x),
            to_y(start.y),
            COLORS[body]
        );
    }
    svg.push_str("</svg>\n");
    svg
}
