//! Self-contained SVG summary of a report: a horizon histogram on the left,
//! the median MAE-vs-time curve with an interquartile band on the right.

use std::fmt::Write;

use super::{quantile, EvalReport};

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const PANEL_W: f64 = 380.0;
const PANEL_H: f64 = 260.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_TOP: f64 = 50.0;
const GAP: f64 = 90.0;

pub fn report_svg(report: &EvalReport) -> String {
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16">{} evaluation: {} test trajectories</text>"#,
        MARGIN_LEFT,
        report.model_kind.name(),
        report.per_trajectory.len()
    );
    histogram_panel(&mut svg, report, MARGIN_LEFT, MARGIN_TOP);
    mae_panel(&mut svg, report, MARGIN_LEFT + PANEL_W + GAP, MARGIN_TOP);
    svg.push_str("</svg>\n");
    svg
}

fn axis_text(svg: &mut String, x: f64, y: f64, text: &str, anchor: &str) {
    let _ = write!(
        svg,
        r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{text}</text>"#
    );
}

fn histogram_panel(svg: &mut String, report: &EvalReport, x0: f64, y0: f64) {
    let horizons: Vec<f64> = report.per_trajectory.iter().map(|e| e.horizon).collect();
    let max_h = horizons.iter().cloned().fold(0.0f64, f64::max).max(1e-9);
    let bins = 12usize;
    let mut counts = vec![0usize; bins];
    for h in &horizons {
        let mut idx = ((h / max_h) * bins as f64) as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        counts[idx] += 1;
    }
    let peak = counts.iter().cloned().max().unwrap_or(1).max(1) as f64;

    let _ = write!(
        svg,
        r#"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    axis_text(svg, x0 + PANEL_W / 2.0, y0 + PANEL_H + 34.0, "prediction horizon (time units)", "middle");
    axis_text(svg, x0 + PANEL_W / 2.0, y0 - 10.0, "horizon histogram", "middle");

    let bar_w = PANEL_W / bins as f64;
    for (i, count) in counts.iter().enumerate() {
        let h = PANEL_H * (*count as f64 / peak);
        let x = x0 + i as f64 * bar_w;
        let y = y0 + PANEL_H - h;
        let _ = write!(
            svg,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#4878a8" stroke="white" stroke-width="0.5"/>"##,
            x,
            y,
            bar_w,
            h
        );
    }
    for frac in [0.0, 0.5, 1.0] {
        axis_text(
            svg,
            x0 + PANEL_W * frac,
            y0 + PANEL_H + 16.0,
            &format!("{:.2}", max_h * frac),
            "middle",
        );
    }
    axis_text(svg, x0 - 8.0, y0 + 12.0, &format!("{}", peak as usize), "end");
    axis_text(svg, x0 - 8.0, y0 + PANEL_H, "0", "end");

    let tiers = report.aggregate.tier_counts;
    axis_text(
        svg,
        x0,
        y0 + PANEL_H + 52.0,
        &format!(
            "tiers: fail {} / tier1 {} / tier2 {} / tier3 {}",
            tiers[0], tiers[1], tiers[2], tiers[3]
        ),
        "start",
    );
}

fn mae_panel(svg: &mut String, report: &EvalReport, x0: f64, y0: f64) {
    let n_steps = report
        .per_trajectory
        .iter()
        .map(|e| e.mae_curve.len())
        .min()
        .unwrap_or(0);
    if n_steps == 0 {
        return;
    }
    let dt = report.forecast_dt;
    let mut median = Vec::with_capacity(n_steps);
    let mut q1 = Vec::with_capacity(n_steps);
    let mut q3 = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let mut column: Vec<f64> = report
            .per_trajectory
            .iter()
            .map(|e| e.mae_curve[k])
            .collect();
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        median.push(quantile(&column, 0.5));
        q1.push(quantile(&column, 0.25));
        q3.push(quantile(&column, 0.75));
    }
    let y_max = q3.iter().cloned().fold(0.0f64, f64::max).max(1e-12) * 1.1;
    let t_max = n_steps as f64 * dt;

    let to_x = |k: usize| x0 + PANEL_W * ((k + 1) as f64 * dt / t_max);
    let to_y = |v: f64| y0 + PANEL_H * (1.0 - (v / y_max).min(1.0));

    let _ = write!(
        svg,
        r#"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    axis_text(svg, x0 + PANEL_W / 2.0, y0 - 10.0, "position MAE vs forecast time", "middle");
    axis_text(svg, x0 + PANEL_W / 2.0, y0 + PANEL_H + 34.0, "time since forecast start", "middle");

    // Interquartile band as a closed polygon.
    let mut band = String::from("M");
    for (k, v) in q3.iter().enumerate() {
        let _ = write!(band, "{:.1},{:.1} ", to_x(k), to_y(*v));
    }
    for (k, v) in q1.iter().enumerate().rev() {
        let _ = write!(band, "{:.1},{:.1} ", to_x(k), to_y(*v));
    }
    band.push('Z');
    let _ = write!(
        svg,
        r##"<path d="{band}" fill="#a8c8e8" fill-opacity="0.6" stroke="none"/>"##
    );

    let mut line = String::from("M");
    for (k, v) in median.iter().enumerate() {
        let _ = write!(line, "{:.1},{:.1} ", to_x(k), to_y(*v));
    }
    let _ = write!(
        svg,
        r##"<path d="{line}" fill="none" stroke="#205080" stroke-width="1.8"/>"##
    );

    // Accuracy threshold marker.
    let theta = report.config.error_threshold;
    if theta < y_max {
        let y = to_y(theta);
        let _ = write!(
            svg,
            r##"<line x1="{x0}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#c04040" stroke-width="1" stroke-dasharray="5,4"/>"##,
            x0 + PANEL_W
        );
        axis_text(svg, x0 + PANEL_W + 6.0, y + 4.0, "threshold", "start");
    }

    for frac in [0.0f64, 0.5, 1.0] {
        axis_text(
            svg,
            x0 + PANEL_W * frac,
            y0 + PANEL_H + 16.0,
            &format!("{:.1}", t_max * frac),
            "middle",
        );
        axis_text(
            svg,
            x0 - 8.0,
            y0 + PANEL_H * (1.0 - frac) + 4.0,
            &format!("{:.2}", y_max * frac),
            "end",
        );
    }
}
