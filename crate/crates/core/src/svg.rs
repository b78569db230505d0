//! Static SVG plots: vehicle paths over the road, and flow arrows over a frame.

use std::fmt::Write as _;

use crate::flow::FlowField;
use crate::scene::WorldConfig;
use crate::trace::RunTrace;

const PLOT_WIDTH: f64 = 1000.0;
const PLOT_HEIGHT: f64 = 400.0;
const MARGIN: f64 = 40.0;
const PATH_COLORS: [&str; 4] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];

/// Maps world metres to plot pixels. The two axes are scaled independently
/// so that lateral deviations of a few decimetres stay visible on a course
/// hundreds of metres long.
struct Axes {
    x0: f64,
    y0: f64,
    sx: f64,
    sy: f64,
}

impl Axes {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
        for (x, y) in points.filter(|p| p.0.is_finite() && p.1.is_finite()) {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        if !lo.0.is_finite() {
            lo = (0.0, 0.0);
            hi = (1.0, 1.0);
        }
        let span = |a: f64, b: f64| (b - a).max(1.0);
        Axes {
            x0: lo.0,
            y0: hi.1,
            sx: (PLOT_WIDTH - 2.0 * MARGIN) / span(lo.0, hi.0),
            sy: (PLOT_HEIGHT - 2.0 * MARGIN) / span(lo.1, hi.1),
        }
    }

    fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (MARGIN + (x - self.x0) * self.sx, MARGIN + (self.y0 - y) * self.sy)
    }
}

fn polyline(out: &mut String, axes: &Axes, points: impl Iterator<Item = (f64, f64)>, style: &str) {
    out.push_str("<polyline fill=\"none\" ");
    out.push_str(style);
    out.push_str(" points=\"");
    for p in points {
        let (u, v) = axes.map(p);
        let _ = write!(out, "{u:.2},{v:.2} ");
    }
    out.push_str("\"/>\n");
}

/// Road edges, lane lines, obstacle footprints, goal, and one polyline per
/// labelled trace.
pub fn path_svg(world: &WorldConfig, traces: &[(&str, &RunTrace)]) -> String {
    let road = &world.road;
    let half = road.width() / 2.0;
    let samples = (road.length().ceil() as usize).max(2);
    let offset_line = |e: f64| {
        (0..=samples).map(move |i| {
            let s = road.length() * i as f64 / samples as f64;
            let ((x, y), h) = road.pose_at(s);
            (x - e * h.sin(), y + e * h.cos())
        })
    };
    let footprints: Vec<[(f64, f64); 4]> = world
        .obstacles
        .iter()
        .map(|o| {
            let (c, s) = (o.yaw.cos(), o.yaw.sin());
            let (hx, hy, _) = o.half_extents;
            [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)]
                .map(|(a, b)| (o.center.0 + c * a - s * b, o.center.1 + s * a + c * b))
        })
        .collect();
    let axes = Axes::fit(
        offset_line(half)
            .chain(offset_line(-half))
            .chain(
                traces
                    .iter()
                    .flat_map(|(_, t)| t.records.iter().map(|r| (r.state.x, r.state.y))),
            )
            .chain(footprints.iter().flatten().copied())
            .chain(std::iter::once(world.goal)),
    );

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_WIDTH}\" height=\"{PLOT_HEIGHT}\" viewBox=\"0 0 {PLOT_WIDTH} {PLOT_HEIGHT}\">"
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    polyline(
        &mut out,
        &axes,
        offset_line(half),
        "stroke=\"black\" stroke-width=\"1.5\"",
    );
    polyline(
        &mut out,
        &axes,
        offset_line(-half),
        "stroke=\"black\" stroke-width=\"1.5\"",
    );
    for k in 1..road.lane_count {
        let e = -half + k as f64 * road.width() / road.lane_count as f64;
        polyline(
            &mut out,
            &axes,
            offset_line(e),
            "stroke=\"#999\" stroke-dasharray=\"6 4\"",
        );
    }
    polyline(
        &mut out,
        &axes,
        offset_line(0.0),
        "stroke=\"#bbb\" stroke-width=\"0.8\"",
    );
    for fp in &footprints {
        out.push_str("<polygon fill=\"#444\" points=\"");
        for p in fp {
            let (u, v) = axes.map(*p);
            let _ = write!(out, "{u:.2},{v:.2} ");
        }
        out.push_str("\"/>\n");
    }
    let (gx, gy) = axes.map(world.goal);
    let _ = writeln!(
        out,
        "<circle cx=\"{gx:.2}\" cy=\"{gy:.2}\" r=\"5\" fill=\"none\" stroke=\"green\" stroke-width=\"2\"/>"
    );
    for (i, (label, trace)) in traces.iter().enumerate() {
        let color = PATH_COLORS[i % PATH_COLORS.len()];
        polyline(
            &mut out,
            &axes,
            trace.records.iter().map(|r| (r.state.x, r.state.y)),
            &format!("stroke=\"{color}\" stroke-width=\"1.5\""),
        );
        let _ = writeln!(
            out,
            "<text x=\"{MARGIN}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" fill=\"{color}\">{}</text>",
            14.0 + 14.0 * i as f64,
            escape(label)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#555\" text-anchor=\"end\">axes scaled independently: {:.1} px/m along x, {:.1} px/m along y</text>",
        PLOT_WIDTH - MARGIN,
        PLOT_HEIGHT - 10.0,
        axes.sx,
        axes.sy
    );
    out.push_str("</svg>\n");
    out
}

/// Flow arrows over a `width x height` frame: valid vectors in green,
/// rejected ones in grey, and the FOE as a red cross when known. Arrows are
/// drawn at their true pixel length.
pub fn flow_svg(width: usize, height: usize, flow: &FlowField, foe: Option<(f64, f64)>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"-0.5 -0.5 {width} {height}\">"
    );
    out.push_str("<defs><marker id=\"head\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\"><path d=\"M0,0 L6,3 L0,6 z\" fill=\"context-stroke\"/></marker></defs>\n");
    out.push_str("<rect x=\"-0.5\" y=\"-0.5\" width=\"100%\" height=\"100%\" fill=\"#222\"/>\n");
    for v in &flow.vectors {
        let color = if v.valid { "#2ca02c" } else { "#888" };
        let (x, y) = (v.origin.x, v.origin.y);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"{color}\" stroke-width=\"1\" marker-end=\"url(#head)\"/>",
            x + v.vx,
            y + v.vy
        );
    }
    if let Some((fx, fy)) = foe.filter(|f| f.0.is_finite() && f.1.is_finite()) {
        let _ = writeln!(
            out,
            "<path d=\"M{:.2},{fy:.2} H{:.2} M{fx:.2},{:.2} V{:.2}\" stroke=\"red\" stroke-width=\"2\"/>",
            fx - 6.0,
            fx + 6.0,
            fy - 6.0,
            fy + 6.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
