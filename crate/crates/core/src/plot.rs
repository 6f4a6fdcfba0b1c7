//! Minimal SVG line charts of recorded channels.

use std::fmt::Write as _;

use crate::engine::Trajectory;
use crate::scenario::{PlotChannel, Scenario};

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 10] =
    ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"];

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    let pad = if span > 1e-12 * hi.abs().max(1.0) { 0.05 * span } else { 0.5 * hi.abs().max(1e-6) };
    (lo - pad, hi + pad)
}

/// Renders the series into a standalone SVG document.
pub fn line_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (800.0, 420.0);
    let (left, right, top, bottom) = (80.0, 170.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        (x0, x1) = (0.0, 1.0);
    }
    let (y0, y1) = nice_range(y0, y1);
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ =
        writeln!(svg, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    for k in 0..=5 {
        let yv = y0 + (y1 - y0) * k as f64 / 5.0;
        let xv = x0 + (x1 - x0) * k as f64 / 5.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            w - right,
            left - 6.0,
            sy(yv) + 4.0,
            tick(yv),
            y = sy(yv)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            sx(xv),
            h - bottom + 18.0,
            tick(xv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - left - right,
        h - top - bottom
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">time (s)</text>"#,
        (left + w - right) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (top + h - bottom) / 2.0,
        escape(y_label)
    );
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in &s.points {
            if !y.is_finite() {
                pen_down = false;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(x), sy(y));
            pen_down = true;
        }
        let _ = writeln!(svg, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.4"/>"#, d.trim_end());
        let ly = top + 14.0 + 16.0 * k as f64;
        let lx = w - right + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 1e4).round() / 1e4)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Series of one channel, mirroring the usual figure set: machine frequency
/// in Hz, outputs in MW, bus voltages, marginal-cost estimates −μ and edge
/// variables.
pub fn channel_series(scenario: &Scenario, traj: &Trajectory, channel: PlotChannel) -> (String, Vec<Series>) {
    let sys = &scenario.system;
    let base = sys.net.base_mva();
    let hz = crate::scenario::SYSTEM_HZ;
    let gen_name = |g: usize| format!("G{}", scenario.label(sys.generators[g].bus));
    let times: Vec<f64> = traj.records.iter().map(|r| r.state.time).collect();
    let collect = |f: &dyn Fn(&crate::engine::Record) -> f64| -> Vec<(f64, f64)> {
        traj.records.iter().zip(&times).map(|(r, &t)| (t, f(r))).collect()
    };
    match channel {
        PlotChannel::Frequency => (
            "frequency (Hz)".into(),
            (0..sys.generators.len())
                .map(|g| Series {
                    name: gen_name(g),
                    points: collect(&|r| {
                        if traj.system_of(r).generators[g].online {
                            hz + r.state.machines[g].omega / (2.0 * std::f64::consts::PI)
                        } else {
                            f64::NAN
                        }
                    }),
                })
                .collect(),
        ),
        PlotChannel::Pg => (
            "mechanical power (MW)".into(),
            (0..sys.generators.len())
                .map(|g| Series { name: gen_name(g), points: collect(&|r| r.state.machines[g].pg * base) })
                .collect(),
        ),
        PlotChannel::Voltage => (
            "voltage (p.u.)".into(),
            sys.generators
                .iter()
                .map(|g| Series {
                    name: format!("bus {}", scenario.label(g.bus)),
                    points: collect(&|r| r.state.alg.v[g.bus]),
                })
                .collect(),
        ),
        PlotChannel::Mu => (
            "-mu ($/MW)".into(),
            sys.units
                .iter()
                .enumerate()
                .map(|(k, u)| Series {
                    name: gen_name(u.machine),
                    points: collect(&|r| -r.state.controllers[k].mu / base),
                })
                .collect(),
        ),
        PlotChannel::Z => (
            "z".into(),
            sys.net
                .comm_edges()
                .iter()
                .map(|edge| Series {
                    name: format!("{}-{}", scenario.label(edge.0), scenario.label(edge.1)),
                    points: collect(&|r| {
                        let now = traj.system_of(r).net.comm_edges();
                        now.iter().position(|e| e == edge).map_or(f64::NAN, |k| r.state.z[k])
                    }),
                })
                .collect(),
        ),
    }
}

pub fn render_channel(scenario: &Scenario, traj: &Trajectory, channel: PlotChannel) -> String {
    let (label, series) = channel_series(scenario, traj, channel);
    line_chart(&format!("{} - {}", scenario.file.name, channel.name()), &label, &series)
}
