//! Minimal stacked line plots written directly as SVG.

use std::fmt::Write as _;

use rrbot_core::plant::SimTrace;

const WIDTH: f64 = 900.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 40.0;
const GAP: f64 = 45.0;
const MAX_POINTS: usize = 2000;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dash {
    Solid,
    Dashed,
    Dotted,
}

struct Series {
    label: String,
    color: &'static str,
    dash: Dash,
    values: Vec<f64>,
}

struct Panel {
    title: &'static str,
    unit: &'static str,
    series: Vec<Series>,
}

fn column(trace: &SimTrace, f: impl Fn(usize) -> f64) -> Vec<f64> {
    (0..trace.len()).map(f).collect()
}

fn panels(trace: &SimTrace, limits: [f64; 2]) -> Vec<Panel> {
    let mut angles = Panel { title: "Joint angles", unit: "rad", series: Vec::new() };
    let mut rates = Panel { title: "Joint rates", unit: "rad/s", series: Vec::new() };
    for (j, &c) in COLORS.iter().enumerate().take(2) {
        angles.series.push(Series {
            label: format!("th{}", j + 1),
            color: c,
            dash: Dash::Solid,
            values: column(trace, |i| trace.states[i].q()[j]),
        });
        rates.series.push(Series {
            label: format!("th{}d", j + 1),
            color: c,
            dash: Dash::Solid,
            values: column(trace, |i| trace.states[i].qd()[j]),
        });
        if let Some(r) = &trace.references {
            angles.series.push(Series {
                label: format!("ref th{}", j + 1),
                color: c,
                dash: Dash::Dashed,
                values: r.iter().map(|x| x.q()[j]).collect(),
            });
            rates.series.push(Series {
                label: format!("ref th{}d", j + 1),
                color: c,
                dash: Dash::Dashed,
                values: r.iter().map(|x| x.qd()[j]).collect(),
            });
        }
        if let Some(e) = &trace.estimates {
            angles.series.push(Series {
                label: format!("est th{}", j + 1),
                color: c,
                dash: Dash::Dotted,
                values: e.iter().map(|x| x.q()[j]).collect(),
            });
            rates.series.push(Series {
                label: format!("est th{}d", j + 1),
                color: c,
                dash: Dash::Dotted,
                values: e.iter().map(|x| x.qd()[j]).collect(),
            });
        }
    }
    let mut torques = Panel { title: "Applied torques", unit: "N m", series: Vec::new() };
    for (j, &color) in COLORS.iter().enumerate().take(2) {
        torques.series.push(Series {
            label: format!("tau{}", j + 1),
            color,
            dash: Dash::Solid,
            values: column(trace, |i| trace.torques[i].to_vector()[j]),
        });
    }
    for (j, sign) in [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)] {
        torques.series.push(Series {
            label: if sign > 0.0 { format!("limit {}", j + 1) } else { String::new() },
            color: COLORS[j],
            dash: Dash::Dotted,
            values: vec![sign * limits[j]; trace.len()],
        });
    }
    let mut out = vec![angles, rates, torques];
    if let Some(a) = &trace.adaptive_params {
        let series = (0..5)
            .map(|k| Series {
                label: format!("alpha{}", k + 1),
                color: COLORS[k],
                dash: Dash::Solid,
                values: a.iter().map(|p| p.0[k]).collect(),
            })
            .collect();
        out.push(Panel { title: "Parameter estimates", unit: "", series });
    }
    out
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    while t <= hi + 1e-9 * span {
        ticks.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Render `trace` as stacked panels: angles, rates, torques (with limits)
/// and, for adaptive runs, the parameter estimates. References are dashed,
/// observer estimates dotted.
pub fn render(trace: &SimTrace, title: &str, limits: [f64; 2]) -> String {
    let panels = panels(trace, limits);
    let height = MARGIN_T + panels.len() as f64 * (PANEL_H + GAP);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));
    let (t0, t1) = match (trace.times.first(), trace.times.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        _ => (0.0, 1.0),
    };
    let stride = trace.len().div_ceil(MAX_POINTS).max(1);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    for (p, panel) in panels.iter().enumerate() {
        let top = MARGIN_T + p as f64 * (PANEL_H + GAP);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in panel.series.iter().flat_map(|s| &s.values).filter(|v| v.is_finite()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        if !lo.is_finite() {
            (lo, hi) = (-1.0, 1.0);
        }
        let pad = ((hi - lo) * 0.05).max(1e-6);
        let (lo, hi) = (lo - pad, hi + pad);
        let x_of = |t: f64| MARGIN_L + (t - t0) / (t1 - t0) * plot_w;
        let y_of = |v: f64| top + (hi - v) / (hi - lo) * PANEL_H;

        let _ = writeln!(s, r#"<g><text x="{MARGIN_L}" y="{}" font-size="13">{}</text>"#, top - 6.0, panel.title);
        let _ = writeln!(
            s,
            r##"<rect x="{MARGIN_L}" y="{top}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
        );
        for v in nice_ticks(lo, hi) {
            let y = y_of(v);
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_L}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                MARGIN_L + plot_w,
                MARGIN_L - 5.0,
                y + 4.0,
                fmt_tick(v)
            );
        }
        for t in nice_ticks(t0, t1) {
            let x = x_of(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" x2="{x:.2}" y1="{top}" y2="{}" stroke="#eee"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"##,
                top + PANEL_H,
                top + PANEL_H + 14.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" transform="rotate(-90 {} {})">{}</text>"#,
            MARGIN_L - 50.0,
            top + PANEL_H / 2.0,
            MARGIN_L - 50.0,
            top + PANEL_H / 2.0,
            panel.unit
        );
        let mut legend_row = 0;
        for series in &panel.series {
            let dash = match series.dash {
                Dash::Solid => "",
                Dash::Dashed => r#" stroke-dasharray="6 4""#,
                Dash::Dotted => r#" stroke-dasharray="2 3""#,
            };
            let mut pts = String::new();
            let idx = (0..series.values.len()).step_by(stride).chain(series.values.len().checked_sub(1));
            for i in idx {
                let v = series.values[i];
                if v.is_finite() {
                    let _ = write!(pts, "{:.2},{:.2} ", x_of(trace.times[i]), y_of(v));
                }
            }
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.3"{dash} points="{}"/>"#,
                series.color,
                pts.trim_end()
            );
            if !series.label.is_empty() {
                let y = top + 12.0 + 15.0 * legend_row as f64;
                let x = MARGIN_L + plot_w + 10.0;
                let _ = writeln!(
                    s,
                    r#"<line x1="{x}" x2="{}" y1="{}" y2="{}" stroke="{}" stroke-width="1.5"{dash}/><text x="{}" y="{y}">{}</text>"#,
                    x + 22.0,
                    y - 4.0,
                    y - 4.0,
                    series.color,
                    x + 27.0,
                    escape(&series.label)
                );
                legend_row += 1;
            }
        }
        let _ = writeln!(s, "</g>");
    }
    let bottom = height - 8.0;
    let _ = writeln!(s, r#"<text x="{}" y="{bottom}" text-anchor="middle">time (s)</text>"#, MARGIN_L + plot_w / 2.0);
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
