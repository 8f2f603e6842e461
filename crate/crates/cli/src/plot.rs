//! Two-panel SVG figure: predictive confidence on the left, class
//! separability on the right.

use std::fmt::Write;

use sievelab::analysis::AxisSummary;
use sievelab::stats::quantile;

const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 320.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x0: f64,
    y0: f64,
    lo: f64,
    hi: f64,
    slots: usize,
}

impl Frame {
    fn y(&self, v: f64) -> f64 {
        self.y0 + PANEL_H - (v - self.lo) / (self.hi - self.lo) * PANEL_H
    }

    fn slot_w(&self) -> f64 {
        PANEL_W / self.slots as f64
    }

    fn x(&self, slot: usize, offset: f64) -> f64 {
        self.x0 + (slot as f64 + 0.5 + offset) * self.slot_w()
    }

    fn axes(&self, svg: &mut String, title: &str, ylabel: &str) {
        let (x0, y0) = (self.x0, self.y0);
        let _ = write!(
            svg,
            r##"<rect x="{x0}" y="{y0}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"##,
            x0 + PANEL_W / 2.0,
            y0 - 28.0,
            esc(title)
        );
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="middle" font-size="11" transform="rotate(-90 {} {})">{}</text>"##,
            x0 - 38.0,
            y0 + PANEL_H / 2.0,
            x0 - 38.0,
            y0 + PANEL_H / 2.0,
            esc(ylabel)
        );
        for k in 0..=4 {
            let v = self.lo + (self.hi - self.lo) * k as f64 / 4.0;
            let y = self.y(v);
            let _ = write!(
                svg,
                r##"<line x1="{x0}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end" font-size="10">{v:.2}</text>"##,
                x0 + PANEL_W,
                x0 - 4.0,
                y + 3.0
            );
        }
        for s in 0..self.slots {
            let _ = write!(
                svg,
                r##"<text x="{}" y="{}" text-anchor="middle" font-size="10">{s}</text>"##,
                self.x(s, 0.0),
                y0 + PANEL_H + 14.0
            );
        }
        let _ = write!(
            svg,
            r##"<text x="{}" y="{}" text-anchor="middle" font-size="11">severity</text>"##,
            x0 + PANEL_W / 2.0,
            y0 + PANEL_H + 30.0
        );
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_p(p: f64) -> String {
    if p < 1e-3 {
        "p<.001".into()
    } else {
        format!("p={p:.3}")
    }
}

pub fn figure(axes: &[AxisSummary], title: &str) -> String {
    let slots = axes.iter().map(|a| a.confidence.len()).max().unwrap_or(1).max(1);
    let width = 2.0 * PANEL_W + 3.0 * MARGIN + 20.0;
    let height = PANEL_H + 2.0 * MARGIN + 40.0 + 16.0 * axes.len() as f64;
    let mut svg = String::new();
    let _ = write!(
        svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif"><rect width="100%" height="100%" fill="white"/>"##
    );
    let _ = write!(svg, r##"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"##, width / 2.0, esc(title));

    let n = axes.len().max(1) as f64;
    let offset = |i: usize| (i as f64 + 0.5) / n - 0.5;

    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for c in axes.iter().flat_map(|a| &a.confidence) {
        lo = lo.min(c.mean - 2.0 * c.std);
        hi = hi.max(c.mean + 2.0 * c.std);
    }
    let pad = ((hi - lo) * 0.1).max(0.1);
    let left = Frame {
        x0: MARGIN,
        y0: MARGIN + 20.0,
        lo: lo - pad,
        hi: hi + pad,
        slots,
    };
    left.axes(&mut svg, "predictive confidence: E[γ] ± 2 sd, P(γ>0)", "γ");
    let zero = left.y(0.0);
    let _ = write!(
        svg,
        r##"<line x1="{}" y1="{zero}" x2="{}" y2="{zero}" stroke="#888" stroke-dasharray="4 3"/>"##,
        left.x0,
        left.x0 + PANEL_W
    );
    for (i, axis) in axes.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let dx = offset(i) * 0.6;
        let points: Vec<String> = axis
            .confidence
            .iter()
            .map(|c| format!("{:.1},{:.1}", left.x(c.severity, dx), left.y(c.mean)))
            .collect();
        let _ = write!(svg, r##"<polyline points="{}" fill="none" stroke="{color}"/>"##, points.join(" "));
        for c in &axis.confidence {
            let x = left.x(c.severity, dx);
            let _ = write!(
                svg,
                r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/><circle cx="{x:.1}" cy="{:.1}" r="3" fill="{color}"/>"##,
                left.y(c.mean - 2.0 * c.std),
                left.y(c.mean + 2.0 * c.std),
                left.y(c.mean)
            );
            if !c.reference {
                let _ = write!(
                    svg,
                    r##"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="8" fill="{color}">{:.2}</text>"##,
                    left.y(c.mean + 2.0 * c.std) - 3.0,
                    c.prob_positive
                );
            }
        }
    }

    let right = Frame {
        x0: 2.0 * MARGIN + PANEL_W + 20.0,
        y0: MARGIN + 20.0,
        lo: 0.0,
        hi: 1.0,
        slots,
    };
    right.axes(&mut svg, "class separability: KS over posterior-predictive draws", "KS");
    let box_w = right.slot_w() * 0.7 / n;
    for (i, axis) in axes.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for s in &axis.separability.severities {
            let x = right.x(s.severity, offset(i) * 0.7);
            let q = |p| right.y(quantile(&s.ks, p));
            let (q05, q25, q50, q75, q95) = (q(0.05), q(0.25), right.y(s.median), q(0.75), q(0.95));
            let _ = write!(
                svg,
                r##"<line x1="{x:.1}" y1="{q05:.1}" x2="{x:.1}" y2="{q95:.1}" stroke="{color}"/><rect x="{:.1}" y="{q75:.1}" width="{box_w:.1}" height="{:.1}" fill="white" stroke="{color}"/><line x1="{:.1}" y1="{q50:.1}" x2="{:.1}" y2="{q50:.1}" stroke="{color}" stroke-width="2"/>"##,
                x - box_w / 2.0,
                (q25 - q75).max(0.5),
                x - box_w / 2.0,
                x + box_w / 2.0
            );
            if let Some(p) = s.p_value {
                let _ = write!(
                    svg,
                    r##"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="7" fill="{color}">{}</text>"##,
                    q95 - 3.0,
                    fmt_p(p)
                );
            }
        }
    }

    let legend_y = MARGIN + PANEL_H + 75.0;
    for (i, axis) in axes.iter().enumerate() {
        let y = legend_y + 16.0 * i as f64;
        let _ = write!(
            svg,
            r##"<rect x="{MARGIN}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{}" y="{:.1}" font-size="11">{}</text>"##,
            y - 9.0,
            COLORS[i % COLORS.len()],
            MARGIN + 16.0,
            y,
            esc(&axis.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
