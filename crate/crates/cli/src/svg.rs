//! Static figures: the path in the plane with vehicle glyphs, and the value
//! function on a log scale.

use std::fmt::Write;

use nhmpc_core::mpc::ClosedLoopTrace;
use nhmpc_core::VehicleModel;

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 360.0;
const MARGIN: f64 = 50.0;
const GLYPHS: usize = 6;

pub struct Series<'a> {
    pub label: &'a str,
    pub model: &'a VehicleModel,
    pub trace: &'a ClosedLoopTrace,
}

struct Panel {
    x0: f64,
    lo: (f64, f64),
    hi: (f64, f64),
}

impl Panel {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        let w = PANEL_W - 2.0 * MARGIN;
        let h = PANEL_H - 2.0 * MARGIN;
        let u = self.x0 + MARGIN + (x - self.lo.0) / (self.hi.0 - self.lo.0) * w;
        let v = PANEL_H - MARGIN - (y - self.lo.1) / (self.hi.1 - self.lo.1) * h;
        (u, v)
    }

    fn frame(&self, out: &mut String, xlabel: &str, ylabel: &str) {
        let (l, b) = (self.x0 + MARGIN, PANEL_H - MARGIN);
        let (r, t) = (self.x0 + PANEL_W - MARGIN, MARGIN);
        let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.lo.0 + f * (self.hi.0 - self.lo.0);
            let yv = self.lo.1 + f * (self.hi.1 - self.lo.1);
            let (u, _) = self.px(xv, self.lo.1);
            let (_, v) = self.px(self.lo.0, yv);
            let _ = writeln!(out, r#"<text x="{u:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#, b + 14.0, tick(xv));
            let _ = writeln!(out, r#"<text x="{:.1}" y="{v:.1}" font-size="10" text-anchor="end">{}</text>"#, l - 4.0, tick(yv));
        }
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{xlabel}</text>"#, (l + r) / 2.0, b + 32.0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {:.1} {:.1})">{ylabel}</text>"#, l - 36.0, (t + b) / 2.0, l - 36.0, (t + b) / 2.0);
    }

    fn polyline(&self, out: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str) {
        let p: Vec<String> = pts
            .map(|(x, y)| {
                let (u, v) = self.px(x, y);
                format!("{u:.2},{v:.2}")
            })
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, p.join(" "));
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-2 && v.abs() < 1e3 {
        format!("{v:.2}")
    } else {
        format!("{v:.0e}")
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Body and trailer outlines at pose `x` in data coordinates.
fn glyph(model: &VehicleModel, x: &[f64]) -> Vec<Vec<(f64, f64)>> {
    let size = 0.08;
    let box_at = |cx: f64, cy: f64, th: f64, len: f64| {
        let (s, c) = th.sin_cos();
        let w = size * 0.5;
        [(0.0, -w), (len, -w), (len, w), (0.0, w), (0.0, -w)]
            .iter()
            .map(|(a, b)| (cx + c * (a - len / 2.0) - s * b, cy + s * (a - len / 2.0) + c * b))
            .collect::<Vec<_>>()
    };
    let (px, py, th) = (x[0], x[1], x[2]);
    let mut shapes = vec![box_at(px, py, th, size * 1.6)];
    let (s, c) = th.sin_cos();
    shapes.push(vec![(px, py), (px + c * size * 1.2, py + s * size * 1.2)]);
    let p = model.params();
    let mut hitch = (px, py);
    for (i, key) in ["l1", "l2"].iter().enumerate() {
        let (Some(l), Some(a)) = (p.get(*key), x.get(3 + i)) else { break };
        let tail = (hitch.0 - l * a.cos(), hitch.1 - l * a.sin());
        shapes.push(vec![hitch, tail]);
        shapes.push(box_at(tail.0, tail.1, *a, size));
        hitch = tail;
    }
    shapes
}

/// Plane trajectory (left) and `log10 V` over time (right), one color per
/// series.
pub fn figure(series: &[Series<'_>]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        2.0 * PANEL_W,
        PANEL_H,
        2.0 * PANEL_W,
        PANEL_H
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let xs = bounds(series.iter().flat_map(|s| s.trace.states.column(0).iter().copied().collect::<Vec<_>>()));
    let ys = bounds(series.iter().flat_map(|s| s.trace.states.column(1).iter().copied().collect::<Vec<_>>()));
    // equal axis scale, padded for glyphs
    let span = (xs.1 - xs.0).max(ys.1 - ys.0) * 0.5 + 0.25;
    let (cx, cy) = ((xs.0 + xs.1) / 2.0, (ys.0 + ys.1) / 2.0);
    let plane = Panel { x0: 0.0, lo: (cx - span, cy - span), hi: (cx + span, cy + span) };
    plane.frame(&mut out, "x [m]", "y [m]");

    let logv = |v: f64| if v > 0.0 { v.log10() } else { f64::NAN };
    let ts = bounds(series.iter().flat_map(|s| s.trace.times.clone()));
    let vs = bounds(series.iter().flat_map(|s| s.trace.values.iter().map(|v| logv(*v)).collect::<Vec<_>>()));
    let value = Panel { x0: PANEL_W, lo: (ts.0, vs.0), hi: (ts.1, vs.1) };
    value.frame(&mut out, "t [s]", "log10 V");

    for (k, s) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let tr = s.trace;
        plane.polyline(&mut out, (0..tr.len()).map(|i| (tr.states[(i, 0)], tr.states[(i, 1)])), color);
        let stride = (tr.len().saturating_sub(1) / (GLYPHS - 1)).max(1);
        for i in (0..tr.len()).step_by(stride) {
            let x: Vec<f64> = tr.states.row(i).iter().copied().collect();
            for shape in glyph(s.model, &x) {
                plane.polyline(&mut out, shape.into_iter(), color);
            }
        }
        let pts: Vec<(f64, f64)> = (0..tr.len()).filter(|&i| tr.values[i] > 0.0).map(|i| (tr.times[i], logv(tr.values[i]))).collect();
        value.polyline(&mut out, pts.into_iter(), color);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{color}">{}</text>"#,
            MARGIN + 6.0,
            MARGIN + 16.0 + 14.0 * k as f64,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
