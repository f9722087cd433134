//! Minimal SVG charts: scatter and line series on linear or log-x axes.

use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Markers,
    Line,
    /// Dashed line with markers.
    Reference,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
    pub color: &'static str,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, style: Style, color: &'static str) -> Self {
        Self {
            label: label.into(),
            points,
            style,
            color,
        }
    }
}

/// Vertical marker line, e.g. the selected β.
#[derive(Clone, Debug)]
pub struct Marker {
    pub x: f64,
    pub label: String,
}

#[derive(Clone, Debug)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
    pub markers: Vec<Marker>,
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD_L: f64 = 60.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 50.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in v.filter(|x| x.is_finite()) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Chart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            series: Vec::new(),
            markers: Vec::new(),
        }
    }

    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    pub fn marker(mut self, x: f64, label: impl Into<String>) -> Self {
        self.markers.push(Marker { x, label: label.into() });
        self
    }

    fn tx(&self, x: f64) -> f64 {
        if self.log_x {
            x.max(f64::MIN_POSITIVE).log10()
        } else {
            x
        }
    }

    /// Chart body as an SVG group translated by `(ox, oy)`.
    fn group(&self, ox: f64, oy: f64) -> String {
        let xs = self.series.iter().flat_map(|s| s.points.iter().map(|p| self.tx(p.0)));
        let (x0, x1) = bounds(xs.chain(self.markers.iter().map(|m| self.tx(m.x))));
        let (y0, y1) = bounds(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
        let px = |x: f64| PAD_L + (self.tx(x) - x0) / (x1 - x0) * (W - PAD_L - PAD_R);
        let py = |y: f64| H - PAD_B - (y - y0) / (y1 - y0) * (H - PAD_T - PAD_B);
        let mut g = String::new();
        let _ = writeln!(g, r#"<g transform="translate({ox},{oy})" font-family="sans-serif" font-size="11">"#);
        let _ = writeln!(
            g,
            r##"<rect x="{PAD_L}" y="{PAD_T}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            W - PAD_L - PAD_R,
            H - PAD_T - PAD_B
        );
        let _ = writeln!(g, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, esc(&self.title));
        let _ = writeln!(g, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (W + PAD_L) / 2.0, H - 10.0, esc(&self.x_label));
        let _ = writeln!(
            g,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let label = if self.log_x { format!("{:.0e}", 10f64.powf(xv)) } else { format!("{xv:.3}") };
            let sx = PAD_L + f * (W - PAD_L - PAD_R);
            let _ = writeln!(g, r#"<text x="{sx:.1}" y="{}" text-anchor="middle">{label}</text>"#, H - PAD_B + 14.0);
            let yv = y0 + f * (y1 - y0);
            let sy = H - PAD_B - f * (H - PAD_T - PAD_B);
            let _ = writeln!(g, r#"<text x="{}" y="{sy:.1}" text-anchor="end">{yv:.3}</text>"#, PAD_L - 4.0);
        }
        for m in &self.markers {
            let x = px(m.x);
            let _ = writeln!(
                g,
                r##"<line x1="{x:.1}" y1="{PAD_T}" x2="{x:.1}" y2="{}" stroke="#d62728" stroke-dasharray="4 3"/><text x="{:.1}" y="{}" fill="#d62728">{}</text>"##,
                H - PAD_B,
                x + 3.0,
                PAD_T + 12.0,
                esc(&m.label)
            );
        }
        for s in &self.series {
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .map(|&(x, y)| (px(x), py(y)))
                .collect();
            if matches!(s.style, Style::Line | Style::Reference) && pts.len() > 1 {
                let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let dash = if s.style == Style::Reference { r#" stroke-dasharray="6 3""# } else { "" };
                let _ = writeln!(
                    g,
                    r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                    path.join(" "),
                    s.color
                );
            }
            if matches!(s.style, Style::Markers | Style::Reference) {
                let r = if pts.len() > 500 { 1.2 } else { 3.0 };
                for (x, y) in &pts {
                    let _ = writeln!(g, r#"<circle cx="{x:.1}" cy="{y:.1}" r="{r}" fill="{}" fill-opacity="0.7"/>"#, s.color);
                }
            }
        }
        for (i, s) in self.series.iter().enumerate() {
            let y = PAD_T + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                g,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
                PAD_L + 8.0,
                y - 9.0,
                s.color,
                PAD_L + 22.0,
                y,
                esc(&s.label)
            );
        }
        g.push_str("</g>\n");
        g
    }

    pub fn to_svg(&self) -> String {
        panels(std::slice::from_ref(self))
    }
}

/// Charts side by side in one document.
pub fn panels(charts: &[Chart]) -> String {
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{H}" viewBox="0 0 {} {H}">"#,
        W * charts.len() as f64,
        W * charts.len() as f64
    );
    out.push('\n');
    out.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    out.push('\n');
    for (i, c) in charts.iter().enumerate() {
        out.push_str(&c.group(W * i as f64, 0.0));
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg(path: &std::path::Path, svg: &str) -> crate::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| crate::Error::io(parent, e))?;
    }
    std::fs::write(path, svg).map_err(|e| crate::Error::io(path, e))
}
