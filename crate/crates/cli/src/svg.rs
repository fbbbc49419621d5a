//! Minimal SVG line and bar charts with fixed number formatting, so equal
//! inputs always give equal bytes.

use std::fmt::Write;

const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 320.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 46.0;
const TICKS: usize = 5;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `None` values leave a gap in the line.
    pub points: Vec<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed y range; otherwise fitted to the data.
    pub y_range: Option<(f64, f64)>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            y_range: None,
        }
    }

    pub fn with_y_range(mut self, lo: f64, hi: f64) -> Self {
        self.y_range = Some((lo, hi));
        self
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn tick_label(v: f64, range: f64) -> String {
    if range >= 10.0 {
        format!("{v:.0}")
    } else if range >= 0.1 {
        format!("{v:.2}")
    } else {
        format!("{v:.2e}")
    }
}

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{width:.0}" height="{height:.0}" fill="white"/>"#);
}

struct Frame {
    x0: f64,
    y0: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn plot_w() -> f64 {
        PANEL_W - LEFT - RIGHT
    }

    fn plot_h() -> f64 {
        PANEL_H - TOP - BOTTOM
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + LEFT + (x - self.xr.0) / (self.xr.1 - self.xr.0) * Self::plot_w()
    }

    fn py(&self, y: f64) -> f64 {
        let t = ((y - self.yr.0) / (self.yr.1 - self.yr.0)).clamp(0.0, 1.0);
        self.y0 + TOP + (1.0 - t) * Self::plot_h()
    }

    /// Title, box, ticks and axis labels.
    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (left, top) = (self.x0 + LEFT, self.y0 + TOP);
        let (w, h) = (Self::plot_w(), Self::plot_h());
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
            left + w / 2.0,
            self.y0 + 22.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r##"<rect x="{left:.2}" y="{top:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#333"/>"##
        );
        for i in 0..=TICKS {
            let f = i as f64 / TICKS as f64;
            let xv = self.xr.0 + f * (self.xr.1 - self.xr.0);
            let x = left + f * w;
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                top + h,
                top + h + 4.0,
                top + h + 16.0,
                tick_label(xv, self.xr.1 - self.xr.0)
            );
            let yv = self.yr.0 + f * (self.yr.1 - self.yr.0);
            let y = top + (1.0 - f) * h;
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{left:.2}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                left - 4.0,
                left - 6.0,
                y + 4.0,
                tick_label(yv, self.yr.1 - self.yr.0)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            left + w / 2.0,
            top + h + 34.0,
            escape(x_label)
        );
        let (lx, ly) = (self.x0 + 14.0, top + h / 2.0);
        let _ = writeln!(
            out,
            r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
            escape(y_label)
        );
    }
}

fn draw_series(out: &mut String, frame: &Frame, s: &Series, color: &str) {
    let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
    for &(x, y) in &s.points {
        match y.filter(|v| v.is_finite()) {
            Some(y) => segments.last_mut().unwrap().push((frame.px(x), frame.py(y))),
            None => {
                if !segments.last().unwrap().is_empty() {
                    segments.push(Vec::new());
                }
            }
        }
    }
    for seg in segments.iter().filter(|s| !s.is_empty()) {
        if seg.len() == 1 {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{color}"/>"#, seg[0].0, seg[0].1);
            continue;
        }
        let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            pts.join(" ")
        );
    }
}

fn legend(out: &mut String, frame: &Frame, labels: &[&str]) {
    let x = frame.x0 + PANEL_W - RIGHT - 150.0;
    for (i, label) in labels.iter().enumerate() {
        let y = frame.y0 + TOP + 12.0 + 14.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 18.0,
            x + 22.0,
            y + 4.0,
            escape(label)
        );
    }
}

/// Renders charts on a grid `columns` wide. A legend is drawn for charts
/// with more than one series.
pub fn line_charts(charts: &[Chart], columns: usize) -> String {
    let columns = columns.max(1);
    let rows = charts.len().div_ceil(columns).max(1);
    let mut out = String::new();
    header(&mut out, PANEL_W * columns.min(charts.len().max(1)) as f64, PANEL_H * rows as f64);
    for (i, chart) in charts.iter().enumerate() {
        let all = || chart.series.iter().flat_map(|s| s.points.iter());
        let xr = span(all().map(|p| p.0));
        let yr = chart.y_range.unwrap_or_else(|| span(all().filter_map(|p| p.1)));
        let frame = Frame {
            x0: PANEL_W * (i % columns) as f64,
            y0: PANEL_H * (i / columns) as f64,
            xr,
            yr,
        };
        frame.axes(&mut out, &chart.title, &chart.x_label, &chart.y_label);
        for (k, s) in chart.series.iter().enumerate() {
            draw_series(&mut out, &frame, s, PALETTE[k % PALETTE.len()]);
        }
        if chart.series.len() > 1 {
            let labels: Vec<&str> = chart.series.iter().map(|s| s.label.as_str()).collect();
            legend(&mut out, &frame, &labels);
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Bar chart of `counts` over equal-width bins spanning `[lo, hi]`.
pub fn histogram(title: &str, x_label: &str, counts: &[usize], lo: f64, hi: f64) -> String {
    let mut out = String::new();
    header(&mut out, PANEL_W, PANEL_H);
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let frame = Frame {
        x0: 0.0,
        y0: 0.0,
        xr: (lo, hi),
        yr: (0.0, top),
    };
    frame.axes(&mut out, title, x_label, "count");
    let width = (hi - lo) / counts.len().max(1) as f64;
    for (k, &c) in counts.iter().enumerate() {
        let a = frame.px(lo + k as f64 * width);
        let b = frame.px(lo + (k + 1) as f64 * width);
        let y = frame.py(c as f64);
        let _ = writeln!(
            out,
            r#"<rect x="{a:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="white"/>"#,
            b - a,
            frame.py(0.0) - y,
            PALETTE[0]
        );
    }
    out.push_str("</svg>\n");
    out
}
