//! Minimal hand-written SVG: axes, points, lines, stars and text.

use std::fmt::Write;

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn comment(&mut self, text: &str) {
        let _ = writeln!(self.body, "<!-- {} -->", text.replace("--", "- -"));
    }

    pub fn raw(&mut self, element: &str) {
        self.body.push_str(element);
        self.body.push('\n');
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, class: &str) {
        let _ = writeln!(
            self.body,
            r#"<line class="{class}" x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="black"/>"#
        );
    }

    pub fn polyline(&mut self, pts: &[(f64, f64)], class: &str, color: &str) {
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}"/>"#,
            coords.join(" ")
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, class: &str, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle class="{class}" cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{color}"/>"#
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, class: &str, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect class="{class}" x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{color}"/>"#
        );
    }

    /// Five-pointed star centred on `(cx, cy)`.
    pub fn star(&mut self, cx: f64, cy: f64, r: f64) {
        let pts: Vec<String> = (0..10)
            .map(|i| {
                let rad = if i % 2 == 0 { r } else { r * 0.45 };
                let a = std::f64::consts::PI * (i as f64 / 5.0 - 0.5);
                format!("{:.2},{:.2}", cx + rad * a.cos(), cy + rad * a.sin())
            })
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polygon class="star" points="{}" fill="gold" stroke="black"/>"#,
            pts.join(" ")
        );
    }

    pub fn text(&mut self, x: f64, y: f64, anchor: &str, size: f64, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-size="{size}">{}</text>"#,
            escape(content)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body
        )
    }
}

/// A rectangular plotting area with linear data-to-pixel maps.
#[derive(Debug, Clone, Copy)]
pub struct Axes {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Axes {
    pub fn x(&self, v: f64) -> f64 {
        let (lo, hi) = self.x_range;
        self.left + (v - lo) / (hi - lo) * self.width
    }

    pub fn y(&self, v: f64) -> f64 {
        let (lo, hi) = self.y_range;
        self.top + self.height - (v - lo) / (hi - lo) * self.height
    }

    pub fn bottom(&self) -> f64 {
        self.top + self.height
    }

    /// Draws both axes with `ticks` evenly spaced labels each.
    pub fn draw(&self, svg: &mut Svg, title: &str, x_label: &str, y_label: &str, ticks: usize) {
        let b = self.bottom();
        svg.line(self.left, b, self.left + self.width, b, "axis");
        svg.line(self.left, self.top, self.left, b, "axis");
        for i in 0..=ticks {
            let t = i as f64 / ticks as f64;
            let xv = self.x_range.0 + t * (self.x_range.1 - self.x_range.0);
            let yv = self.y_range.0 + t * (self.y_range.1 - self.y_range.0);
            let (px, py) = (self.x(xv), self.y(yv));
            svg.line(px, b, px, b + 4.0, "tick");
            svg.text(px, b + 16.0, "middle", 10.0, &tick_label(xv));
            svg.line(self.left - 4.0, py, self.left, py, "tick");
            svg.text(self.left - 6.0, py + 3.0, "end", 10.0, &tick_label(yv));
        }
        svg.text(
            self.left + self.width / 2.0,
            self.top - 10.0,
            "middle",
            13.0,
            title,
        );
        svg.text(
            self.left + self.width / 2.0,
            b + 34.0,
            "middle",
            11.0,
            x_label,
        );
        svg.text(
            self.left - 40.0,
            self.top + self.height / 2.0,
            "middle",
            11.0,
            y_label,
        );
    }
}

fn tick_label(v: f64) -> String {
    if v.abs() >= 100.0 || v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Pads a data range so that points never sit on the frame.
pub fn padded_range(values: impl IntoIterator<Item = f64>, floor_span: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let span = (hi - lo).max(floor_span);
    let mid = (hi + lo) / 2.0;
    (mid - 0.55 * span, mid + 0.55 * span)
}
