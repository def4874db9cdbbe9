//! Minimal SVG chart writer. Output depends only on the data, so repeated
//! runs give identical bytes.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

pub const PALETTE: [&str; 6] = ["#1f4e9c", "#c0392b", "#7f8c8d", "#27ae60", "#8e44ad", "#d35400"];

pub struct Chart {
    x: (f64, f64),
    y: (f64, f64),
    log_x: bool,
    body: String,
    legend: Vec<(String, String)>,
    title: String,
    x_label: String,
    y_label: String,
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Chart {
            x: widen(x),
            y: widen(y),
            log_x: false,
            body: String::new(),
            legend: Vec::new(),
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
        }
    }

    /// Log10 x axis; the range is given in data units and must be positive.
    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self.x = (self.x.0.max(1e-9).log10(), self.x.1.max(1e-9).log10());
        if self.x.1 <= self.x.0 {
            self.x.1 = self.x.0 + 1.0;
        }
        self
    }

    fn px(&self, v: f64) -> f64 {
        let v = if self.log_x { v.max(1e-9).log10() } else { v };
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    /// Bars spanning `[edge, edge + width)` with the given heights.
    pub fn bars(&mut self, edges: &[f64], width: f64, heights: &[f64], color: &str) {
        for (&e, &h) in edges.iter().zip(heights) {
            if h <= 0.0 {
                continue;
            }
            let (x0, x1) = (self.px(e), self.px(e + width));
            let (y0, y1) = (self.py(h), self.py(0.0));
            let _ = writeln!(
                self.body,
                r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{color}" stroke="white" stroke-width="0.5"/>"#,
                num(x0),
                num(y0),
                num(x1 - x0),
                num(y1 - y0)
            );
        }
    }

    pub fn points(&mut self, pts: &[(f64, f64)], color: &str, label: Option<&str>) {
        for &(x, y) in pts {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{}" cy="{}" r="2.5" fill="{color}" fill-opacity="0.7"/>"#,
                num(self.px(x)),
                num(self.py(y))
            );
        }
        if let Some(l) = label {
            self.legend.push((l.to_string(), color.to_string()));
        }
    }

    pub fn line(&mut self, pts: &[(f64, f64)], color: &str, label: Option<&str>) {
        if pts.len() >= 2 {
            let d: Vec<String> = pts
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| format!("{}{} {}", if i == 0 { 'M' } else { 'L' }, num(self.px(x)), num(self.py(y))))
                .collect();
            let _ = writeln!(self.body, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.join(" "));
        }
        if let Some(l) = label {
            self.legend.push((l.to_string(), color.to_string()));
        }
    }

    /// Empirical CDF of sorted values as a step line.
    pub fn cdf(&mut self, sorted: &[f64], color: &str, label: Option<&str>) {
        let n = sorted.len() as f64;
        let mut pts = Vec::with_capacity(sorted.len() * 2);
        for (i, &v) in sorted.iter().enumerate() {
            pts.push((v, i as f64 / n));
            pts.push((v, (i + 1) as f64 / n));
        }
        self.line(&pts, color, label);
    }

    fn axes(&self) -> String {
        let mut s = String::new();
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
        let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#);
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let xl = if self.log_x { num(10f64.powf(xv)) } else { num(xv) };
            let xp = x0 + f * (x1 - x0);
            let yp = y0 - f * (y0 - y1);
            let _ = writeln!(s, r#"<path d="M{} {y0} L{} {}" stroke="black"/>"#, num(xp), num(xp), y0 + 4.0);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{xl}</text>"#,
                num(xp),
                y0 + 17.0
            );
            let _ = writeln!(s, r#"<path d="M{} {} L{x0} {}" stroke="black"/>"#, x0 - 4.0, num(yp), num(yp));
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
                x0 - 7.0,
                num(yp + 4.0),
                num(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y_label)
        );
        s
    }

    pub fn finish(self) -> String {
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
        );
        out += &self.axes();
        out += &self.body;
        for (i, (label, color)) in self.legend.iter().enumerate() {
            let y = TOP + 8.0 + 16.0 * i as f64;
            let x = WIDTH - RIGHT - 190.0;
            let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
            let _ = writeln!(out, r#"<text x="{}" y="{y}" font-size="11">{}</text>"#, x + 15.0, escape(label));
        }
        out += "</svg>\n";
        out
    }
}
