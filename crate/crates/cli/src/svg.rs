//! Minimal SVG rendering: line plots with bands, histograms and trajectory
//! overlays.

use std::fmt::Write as _;

/// Fixed per-index palette so head `i` has the same color in every figure.
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

#[derive(Clone, Copy, Debug)]
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = span(xs);
        let (y0, y1) = span(ys);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

/// Finite range of `v`, widened when degenerate.
fn span(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in v.filter(|x| x.is_finite()) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn header(s: &mut String, title: &str) {
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(s: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = write!(
        s,
        r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            f.px(fx),
            b + 16.0,
            tick(fx)
        );
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            l - 6.0,
            f.py(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = write!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = write!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 100.0).round() / 100.0)
    }
}

fn legend(s: &mut String, labels: &[(String, &str)]) {
    for (i, (label, c)) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 12.0;
        let _ = write!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="3"/>"#,
            x + 20.0
        );
        let _ = write!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            x + 26.0,
            y + 4.0,
            escape(label)
        );
    }
}

/// One curve: `(x, mean, stderr)` points.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

/// Mean lines with shaded `mean ± stderr` bands.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series
        .iter()
        .flat_map(|s| s.points.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2]));
    let f = Frame::new(xs.clone(), ys.clone());
    let mut s = String::new();
    header(&mut s, title);
    axes(&mut s, &f, x_label, y_label);
    for (i, se) in series.iter().enumerate() {
        let c = color(i);
        if se.points.is_empty() {
            continue;
        }
        let mut band = String::new();
        for (j, p) in se.points.iter().enumerate() {
            let _ = write!(band, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, f.px(p.0), f.py(p.1 + p.2));
        }
        for p in se.points.iter().rev() {
            let _ = write!(band, "L{:.2},{:.2} ", f.px(p.0), f.py(p.1 - p.2));
        }
        band.push('Z');
        let _ = write!(s, r#"<path d="{band}" fill="{c}" fill-opacity="0.2" stroke="none"/>"#);
        let line: Vec<String> = se
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", f.px(p.0), f.py(p.1)))
            .collect();
        let _ = write!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            line.join(" ")
        );
    }
    let labels: Vec<(String, &str)> = series.iter().enumerate().map(|(i, se)| (se.label.clone(), color(i))).collect();
    legend(&mut s, &labels);
    s.push_str("</svg>\n");
    s
}

/// Histogram of `values` in `bins` equal-width bins, with a marker at zero.
pub fn histogram(title: &str, x_label: &str, values: &[f64], bins: usize, color_index: usize) -> String {
    let bins = bins.max(1);
    let (lo, hi) = span(values.iter().copied().chain([0.0]));
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let f = Frame {
        x0: lo,
        x1: hi,
        y0: 0.0,
        y1: top,
    };
    let mut s = String::new();
    header(&mut s, title);
    axes(&mut s, &f, x_label, "count");
    let c = color(color_index);
    for (i, &n) in counts.iter().enumerate() {
        let x0 = f.px(lo + width * i as f64);
        let x1 = f.px(lo + width * (i + 1) as f64);
        let y = f.py(n as f64);
        let _ = write!(
            s,
            r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{c}" stroke="white"/>"#,
            (x1 - x0).max(0.0),
            (f.py(0.0) - y).max(0.0)
        );
    }
    let z = f.px(0.0);
    let _ = write!(
        s,
        r#"<line x1="{z:.2}" y1="{TOP}" x2="{z:.2}" y2="{}" stroke="black" stroke-dasharray="4 3"/>"#,
        H - BOTTOM
    );
    s.push_str("</svg>\n");
    s
}

/// One colored path in the unit square.
#[derive(Clone, Debug)]
pub struct Path {
    pub color_index: usize,
    pub points: Vec<[f64; 2]>,
}

/// Trajectories over landmarks in the unit square, one panel.
pub fn trajectories(title: &str, landmarks: &[[f64; 2]], starts: &[[f64; 2]], paths: &[Path], labels: &[String]) -> String {
    let f = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };
    let mut s = String::new();
    header(&mut s, title);
    let _ = write!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for p in paths {
        if p.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = p
            .points
            .iter()
            .map(|q| format!("{:.2},{:.2}", f.px(q[0]), f.py(q[1])))
            .collect();
        let _ = write!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5" stroke-opacity="0.8"/>"#,
            pts.join(" "),
            color(p.color_index)
        );
    }
    for l in landmarks {
        let _ = write!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="black"/>"#,
            f.px(l[0]) - 5.0,
            f.py(l[1]) - 5.0
        );
    }
    for st in starts {
        let _ = write!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="white" stroke="black"/>"#,
            f.px(st[0]),
            f.py(st[1])
        );
    }
    let entries: Vec<(String, &str)> = labels.iter().enumerate().map(|(i, l)| (l.clone(), color(i))).collect();
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
    }

    #[test]
    fn degenerate_ranges_widen() {
        assert_eq!(span([2.0, 2.0].into_iter()), (1.8, 2.2));
        assert_eq!(span([0.0].into_iter()), (-1.0, 1.0));
        assert_eq!(span(std::iter::empty()), (0.0, 1.0));
    }

    #[test]
    fn histogram_counts_every_value() {
        let svg = histogram("h", "x", &[-1.0, 0.0, 0.5, 1.0], 2, 0);
        // two bars plus the background
        assert_eq!(svg.matches("<rect").count(), 3);
    }
}
