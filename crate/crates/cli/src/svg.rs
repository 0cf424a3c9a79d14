//! Hand-emitted static SVG charts.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Frame {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !f.x0.is_finite() {
            (f.x0, f.x1, f.y0, f.y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if f.x1 - f.x0 <= 0.0 {
            f.x0 -= 0.5;
            f.x1 += 0.5;
        }
        let pad = ((f.y1 - f.y0) * 0.05).max(1e-12);
        f.y0 -= pad;
        f.y1 += pad;
        f
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(s: &mut String, title: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str, xticks: bool) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        s,
        r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let y = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let py = f.py(y);
        let _ = writeln!(
            s,
            r##"<line x1="{l}" y1="{py:.1}" x2="{r}" y2="{py:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
            l - 6.0,
            py + 4.0,
            tick(y)
        );
        if xticks {
            let x = f.x0 + (f.x1 - f.x0) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                f.px(x),
                b + 16.0,
                tick(x)
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v == 0.0 || (1e-2..1e4).contains(&v.abs()) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = W - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="12" height="3" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 4.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y,
            escape(n)
        );
    }
}

/// One polyline per series.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let f = Frame::fit(series.iter().flat_map(|s| s.points.iter().copied()));
    let mut s = String::new();
    open(&mut s, title);
    axes(&mut s, &f, xlabel, ylabel, true);
    for (i, ser) in series.iter().enumerate() {
        let mut d = String::new();
        for (x, y) in ser.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let cmd = if d.is_empty() { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{:.2},{:.2} ", f.px(*x), f.py(*y));
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            d.trim_end(),
            PALETTE[i % PALETTE.len()]
        );
    }
    legend(&mut s, &series.iter().map(|x| x.name.as_str()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Labelled points.
pub fn scatter(title: &str, xlabel: &str, ylabel: &str, points: &[(String, f64, f64)]) -> String {
    let f = Frame::fit(points.iter().map(|(_, x, y)| (*x, *y)));
    let mut s = String::new();
    open(&mut s, title);
    axes(&mut s, &f, xlabel, ylabel, true);
    for (i, (label, x, y)) in points.iter().enumerate() {
        let (px, py) = (f.px(*x), f.py(*y));
        let _ = writeln!(
            s,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="5" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            PALETTE[i % PALETTE.len()],
            px + 8.0,
            py - 6.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Series over categorical x positions, one marker-and-line per series.
pub fn category_chart(title: &str, xlabel: &str, categories: &[String], series: &[Series]) -> String {
    let pts = series.iter().flat_map(|s| s.points.iter().copied());
    let mut f = Frame::fit(pts);
    f.x0 = -0.5;
    f.x1 = categories.len() as f64 - 0.5;
    let mut s = String::new();
    open(&mut s, title);
    axes(&mut s, &f, xlabel, "value", false);
    for (i, c) in categories.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            f.px(i as f64),
            H - BOTTOM + 16.0,
            escape(c)
        );
    }
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut d = String::new();
        for (x, y) in ser.points.iter().filter(|(_, y)| y.is_finite()) {
            let cmd = if d.is_empty() { 'M' } else { 'L' };
            let (px, py) = (f.px(*x), f.py(*y));
            let _ = write!(d, "{cmd}{px:.2},{py:.2} ");
            let _ = writeln!(s, r#"<circle cx="{px:.2}" cy="{py:.2}" r="4" fill="{color}"/>"#);
        }
        let _ = writeln!(
            s,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
    }
    legend(&mut s, &series.iter().map(|x| x.name.as_str()).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let ser = vec![Series {
            name: "a<b".into(),
            points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, f64::NAN)],
        }];
        let svg = line_chart("t", "step", "loss", &ser);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
        let sc = scatter("s", "x", "y", &[("ogpsa".into(), 0.1, 0.2)]);
        assert!(sc.contains("<circle"));
        let cat = category_chart("c", "K", &["1".into(), "inf".into()], &ser);
        assert!(cat.contains(">inf<"));
    }
}
