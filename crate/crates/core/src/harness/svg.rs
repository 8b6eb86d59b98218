//! Minimal deterministic SVG line charts: axes, ticks, series, error
//! bars, legend. Presentation only; every plotted series also exists as
//! CSV, so plots can be deleted without losing data.

use std::fmt::Write as _;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 540.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 56.0;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesStyle {
    Line,
    DashedLine,
    Points,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Symmetric vertical error bars, one entry per point.
    pub y_err: Option<Vec<f64>>,
    pub style: SeriesStyle,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points, y_err: None, style: SeriesStyle::Line }
    }

    pub fn dashed(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points, y_err: None, style: SeriesStyle::DashedLine }
    }

    pub fn points(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points, y_err: None, style: SeriesStyle::Points }
    }

    pub fn with_errors(mut self, err: Vec<f64>) -> Self {
        assert_eq!(err.len(), self.points.len(), "one error bar per point");
        self.y_err = Some(err);
        self
    }
}

#[derive(Clone, Debug)]
pub struct Chart {
    title: String,
    x_label: String,
    y_label: String,
    log_x: bool,
    series: Vec<Series>,
}

impl Chart {
    pub fn new(
        title: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
    ) -> Self {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            series: Vec::new(),
        }
    }

    /// Plot x on a log10 axis; points with x <= 0 are dropped.
    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn with_series(mut self, series: Series) -> Self {
        self.series.push(series);
        self
    }

    pub fn render(&self) -> String {
        let mut doc = String::with_capacity(16 * 1024);
        let _ = write!(
            doc,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        doc.push('\n');
        let _ = writeln!(doc, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);

        let (x_range, y_range) = self.data_ranges();
        let plot = PlotArea { x_range, y_range };

        self.render_grid_and_ticks(&mut doc, &plot);
        self.render_series(&mut doc, &plot);
        self.render_frame_and_labels(&mut doc);
        self.render_legend(&mut doc);

        doc.push_str("</svg>\n");
        doc
    }

    fn map_x(&self, x: f64) -> Option<f64> {
        if self.log_x {
            if x > 0.0 {
                Some(x.log10())
            } else {
                None
            }
        } else {
            Some(x)
        }
    }

    fn data_ranges(&self) -> ((f64, f64), (f64, f64)) {
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for s in &self.series {
            for (k, &(x, y)) in s.points.iter().enumerate() {
                let Some(x) = self.map_x(x) else { continue };
                if !x.is_finite() || !y.is_finite() {
                    continue;
                }
                xs.push(x);
                let err = s.y_err.as_ref().map(|e| e[k]).unwrap_or(0.0);
                ys.push(y - err);
                ys.push(y + err);
            }
        }
        (pad_range(&xs), pad_range(&ys))
    }

    fn to_px(&self, plot: &PlotArea, x: f64, y: f64) -> Option<(f64, f64)> {
        let x = self.map_x(x)?;
        if !x.is_finite() || !y.is_finite() {
            return None;
        }
        let (x0, x1) = plot.x_range;
        let (y0, y1) = plot.y_range;
        let px = MARGIN_LEFT + (x - x0) / (x1 - x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
        let py = HEIGHT - MARGIN_BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);
        Some((px, py))
    }

    fn render_grid_and_ticks(&self, doc: &mut String, plot: &PlotArea) {
        let bottom = HEIGHT - MARGIN_BOTTOM;
        for t in nice_ticks(plot.x_range.0, plot.x_range.1) {
            let frac = (t - plot.x_range.0) / (plot.x_range.1 - plot.x_range.0);
            let px = MARGIN_LEFT + frac * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT);
            let _ = writeln!(
                doc,
                r##"<line x1="{px:.2}" y1="{MARGIN_TOP}" x2="{px:.2}" y2="{bottom}" stroke="#e0e0e0" stroke-width="1"/>"##
            );
            let label = if self.log_x { fmt_tick(10f64.powf(t)) } else { fmt_tick(t) };
            let ly = bottom + 18.0;
            let _ = writeln!(
                doc,
                r#"<text x="{px:.2}" y="{ly}" font-family="sans-serif" font-size="12" text-anchor="middle">{label}</text>"#
            );
        }
        for t in nice_ticks(plot.y_range.0, plot.y_range.1) {
            let frac = (t - plot.y_range.0) / (plot.y_range.1 - plot.y_range.0);
            let py = bottom - frac * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);
            let right = WIDTH - MARGIN_RIGHT;
            let _ = writeln!(
                doc,
                r##"<line x1="{MARGIN_LEFT}" y1="{py:.2}" x2="{right}" y2="{py:.2}" stroke="#e0e0e0" stroke-width="1"/>"##
            );
            let lx = MARGIN_LEFT - 8.0;
            let ty = py + 4.0;
            let _ = writeln!(
                doc,
                r#"<text x="{lx}" y="{ty:.2}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#,
                fmt_tick(t)
            );
        }
    }

    fn render_series(&self, doc: &mut String, plot: &PlotArea) {
        for (idx, s) in self.series.iter().enumerate() {
            let color = COLORS[idx % COLORS.len()];
            if let Some(errs) = &s.y_err {
                for (k, &(x, y)) in s.points.iter().enumerate() {
                    let e = errs[k];
                    let (Some((px, py_lo)), Some((_, py_hi))) =
                        (self.to_px(plot, x, y - e), self.to_px(plot, x, y + e))
                    else {
                        continue;
                    };
                    let _ = writeln!(
                        doc,
                        r#"<line x1="{px:.2}" y1="{py_lo:.2}" x2="{px:.2}" y2="{py_hi:.2}" stroke="{color}" stroke-width="1"/>"#
                    );
                    for py in [py_lo, py_hi] {
                        let (a, b) = (px - 3.0, px + 3.0);
                        let _ = writeln!(
                            doc,
                            r#"<line x1="{a:.2}" y1="{py:.2}" x2="{b:.2}" y2="{py:.2}" stroke="{color}" stroke-width="1"/>"#
                        );
                    }
                }
            }
            match s.style {
                SeriesStyle::Points => {
                    for &(x, y) in &s.points {
                        let Some((px, py)) = self.to_px(plot, x, y) else { continue };
                        let _ = writeln!(
                            doc,
                            r#"<circle cx="{px:.2}" cy="{py:.2}" r="3" fill="{color}"/>"#
                        );
                    }
                }
                SeriesStyle::Line | SeriesStyle::DashedLine => {
                    let dash = if s.style == SeriesStyle::DashedLine {
                        r#" stroke-dasharray="6 4""#
                    } else {
                        ""
                    };
                    // Split the polyline wherever a point cannot be drawn.
                    let mut segment: Vec<(f64, f64)> = Vec::new();
                    let flush = |seg: &mut Vec<(f64, f64)>, doc: &mut String| {
                        if seg.len() >= 2 {
                            let pts: Vec<String> =
                                seg.iter().map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
                            let _ = writeln!(
                                doc,
                                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                                pts.join(" ")
                            );
                        }
                        seg.clear();
                    };
                    for &(x, y) in &s.points {
                        match self.to_px(plot, x, y) {
                            Some(p) => segment.push(p),
                            None => flush(&mut segment, doc),
                        }
                    }
                    flush(&mut segment, doc);
                }
            }
        }
    }

    fn render_frame_and_labels(&self, doc: &mut String) {
        let w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let _ = writeln!(
            doc,
            r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{w}" height="{h}" fill="none" stroke="#333333" stroke-width="1"/>"##
        );
        let cx = MARGIN_LEFT + w / 2.0;
        let ty = MARGIN_TOP - 16.0;
        let _ = writeln!(
            doc,
            r#"<text x="{cx}" y="{ty}" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
            escape_text(&self.title)
        );
        let xy = HEIGHT - 12.0;
        let _ = writeln!(
            doc,
            r#"<text x="{cx}" y="{xy}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
            escape_text(&self.x_label)
        );
        let ly = MARGIN_TOP + h / 2.0;
        let _ = writeln!(
            doc,
            r#"<text x="18" y="{ly}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 18 {ly})">{}</text>"#,
            escape_text(&self.y_label)
        );
    }

    fn render_legend(&self, doc: &mut String) {
        if self.series.is_empty() {
            return;
        }
        let entry_h = 18.0;
        let box_w = 230.0;
        let box_h = 10.0 + entry_h * self.series.len() as f64;
        let x = WIDTH - MARGIN_RIGHT - box_w - 10.0;
        let y = MARGIN_TOP + 10.0;
        let _ = writeln!(
            doc,
            r##"<rect x="{x}" y="{y}" width="{box_w}" height="{box_h}" fill="#ffffff" fill-opacity="0.85" stroke="#999999" stroke-width="1"/>"##
        );
        for (idx, s) in self.series.iter().enumerate() {
            let color = COLORS[idx % COLORS.len()];
            let cy = y + 14.0 + entry_h * idx as f64;
            let (x1, x2) = (x + 8.0, x + 30.0);
            match s.style {
                SeriesStyle::Points => {
                    let cx = (x1 + x2) / 2.0;
                    let _ = writeln!(
                        doc,
                        r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#
                    );
                }
                SeriesStyle::Line | SeriesStyle::DashedLine => {
                    let dash = if s.style == SeriesStyle::DashedLine {
                        r#" stroke-dasharray="6 4""#
                    } else {
                        ""
                    };
                    let _ = writeln!(
                        doc,
                        r#"<line x1="{x1}" y1="{cy}" x2="{x2}" y2="{cy}" stroke="{color}" stroke-width="1.5"{dash}/>"#
                    );
                }
            }
            let tx = x + 38.0;
            let ty = cy + 4.0;
            let _ = writeln!(
                doc,
                r#"<text x="{tx}" y="{ty}" font-family="sans-serif" font-size="12">{}</text>"#,
                escape_text(&s.label)
            );
        }
    }
}

struct PlotArea {
    x_range: (f64, f64),
    y_range: (f64, f64),
}

fn pad_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        let pad = lo.abs().max(1.0) * 0.1;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.04;
    (lo - pad, hi + pad)
}

/// Equidistant ticks at a 1/2/5 x 10^k step covering about 5 intervals.
fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let mut t = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    while t <= hi + step * 1e-9 {
        // Snap values like 0.30000000000000004 back onto the step grid.
        ticks.push((t / step).round() * step);
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        return format!("{v:.1e}");
    }
    let mut s = format!("{v:.3}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

fn escape_text(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic() {
        let chart = Chart::new("demo", "x", "y")
            .with_series(Series::line("a", vec![(0.0, 0.0), (1.0, 1.0), (2.0, 0.5)]))
            .with_series(
                Series::points("b", vec![(0.5, 0.2), (1.5, 0.8)]).with_errors(vec![0.1, 0.2]),
            );
        let a = chart.render();
        let b = chart.render();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("<polyline"));
        assert!(a.contains("<circle"));
        assert!(a.matches("<line").count() >= 6, "error bars and grid expected");
        assert!(a.contains("demo"));
        assert!(a.ends_with("</svg>\n"));
    }

    #[test]
    fn log_axis_drops_nonpositive_points_and_labels_decades() {
        let chart = Chart::new("t", "sigma", "p")
            .log_x()
            .with_series(Series::line("s", vec![(0.0, 0.3), (0.01, 0.5), (0.1, 0.6), (1.0, 0.9)]));
        let doc = chart.render();
        assert!(doc.contains(">0.1<"), "{doc}");
        // The x = 0 point cannot appear on a log axis; the polyline has
        // exactly the three positive points.
        let poly = doc.split("<polyline").nth(1).unwrap();
        let n_points = poly.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(n_points.split(' ').count(), 3);
    }

    #[test]
    fn nan_splits_lines_into_segments() {
        let chart = Chart::new("t", "x", "y").with_series(Series::line(
            "s",
            vec![(0.0, 0.1), (1.0, 0.2), (2.0, f64::NAN), (3.0, 0.4), (4.0, 0.5)],
        ));
        let doc = chart.render();
        assert_eq!(doc.matches("<polyline").count(), 2);
    }

    #[test]
    fn tick_formatting() {
        assert_eq!(fmt_tick(0.0), "0");
        assert_eq!(fmt_tick(0.25), "0.25");
        assert_eq!(fmt_tick(2.0), "2");
        assert_eq!(fmt_tick(12345.0), "1.2e4");
        assert_eq!(fmt_tick(0.0001), "1.0e-4");
        let ticks = nice_ticks(0.0, 1.0);
        assert_eq!(ticks, vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
    }
}
