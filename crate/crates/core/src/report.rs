//! Self-contained SVG plots for run reports: multi-series line charts and
//! box-style distribution charts. No external renderer, stylesheet or font
//! download — every figure is one standalone file.
//!
//! Axis ranges equal the data extrema exactly (a degenerate range is padded
//! symmetrically so the mapping stays finite).

use crate::error::{Error, Result};
use std::fmt::Write as _;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 86.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 48.0;
const MARGIN_BOTTOM: f64 = 64.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Minimum and maximum over the finite values; errors when there are none.
pub fn axis_range<I: IntoIterator<Item = f64>>(values: I) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        if v.is_finite() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if lo > hi {
        return Err(Error::state("no finite data to plot"));
    }
    Ok((lo, hi))
}

/// Compact tick-label formatting: plain decimals in a readable magnitude
/// band, scientific notation outside it, trailing zeros trimmed.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.3e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Linear data-to-pixel mapping over one axis.
#[derive(Debug, Clone, Copy)]
struct Scale {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Scale {
    /// Pads a zero-width range so the mapping stays finite; a real range is
    /// kept exactly as the data extrema.
    fn new(range: (f64, f64), px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = range;
        if lo == hi {
            let pad = lo.abs().max(1.0) * 0.05;
            lo -= pad;
            hi += pad;
        }
        Scale { lo, hi, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self) -> [f64; 3] {
        [self.lo, 0.5 * (self.lo + self.hi), self.hi]
    }
}

fn open_svg(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"13\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"17\">{}</text>\n",
        WIDTH / 2.0,
        escape(title),
    );
    s
}

fn axes(out: &mut String, x: &Scale, y: &Scale, x_label: &str, y_label: &str) {
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    let _ = write!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"#333\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#333\"/>\n"
    );
    for t in x.ticks() {
        let px = x.map(t);
        let _ = write!(
            out,
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"#333\"/>\n\
             <text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 5.0,
            y0 + 20.0,
            fmt_num(t)
        );
    }
    for t in y.ticks() {
        let py = y.map(t);
        let _ = write!(
            out,
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"#333\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            x0 - 5.0,
            x0 - 9.0,
            py + 4.0,
            fmt_num(t)
        );
    }
    let _ = write!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        0.5 * (x0 + x1),
        HEIGHT - 16.0,
        escape(x_label),
        0.5 * (y0 + y1),
        0.5 * (y0 + y1),
        escape(y_label),
    );
}

/// One named line.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
        }
    }
}

/// Multi-series line chart. Non-finite points are skipped; at least one
/// finite point must exist across all series.
#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl LinePlot {
    pub fn render(&self) -> Result<String> {
        let finite = |s: &Series| {
            s.points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .copied()
                .collect::<Vec<_>>()
        };
        let cleaned: Vec<(String, Vec<(f64, f64)>)> = self
            .series
            .iter()
            .map(|s| (s.label.clone(), finite(s)))
            .collect();
        let x_range = axis_range(cleaned.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)))
            .map_err(|_| Error::state(format!("plot '{}' has no data", self.title)))?;
        let y_range = axis_range(cleaned.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)))?;
        let xs = Scale::new(x_range, MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let ys = Scale::new(y_range, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);

        let mut out = open_svg(&self.title);
        axes(&mut out, &xs, &ys, &self.x_label, &self.y_label);
        for (i, (label, points)) in cleaned.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if points.len() == 1 {
                let (x, y) = points[0];
                let _ = write!(
                    out,
                    "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                    xs.map(x),
                    ys.map(y)
                );
            } else if !points.is_empty() {
                let coords: Vec<String> = points
                    .iter()
                    .map(|(x, y)| format!("{},{}", xs.map(*x), ys.map(*y)))
                    .collect();
                let _ = write!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n",
                    coords.join(" ")
                );
            }
            // Legend entry, top-right, one row per series.
            let ly = MARGIN_TOP + 16.0 * i as f64 + 8.0;
            let lx = WIDTH - MARGIN_RIGHT - 170.0;
            let _ = write!(
                out,
                "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
                 <text x=\"{}\" y=\"{}\">{}</text>\n",
                lx + 22.0,
                lx + 28.0,
                ly + 4.0,
                escape(label),
            );
        }
        out.push_str("</svg>\n");
        Ok(out)
    }
}

/// Box-style distribution chart: one box per labeled group showing quartiles
/// with whiskers at the extrema.
#[derive(Debug, Clone)]
pub struct BoxPlot {
    pub title: String,
    pub y_label: String,
    pub groups: Vec<(String, Vec<f64>)>,
}

impl BoxPlot {
    pub fn render(&self) -> Result<String> {
        if self.groups.is_empty() || self.groups.iter().any(|(_, v)| v.is_empty()) {
            return Err(Error::state(format!(
                "distribution plot '{}' has an empty group",
                self.title
            )));
        }
        for (label, values) in &self.groups {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::state(format!(
                    "distribution plot '{}', group '{label}': non-finite value",
                    self.title
                )));
            }
        }
        let y_range = axis_range(self.groups.iter().flat_map(|(_, v)| v.iter().copied()))?;
        let ys = Scale::new(y_range, HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
        let n = self.groups.len() as f64;
        let span = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let slot = span / n;
        let box_w = (slot * 0.4).min(90.0);

        let mut out = open_svg(&self.title);
        // Only the y axis carries a numeric scale; x slots are categorical.
        let x0 = MARGIN_LEFT;
        let y_bottom = HEIGHT - MARGIN_BOTTOM;
        let _ = write!(
            out,
            "<line x1=\"{x0}\" y1=\"{y_bottom}\" x2=\"{}\" y2=\"{y_bottom}\" stroke=\"#333\"/>\n\
             <line x1=\"{x0}\" y1=\"{y_bottom}\" x2=\"{x0}\" y2=\"{MARGIN_TOP}\" stroke=\"#333\"/>\n",
            WIDTH - MARGIN_RIGHT
        );
        for t in ys.ticks() {
            let py = ys.map(t);
            let _ = write!(
                out,
                "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"#333\"/>\n\
                 <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
                x0 - 5.0,
                x0 - 9.0,
                py + 4.0,
                fmt_num(t)
            );
        }
        let _ = write!(
            out,
            "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
            0.5 * (y_bottom + MARGIN_TOP),
            0.5 * (y_bottom + MARGIN_TOP),
            escape(&self.y_label),
        );

        for (i, (label, values)) in self.groups.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let (p25, median, p75) = crate::harness::quartiles(values)?;
            let (lo, hi) = axis_range(values.iter().copied())?;
            let cx = MARGIN_LEFT + slot * (i as f64 + 0.5);
            let (bx, bw) = (cx - box_w / 2.0, box_w);
            let (y_lo, y_hi) = (ys.map(lo), ys.map(hi));
            let (y_p25, y_med, y_p75) = (ys.map(p25), ys.map(median), ys.map(p75));
            let _ = write!(
                out,
                "<line x1=\"{cx}\" y1=\"{y_lo}\" x2=\"{cx}\" y2=\"{y_p25}\" stroke=\"{color}\"/>\n\
                 <line x1=\"{cx}\" y1=\"{y_p75}\" x2=\"{cx}\" y2=\"{y_hi}\" stroke=\"{color}\"/>\n\
                 <line x1=\"{}\" y1=\"{y_lo}\" x2=\"{}\" y2=\"{y_lo}\" stroke=\"{color}\"/>\n\
                 <line x1=\"{}\" y1=\"{y_hi}\" x2=\"{}\" y2=\"{y_hi}\" stroke=\"{color}\"/>\n\
                 <rect x=\"{bx}\" y=\"{y_p75}\" width=\"{bw}\" height=\"{}\" fill=\"{color}\" fill-opacity=\"0.25\" stroke=\"{color}\"/>\n\
                 <line x1=\"{bx}\" y1=\"{y_med}\" x2=\"{}\" y2=\"{y_med}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
                 <text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                cx - bw / 4.0,
                cx + bw / 4.0,
                cx - bw / 4.0,
                cx + bw / 4.0,
                (y_p25 - y_p75).max(0.0),
                bx + bw,
                y_bottom + 20.0,
                escape(label),
            );
        }
        out.push_str("</svg>\n");
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_range_is_exact_min_max() {
        let (lo, hi) = axis_range([3.0, -1.5, 2.25, 0.0]).unwrap();
        assert_eq!(lo, -1.5);
        assert_eq!(hi, 3.0);
    }

    #[test]
    fn axis_range_ignores_non_finite_and_errors_when_empty() {
        let (lo, hi) = axis_range([f64::NAN, 1.0, f64::INFINITY, 2.0]).unwrap();
        assert_eq!((lo, hi), (1.0, 2.0));
        assert!(axis_range([f64::NAN]).is_err());
        assert!(axis_range([]).is_err());
    }

    #[test]
    fn line_plot_labels_axis_extrema_exactly() {
        let plot = LinePlot {
            title: "demo".into(),
            x_label: "step".into(),
            y_label: "value".into(),
            series: vec![Series::new("a", vec![(0.0, -2.5), (10.0, 7.25), (5.0, 1.0)])],
        };
        let svg = plot.render().unwrap();
        // Tick labels carry the data extrema verbatim.
        for expected in ["<text", ">0<", ">10<", ">-2.5<", ">7.25<"] {
            assert!(svg.contains(expected), "missing {expected}");
        }
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn line_plot_empty_errors() {
        let plot = LinePlot {
            title: "empty".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series::new("a", vec![])],
        };
        assert!(plot.render().is_err());
    }

    #[test]
    fn line_plot_renders_every_series_label() {
        let plot = LinePlot {
            title: "overlay".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![
                Series::new("baseline", vec![(0.0, 1.0), (1.0, 2.0)]),
                Series::new("adapted", vec![(0.0, 2.0), (1.0, 1.0)]),
            ],
        };
        let svg = plot.render().unwrap();
        assert!(svg.contains("baseline"));
        assert!(svg.contains("adapted"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn box_plot_rejects_empty_groups() {
        let plot = BoxPlot {
            title: "dist".into(),
            y_label: "m".into(),
            groups: vec![("a".into(), vec![])],
        };
        assert!(plot.render().is_err());
        let none = BoxPlot {
            title: "dist".into(),
            y_label: "m".into(),
            groups: vec![],
        };
        assert!(none.render().is_err());
    }

    #[test]
    fn box_plot_draws_one_box_per_group() {
        let plot = BoxPlot {
            title: "dist".into(),
            y_label: "m".into(),
            groups: vec![
                ("one".into(), vec![1.0, 2.0, 3.0, 4.0]),
                ("two".into(), vec![0.5, 0.75, 1.5]),
            ],
        };
        let svg = plot.render().unwrap();
        assert_eq!(svg.matches("<rect").count(), 3); // background + 2 boxes
        assert!(svg.contains("one"));
        assert!(svg.contains("two"));
        // y scale extrema are the data extrema.
        assert!(svg.contains(">0.5<"));
        assert!(svg.contains(">4<"));
    }

    #[test]
    fn labels_are_xml_escaped() {
        let plot = LinePlot {
            title: "a < b & c".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series::new("s", vec![(0.0, 0.0), (1.0, 1.0)])],
        };
        let svg = plot.render().unwrap();
        assert!(svg.contains("a &lt; b &amp; c"));
        assert!(!svg.contains("a < b"));
    }

    #[test]
    fn fmt_num_is_compact() {
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.5), "1.5");
        assert_eq!(fmt_num(-2.0), "-2");
        assert_eq!(fmt_num(0.1234567), "0.1235");
        assert_eq!(fmt_num(1.0e-7), "1.000e-7");
        assert_eq!(fmt_num(3.2e9), "3.200e9");
    }
}
