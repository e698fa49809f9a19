//! Tiny deterministic SVG chart writer: line plots and grouped bar charts,
//! no external renderer. Output is plain text, stable across runs.

use crate::Real;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 34.0;
const MARGIN_BOTTOM: f64 = 46.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub label: String,
    pub points: Vec<(Real, Real)>,
}

/// Vertical annotation, e.g. the step where a run halted.
pub struct VLine {
    pub x: Real,
    pub label: String,
}

struct Bounds {
    x_min: Real,
    x_max: Real,
    y_min: Real,
    y_max: Real,
}

impl Bounds {
    fn of(series: &[Series], include_y_zero: bool) -> Bounds {
        let mut b = Bounds {
            x_min: Real::INFINITY,
            x_max: Real::NEG_INFINITY,
            y_min: Real::INFINITY,
            y_max: Real::NEG_INFINITY,
        };
        for s in series {
            for &(x, y) in &s.points {
                if !x.is_finite() || !y.is_finite() {
                    continue;
                }
                b.x_min = b.x_min.min(x);
                b.x_max = b.x_max.max(x);
                b.y_min = b.y_min.min(y);
                b.y_max = b.y_max.max(y);
            }
        }
        if !b.x_min.is_finite() {
            // no finite data at all: an arbitrary fixed window
            b = Bounds { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 };
        }
        if include_y_zero {
            b.y_min = b.y_min.min(0.0);
            b.y_max = b.y_max.max(0.0);
        }
        if b.x_max == b.x_min {
            b.x_min -= 1.0;
            b.x_max += 1.0;
        }
        if b.y_max == b.y_min {
            b.y_min -= 1.0;
            b.y_max += 1.0;
        }
        // headroom so lines do not sit on the frame
        let pad = 0.05 * (b.y_max - b.y_min);
        b.y_min -= pad;
        b.y_max += pad;
        b
    }

    fn sx(&self, x: Real) -> f64 {
        MARGIN_LEFT + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn sy(&self, y: Real) -> f64 {
        HEIGHT - MARGIN_BOTTOM
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn fmt_tick(v: Real) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1e4 || a < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    }
}

fn open_svg(out: &mut String, title: &str) {
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    ));
}

fn axes(out: &mut String, b: &Bounds, x_label: &str, y_label: &str) {
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    out.push_str(&format!(
        "<rect x=\"{x0:.1}\" y=\"{y1:.1}\" width=\"{:.1}\" height=\"{:.1}\" \
         fill=\"none\" stroke=\"#000\"/>\n",
        x1 - x0,
        y0 - y1
    ));
    for i in 0..=4 {
        let t = i as Real / 4.0;
        let xv = b.x_min + t * (b.x_max - b.x_min);
        let yv = b.y_min + t * (b.y_max - b.y_min);
        let sx = b.sx(xv);
        let sy = b.sy(yv);
        out.push_str(&format!(
            "<line x1=\"{sx:.1}\" y1=\"{y0:.1}\" x2=\"{sx:.1}\" y2=\"{:.1}\" stroke=\"#000\"/>\n",
            y0 + 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{sx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 18.0,
            fmt_tick(xv)
        ));
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{sy:.1}\" x2=\"{x0:.1}\" y2=\"{sy:.1}\" stroke=\"#000\"/>\n",
            x0 - 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            sy + 4.0,
            fmt_tick(yv)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 8.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    ));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// A multi-series line plot. Non-finite points are skipped. `vline` draws a
/// dashed vertical marker (used for halt-step annotations).
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    vline: Option<&VLine>,
) -> String {
    let b = Bounds::of(series, false);
    let mut out = String::new();
    open_svg(&mut out, title);
    axes(&mut out, &b, x_label, y_label);

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", b.sx(x), b.sy(y)))
            .collect();
        if pts.len() == 1 {
            // a single point would be an invisible polyline
            let xy = &pts[0];
            let (px, py) = xy.split_once(',').expect("formatted point");
            out.push_str(&format!(
                "<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"{color}\"/>\n"
            ));
        } else {
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        }
        if series.len() > 1 {
            let ly = MARGIN_TOP + 14.0 * i as f64 + 10.0;
            out.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
                 stroke=\"{color}\" stroke-width=\"2\"/>\n",
                WIDTH - MARGIN_RIGHT - 120.0,
                WIDTH - MARGIN_RIGHT - 100.0
            ));
            out.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
                WIDTH - MARGIN_RIGHT - 94.0,
                ly + 4.0,
                escape(&s.label)
            ));
        }
    }

    if let Some(v) = vline {
        let sx = b.sx(v.x);
        out.push_str(&format!(
            "<line x1=\"{sx:.1}\" y1=\"{:.1}\" x2=\"{sx:.1}\" y2=\"{:.1}\" \
             stroke=\"#d62728\" stroke-dasharray=\"4 3\"/>\n",
            MARGIN_TOP,
            HEIGHT - MARGIN_BOTTOM
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#d62728\">{}</text>\n",
            sx + 4.0,
            MARGIN_TOP + 12.0,
            escape(&v.label)
        ));
    }

    out.push_str("</svg>\n");
    out
}

/// Grouped bar chart: one group per `group_labels` entry, one bar per series
/// within each group. Missing values leave a gap. Bars grow from the zero
/// baseline, so negative values hang downward.
pub fn grouped_bars(
    title: &str,
    y_label: &str,
    group_labels: &[String],
    series: &[(String, Vec<Option<Real>>)],
) -> String {
    let flat: Vec<Series> = series
        .iter()
        .map(|(label, vals)| Series {
            label: label.clone(),
            points: vals
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|v| (i as Real, v)))
                .collect(),
        })
        .collect();
    let mut b = Bounds::of(&flat, true);
    b.x_min = -0.5;
    b.x_max = group_labels.len() as Real - 0.5;

    let mut out = String::new();
    open_svg(&mut out, title);

    // y axis only; x carries the group labels
    let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
    let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
    out.push_str(&format!(
        "<rect x=\"{x0:.1}\" y=\"{y1:.1}\" width=\"{:.1}\" height=\"{:.1}\" \
         fill=\"none\" stroke=\"#000\"/>\n",
        x1 - x0,
        y0 - y1
    ));
    for i in 0..=4 {
        let t = i as Real / 4.0;
        let yv = b.y_min + t * (b.y_max - b.y_min);
        let sy = b.sy(yv);
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{sy:.1}\" x2=\"{x0:.1}\" y2=\"{sy:.1}\" stroke=\"#000\"/>\n",
            x0 - 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            sy + 4.0,
            fmt_tick(yv)
        ));
    }
    out.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    ));

    let n_series = series.len().max(1) as f64;
    let slot = (x1 - x0) / group_labels.len().max(1) as f64;
    let bar_w = slot / (n_series + 1.0);
    let zero_y = b.sy(0.0);

    for (g, label) in group_labels.iter().enumerate() {
        let gx = b.sx(g as Real);
        out.push_str(&format!(
            "<text x=\"{gx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            y0 + 18.0,
            escape(label)
        ));
        for (si, (_, vals)) in series.iter().enumerate() {
            if let Some(Some(v)) = vals.get(g) {
                let color = PALETTE[si % PALETTE.len()];
                let vy = b.sy(*v);
                let (top, height) =
                    if vy <= zero_y { (vy, zero_y - vy) } else { (zero_y, vy - zero_y) };
                let bx = gx - slot / 2.0 + bar_w * (si as f64 + 0.5);
                out.push_str(&format!(
                    "<rect x=\"{bx:.1}\" y=\"{top:.1}\" width=\"{bar_w:.1}\" \
                     height=\"{height:.1}\" fill=\"{color}\"/>\n"
                ));
            }
        }
    }

    // legend
    for (si, (label, _)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let ly = MARGIN_TOP + 14.0 * si as f64 + 10.0;
        out.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"8\" fill=\"{color}\"/>\n",
            WIDTH - MARGIN_RIGHT - 120.0,
            ly - 4.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            WIDTH - MARGIN_RIGHT - 102.0,
            ly + 4.0,
            escape(label)
        ));
    }

    out.push_str("</svg>\n");
    out
}
