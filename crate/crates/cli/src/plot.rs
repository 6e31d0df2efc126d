//! Minimal SVG chart renderer for sweep outputs: line series with
//! optional confidence bands, an optional horizontal baseline rule,
//! linear or log2 x axis, ticks, and a legend. Output is plain text
//! with fixed two-decimal coordinates, so identical data always
//! renders to identical bytes.

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 52.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

/// One plotted curve: points sorted by x, with an optional confidence
/// band as (x, low, high) triples.
#[derive(Debug, Clone, Default)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub band: Vec<(f64, f64, f64)>,
}

/// A complete chart description.
#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Plot x on a log2 axis (set sizes); ticks land on the data xs.
    pub x_log2: bool,
    pub series: Vec<Series>,
    /// Dashed horizontal rule with a legend entry, e.g. the
    /// no-finetuning baseline.
    pub baseline: Option<(f64, String)>,
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 && v.abs() < 1e7 {
        format!("{}", v.round() as i64)
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// A visually round step size close to `span / target`.
fn nice_step(span: f64, target: f64) -> f64 {
    if !(span > 0.0) {
        return 1.0;
    }
    let raw = span / target.max(1.0);
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    log_x: bool,
}

impl Frame {
    fn tx(&self, x: f64) -> f64 {
        let (x, x_min, x_max) = if self.log_x {
            (x.max(1e-12).log2(), self.x_min, self.x_max)
        } else {
            (x, self.x_min, self.x_max)
        };
        let span = (x_max - x_min).max(1e-12);
        MARGIN_L + (x - x_min) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn ty(&self, y: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-12);
        HEIGHT - MARGIN_B - (y - self.y_min) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

/// Renders the chart to an SVG document string.
pub fn render_svg(chart: &Chart) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in &chart.series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                xs.push(x);
                ys.push(y);
            }
        }
        for &(x, lo, hi) in &s.band {
            if x.is_finite() && lo.is_finite() && hi.is_finite() {
                xs.push(x);
                ys.push(lo);
                ys.push(hi);
            }
        }
    }
    if let Some((y, _)) = chart.baseline {
        if y.is_finite() {
            ys.push(y);
        }
    }
    let (x_lo, x_hi) = span_of(&xs, 0.0, 1.0);
    let (y_lo, y_hi) = span_of(&ys, 0.0, 1.0);
    let (x_min, x_max) = if chart.x_log2 {
        (x_lo.max(1e-12).log2(), x_hi.max(1e-9).log2())
    } else {
        pad(x_lo, x_hi)
    };
    let (y_min, y_max) = pad(y_lo, y_hi);
    let frame = Frame { x_min, x_max, y_min, y_max, log_x: chart.x_log2 };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        fmt((MARGIN_L + WIDTH - MARGIN_R) / 2.0),
        xml(&chart.title)
    ));

    // Axes box.
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#444\"/>\n",
        fmt(MARGIN_L),
        fmt(MARGIN_T),
        fmt(WIDTH - MARGIN_L - MARGIN_R),
        fmt(HEIGHT - MARGIN_T - MARGIN_B)
    ));

    // X ticks: data positions on a log2 axis, nice steps otherwise.
    let x_ticks: Vec<f64> = if chart.x_log2 {
        let mut t: Vec<f64> = xs.clone();
        t.sort_by(f64::total_cmp);
        t.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        t
    } else {
        tick_values(x_lo, x_hi)
    };
    for &t in &x_ticks {
        let px = frame.tx(t);
        svg.push_str(&format!(
            "<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"#444\"/>\n",
            fmt(px),
            fmt(HEIGHT - MARGIN_B),
            fmt(HEIGHT - MARGIN_B + 5.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            fmt(px),
            fmt(HEIGHT - MARGIN_B + 18.0),
            fmt_tick(t)
        ));
    }
    // Y ticks.
    for &t in &tick_values(y_min, y_max) {
        let py = frame.ty(t);
        svg.push_str(&format!(
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#444\"/>\n",
            fmt(py),
            fmt(MARGIN_L - 5.0),
            fmt(MARGIN_L)
        ));
        svg.push_str(&format!(
            "<line x1=\"{1}\" y1=\"{0}\" x2=\"{2}\" y2=\"{0}\" stroke=\"#eee\"/>\n",
            fmt(py),
            fmt(MARGIN_L),
            fmt(WIDTH - MARGIN_R)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n",
            fmt(MARGIN_L - 8.0),
            fmt(py + 4.0),
            fmt_tick(t)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        fmt((MARGIN_L + WIDTH - MARGIN_R) / 2.0),
        fmt(HEIGHT - 12.0),
        xml(&chart.x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        fmt((MARGIN_T + HEIGHT - MARGIN_B) / 2.0),
        fmt((MARGIN_T + HEIGHT - MARGIN_B) / 2.0),
        xml(&chart.y_label)
    ));

    // Confidence bands first so lines draw on top of them.
    for (i, s) in chart.series.iter().enumerate() {
        if s.band.len() < 2 {
            continue;
        }
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<String> = Vec::new();
        for &(x, _, hi) in &s.band {
            pts.push(format!("{},{}", fmt(frame.tx(x)), fmt(frame.ty(hi))));
        }
        for &(x, lo, _) in s.band.iter().rev() {
            pts.push(format!("{},{}", fmt(frame.tx(x)), fmt(frame.ty(lo))));
        }
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
            pts.join(" ")
        ));
    }

    // Baseline rule.
    if let Some((y, _)) = &chart.baseline {
        let py = fmt(frame.ty(*y));
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{}\" y2=\"{py}\" stroke=\"#555\" stroke-dasharray=\"6 4\"/>\n",
            fmt(MARGIN_L),
            fmt(WIDTH - MARGIN_R)
        ));
    }

    // Lines and markers.
    for (i, s) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.points.len() > 1 {
            let pts: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{},{}", fmt(frame.tx(x)), fmt(frame.ty(y))))
                .collect();
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                pts.join(" ")
            ));
        }
        for &(x, y) in &s.points {
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                fmt(frame.tx(x)),
                fmt(frame.ty(y))
            ));
        }
    }

    // Legend.
    let mut ly = MARGIN_T + 10.0;
    let lx = WIDTH - MARGIN_R + 12.0;
    for (i, s) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            fmt(lx),
            fmt(ly),
            fmt(lx + 22.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            fmt(lx + 28.0),
            fmt(ly + 4.0),
            xml(&s.name)
        ));
        ly += 18.0;
    }
    if let Some((_, name)) = &chart.baseline {
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"#555\" stroke-dasharray=\"6 4\"/>\n",
            fmt(lx),
            fmt(ly),
            fmt(lx + 22.0)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            fmt(lx + 28.0),
            fmt(ly + 4.0),
            xml(name)
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

fn span_of(values: &[f64], lo_default: f64, hi_default: f64) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        (lo_default, hi_default)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn pad(lo: f64, hi: f64) -> (f64, f64) {
    let m = (hi - lo) * 0.06;
    (lo - m, hi + m)
}

fn tick_values(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo, 5.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        // Snap near-zero ticks so -0.00 never appears.
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn xml(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_chart() -> Chart {
        Chart {
            title: "MAE vs set size".to_string(),
            x_label: "set size".to_string(),
            y_label: "MAE".to_string(),
            x_log2: true,
            series: vec![Series {
                name: "4 Hz".to_string(),
                points: vec![(32.0, 0.5), (128.0, 0.4), (512.0, 0.3)],
                band: vec![(32.0, 0.45, 0.55), (128.0, 0.35, 0.45), (512.0, 0.25, 0.35)],
            }],
            baseline: Some((0.6, "no finetuning".to_string())),
        }
    }

    #[test]
    fn render_is_deterministic() {
        let chart = sample_chart();
        assert_eq!(render_svg(&chart), render_svg(&chart));
    }

    #[test]
    fn render_contains_series_band_and_baseline() {
        let svg = render_svg(&sample_chart());
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("<polygon"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("4 Hz"));
        assert!(svg.contains("no finetuning"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn empty_chart_still_renders() {
        let svg = render_svg(&Chart::default());
        assert!(svg.starts_with("<svg"));
        assert!(!svg.contains("NaN"));
    }
}
