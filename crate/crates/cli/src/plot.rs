//! Minimal SVG rendering for the plot command. Every figure is also written
//! as the CSV it was drawn from, so plots are regenerable without refitting.

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// half-width of the band around y, when present (±2 SE)
    pub band: Option<Vec<f64>>,
}

struct Scale {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Scale {
    fn of(series: &[Series]) -> Scale {
        let mut x0 = f64::INFINITY;
        let mut x1 = f64::NEG_INFINITY;
        let mut y0 = f64::INFINITY;
        let mut y1 = f64::NEG_INFINITY;
        for s in series {
            for (i, &x) in s.x.iter().enumerate() {
                let half = s.band.as_ref().map(|b| b[i]).unwrap_or(0.0);
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(s.y[i] - half);
                y1 = y1.max(s.y[i] + half);
            }
        }
        if !(x0 < x1) {
            x1 = x0 + 1.0;
        }
        if !(y0 < y1) {
            y1 = y0 + 1.0;
        }
        // breathing room so curves do not touch the frame
        let pad = 0.05 * (y1 - y0);
        Scale {
            x0,
            x1,
            y0: y0 - pad,
            y1: y1 + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{x}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"16\">{title}</text>\n",
        x = WIDTH / 2.0,
        title = escape(title)
    )
}

fn axes(scale: &Scale, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    s.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = scale.x0 + f * (scale.x1 - scale.x0);
        let yv = scale.y0 + f * (scale.y1 - scale.y0);
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{v:.3}</text>\n",
            x = scale.px(xv),
            y = b + 18.0,
            v = xv
        ));
        s.push_str(&format!(
            "<text x=\"{x}\" y=\"{y}\" text-anchor=\"end\" font-family=\"sans-serif\" \
             font-size=\"11\">{v:.3}</text>\n",
            x = l - 6.0,
            y = scale.py(yv) + 4.0,
            v = yv
        ));
    }
    s.push_str(&format!(
        "<text x=\"{x}\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\">{t}</text>\n",
        x = WIDTH / 2.0,
        y = HEIGHT - 12.0,
        t = escape(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
         font-size=\"13\" transform=\"rotate(-90 16 {y})\">{t}</text>\n",
        y = HEIGHT / 2.0,
        t = escape(y_label)
    ));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart with optional ±band per series and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let scale = Scale::of(series);
    let mut svg = header(title);
    svg.push_str(&axes(&scale, x_label, y_label));
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if let Some(band) = &s.band {
            let mut d = String::from("M");
            for (i, &x) in s.x.iter().enumerate() {
                d.push_str(&format!(" {:.2},{:.2}", scale.px(x), scale.py(s.y[i] + band[i])));
            }
            for (i, &x) in s.x.iter().enumerate().rev() {
                d.push_str(&format!(" {:.2},{:.2}", scale.px(x), scale.py(s.y[i] - band[i])));
            }
            d.push_str(" Z");
            svg.push_str(&format!(
                "<path d=\"{d}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n"
            ));
        }
        let pts: Vec<String> = s
            .x
            .iter()
            .zip(&s.y)
            .map(|(&x, &y)| format!("{:.2},{:.2}", scale.px(x), scale.py(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            pts.join(" ")
        ));
        let ly = MARGIN + 16.0 * k as f64;
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{ly}\" x2=\"{x2}\" y2=\"{ly}\" stroke=\"{color}\" \
             stroke-width=\"2\"/><text x=\"{tx}\" y=\"{ty}\" font-family=\"sans-serif\" \
             font-size=\"11\">{l}</text>\n",
            x = WIDTH - MARGIN - 120.0,
            x2 = WIDTH - MARGIN - 96.0,
            tx = WIDTH - MARGIN - 90.0,
            ty = ly + 4.0,
            l = escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Five-number summary used by the box chart.
pub struct BoxStat {
    pub label: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub fn box_chart(title: &str, y_label: &str, boxes: &[BoxStat]) -> String {
    let y0 = boxes.iter().map(|b| b.min).fold(f64::INFINITY, f64::min);
    let y1 = boxes.iter().map(|b| b.max).fold(f64::NEG_INFINITY, f64::max);
    let series = [Series {
        label: String::new(),
        x: vec![0.0, boxes.len() as f64],
        y: vec![y0, y1],
        band: None,
    }];
    let scale = Scale::of(&series);
    let mut svg = header(title);
    svg.push_str(&axes(&scale, "", y_label));
    let slot = (WIDTH - 2.0 * MARGIN) / boxes.len().max(1) as f64;
    for (k, b) in boxes.iter().enumerate() {
        let cx = MARGIN + slot * (k as f64 + 0.5);
        let half = (slot * 0.3).min(36.0);
        let color = PALETTE[k % PALETTE.len()];
        svg.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{a}\" x2=\"{cx}\" y2=\"{b2}\" stroke=\"black\"/>\n",
            a = scale.py(b.min),
            b2 = scale.py(b.max)
        ));
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"{color}\" \
             fill-opacity=\"0.4\" stroke=\"black\"/>\n",
            x = cx - half,
            y = scale.py(b.q3),
            w = 2.0 * half,
            h = (scale.py(b.q1) - scale.py(b.q3)).abs()
        ));
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\" \
             stroke-width=\"2\"/>\n",
            x = cx - half,
            x2 = cx + half,
            y = scale.py(b.median)
        ));
        svg.push_str(&format!(
            "<text x=\"{cx}\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"11\">{l}</text>\n",
            y = HEIGHT - MARGIN + 18.0,
            l = escape(&b.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

pub struct Bar {
    pub label: String,
    pub value: f64,
    /// error-bar half width (2·SE convention)
    pub err: f64,
}

pub fn bar_chart(title: &str, y_label: &str, bars: &[Bar]) -> String {
    let y1 = bars
        .iter()
        .map(|b| b.value + b.err)
        .fold(0.0f64, f64::max);
    let series = [Series {
        label: String::new(),
        x: vec![0.0, bars.len() as f64],
        y: vec![0.0, y1],
        band: None,
    }];
    let scale = Scale::of(&series);
    let mut svg = header(title);
    svg.push_str(&axes(&scale, "", y_label));
    let slot = (WIDTH - 2.0 * MARGIN) / bars.len().max(1) as f64;
    for (k, b) in bars.iter().enumerate() {
        let cx = MARGIN + slot * (k as f64 + 0.5);
        let half = (slot * 0.3).min(48.0);
        let color = PALETTE[k % PALETTE.len()];
        let base = scale.py(0.0f64.max(scale.y0));
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y}\" width=\"{w}\" height=\"{h}\" fill=\"{color}\" \
             fill-opacity=\"0.7\"/>\n",
            x = cx - half,
            y = scale.py(b.value),
            w = 2.0 * half,
            h = (base - scale.py(b.value)).abs()
        ));
        if b.err > 0.0 {
            svg.push_str(&format!(
                "<line x1=\"{cx}\" y1=\"{a}\" x2=\"{cx}\" y2=\"{b2}\" stroke=\"black\"/>\n",
                a = scale.py(b.value - b.err),
                b2 = scale.py(b.value + b.err)
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{cx}\" y=\"{y}\" text-anchor=\"middle\" font-family=\"sans-serif\" \
             font-size=\"10\">{l}</text>\n",
            y = HEIGHT - MARGIN + 18.0,
            l = escape(&b.label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
