//! Output plumbing shared by every experiment driver: atomically written
//! CSVs and summaries, the pass/fail check list that decides the exit
//! status, and a small native SVG line plotter.

use std::path::Path;

use invcal_core::surrogate::atomic_write;
use invcal_core::Result;

/// All numeric output carries 17 significant digits so every file
/// round-trips the exact f64.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Short load tag for file names: `2.2` not `2.2000000000000002e0`.
pub fn load_tag(p: f64) -> String {
    format!("{p}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    atomic_write(path, text.as_bytes())
}

pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new() -> Csv {
        Csv { buf: String::new() }
    }

    /// Sidecar metadata line ahead of the header, `# key = value`.
    pub fn sidecar(&mut self, key: &str, value: &str) {
        self.buf.push_str("# ");
        self.buf.push_str(key);
        self.buf.push_str(" = ");
        self.buf.push_str(value);
        self.buf.push('\n');
    }

    pub fn row(&mut self, cells: &[String]) {
        self.buf.push_str(&cells.join(","));
        self.buf.push('\n');
    }

    pub fn header(&mut self, cols: &[&str]) {
        self.buf.push_str(&cols.join(","));
        self.buf.push('\n');
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_text(path, &self.buf)
    }
}

/// Acceptance checks attached to a run. Every check prints one line as it
/// is recorded; the collection decides the process exit status.
pub struct Checks {
    rows: Vec<(String, bool, String)>,
}

impl Checks {
    pub fn new() -> Checks {
        Checks { rows: Vec::new() }
    }

    pub fn record(&mut self, name: &str, pass: bool, detail: String) {
        println!("check {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
        self.rows.push((name.to_string(), pass, detail));
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|(_, ok, _)| *ok)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `[checks]` section body for the run summary.
    pub fn summary_section(&self) -> String {
        let mut s = String::from("\n[checks]\n");
        for (name, ok, detail) in &self.rows {
            s.push_str(&format!(
                "{name} = {} # {detail}\n",
                if *ok { "pass" } else { "fail" }
            ));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Minimal SVG line plots. Self-contained: fixed palette, linear or log-10
// vertical axis, legend in the top-right corner.

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 12] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#e377c2",
    "#7f7f7f", "#bcbd22", "#aec7e8", "#98df8a",
];

const W: f64 = 720.0;
const H: f64 = 480.0;
const ML: f64 = 78.0;
const MR: f64 = 24.0;
const MT: f64 = 40.0;
const MB: f64 = 54.0;

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e5).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.1e}")
    }
}

/// A plot of one or more (x, y) series. With `log_y` the vertical axis is
/// log-10 and nonpositive values are dropped from the drawing.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_y: bool,
) -> String {
    let map_y = |y: f64| if log_y { y.log10() } else { y };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for s in series {
        for &(x, y) in &s.points {
            if log_y && y <= 0.0 {
                continue;
            }
            xs.push(x);
            ys.push(map_y(y));
        }
    }
    if xs.is_empty() {
        return format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\"><text x=\"20\" y=\"30\">{title}: no drawable points</text></svg>");
    }
    let (mut x0, mut x1) = min_max(&xs);
    let (mut y0, mut y1) = min_max(&ys);
    if x1 == x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        title
    ));

    // Horizontal ticks: five even stops. Vertical: decades when log.
    for k in 0..=4 {
        let x = x0 + (x1 - x0) * k as f64 / 4.0;
        let sx = px(x);
        svg.push_str(&format!(
            "<line x1=\"{sx:.1}\" y1=\"{}\" x2=\"{sx:.1}\" y2=\"{}\" stroke=\"#ddd\"/>\n",
            MT,
            H - MB
        ));
        svg.push_str(&format!(
            "<text x=\"{sx:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            H - MB + 18.0,
            tick_label(x)
        ));
    }
    let y_ticks: Vec<f64> = if log_y {
        let lo = y0.floor() as i64;
        let hi = y1.ceil() as i64;
        let step = (((hi - lo) as f64 / 8.0).ceil() as i64).max(1);
        (lo..=hi).step_by(step as usize).map(|k| k as f64).collect()
    } else {
        (0..=4).map(|k| y0 + (y1 - y0) * k as f64 / 4.0).collect()
    };
    for &ty in &y_ticks {
        if ty < y0 - 1e-12 || ty > y1 + 1e-12 {
            continue;
        }
        let sy = py(ty);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{sy:.1}\" x2=\"{}\" y2=\"{sy:.1}\" stroke=\"#ddd\"/>\n",
            ML,
            W - MR
        ));
        let label = if log_y {
            format!("1e{}", ty as i64)
        } else {
            tick_label(ty)
        };
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            ML - 6.0,
            sy + 4.0,
            label
        ));
    }

    svg.push_str(&format!(
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
        ML + (W - ML - MR) / 2.0,
        H - 14.0,
        x_label
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0,
        y_label
    ));

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|&&(_, y)| !log_y || y > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(map_y(y))))
            .collect();
        if pts.len() > 1 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                pts.join(" ")
            ));
        } else if pts.len() == 1 {
            let xy: Vec<&str> = pts[0].split(',').collect();
            svg.push_str(&format!(
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"/>\n",
                xy[0], xy[1]
            ));
        }
        let ly = MT + 16.0 + 16.0 * i as f64;
        let lx = W - MR - 150.0;
        svg.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{:.1}\" x2=\"{}\" y2=\"{:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            ly - 4.0,
            lx + 22.0,
            ly - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{ly:.1}\">{}</text>\n",
            lx + 28.0,
            s.name
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in v {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}
