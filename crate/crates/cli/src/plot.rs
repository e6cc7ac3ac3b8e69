//! `plot`: CMC curves and per-split bars as SVG, ranked strips as PNG.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use rfd_reid::data::{load_record, resize, save_image, Image, ImageRecord, Interpolation};
use rfd_reid::eval::{is_valid_pair, EvalProtocol, EvalReport};
use rfd_reid::matching::{DistanceMatrix, MatrixRole};
use rfd_reid::Error;

use crate::config::{self, overlay, require, CliError, CliResult};

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 230.0, 30.0, 50.0); // left, right, top, bottom

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// JSON report from `eval` or `sweep`.
    pub report: Option<PathBuf>,
    /// Output directory.
    pub out: Option<PathBuf>,
    /// Protocol and matrix for ranked strips; both or neither.
    pub protocol: Option<PathBuf>,
    pub matrix: Option<PathBuf>,
    /// Number of queries drawn as strips.
    pub strips: usize,
    /// Gallery items per strip.
    pub top: usize,
    pub tile_height: usize,
    pub tile_width: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            report: None,
            out: None,
            protocol: None,
            matrix: None,
            strips: 5,
            top: 10,
            tile_height: 96,
            tile_width: 32,
        }
    }
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, env = "RFD_CONFIG")]
    pub config: Option<PathBuf>,
    #[arg(long, env = "RFD_REPORT")]
    pub report: Option<PathBuf>,
    #[arg(long, env = "RFD_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "RFD_PROTOCOL")]
    pub protocol: Option<PathBuf>,
    #[arg(long, env = "RFD_MATRIX")]
    pub matrix: Option<PathBuf>,
    #[arg(long, env = "RFD_STRIPS")]
    pub strips: Option<usize>,
    #[arg(long, env = "RFD_TOP")]
    pub top: Option<usize>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new() -> Self {
        Frame {
            x0: MARGIN.0,
            x1: WIDTH - MARGIN.1,
            y0: MARGIN.2,
            y1: HEIGHT - MARGIN.3,
        }
    }

    fn y(&self, v: f64) -> f64 {
        self.y1 - v.clamp(0.0, 1.0) * (self.y1 - self.y0)
    }
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Axes with a 0..1 y range and ticks every 0.2.
fn axes(s: &mut String, f: &Frame, y_label: &str) {
    let _ = writeln!(s, r#"<g stroke="black" fill="none"><line x1="{0}" y1="{1}" x2="{0}" y2="{2}"/><line x1="{0}" y1="{2}" x2="{3}" y2="{2}"/></g>"#, f.x0, f.y0, f.y1, f.x1);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = f.y(v);
        let _ = writeln!(s, r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##, f.x0, f.x1, f.x0 - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{y_label}</text>"#, (f.y0 + f.y1) / 2.0);
}

fn legend(s: &mut String, f: &Frame, labels: &[String]) {
    for (i, l) in labels.iter().enumerate() {
        let y = f.y0 + 10.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#, f.x1 + 14.0, y - 10.0, PALETTE[i % PALETTE.len()], f.x1 + 32.0, y, escape(l));
    }
}

fn series_label(protocol: impl std::fmt::Display, method: impl std::fmt::Display, lambda: f64) -> String {
    let method = method.to_string();
    if method == "bf" {
        format!("{protocol} {method}")
    } else {
        format!("{protocol} {method} λ={lambda}")
    }
}

/// Mean CMC curve of every protocol/method/λ group.
pub fn cmc_svg(report: &EvalReport) -> String {
    let f = Frame::new();
    let mut s = svg_open("CMC (mean over splits)");
    axes(&mut s, &f, "matching rate");
    let k_max = report.aggregate.iter().map(|a| a.cmc.len()).max().unwrap_or(1).max(2);
    let x = |k: usize| f.x0 + (k - 1) as f64 / (k_max - 1) as f64 * (f.x1 - f.x0);
    for k in 1..=k_max {
        if k == 1 || k % 5 == 0 {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{k}</text>"#, x(k), f.y1 + 16.0);
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">rank</text>"#, (f.x0 + f.x1) / 2.0, HEIGHT - 12.0);
    let mut labels = Vec::new();
    for (i, a) in report.aggregate.iter().enumerate() {
        let pts: Vec<String> = a.cmc.iter().enumerate().map(|(k, v)| format!("{:.2},{:.2}", x(k + 1), f.y(*v))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke-width="2" stroke="{}" points="{}"/>"#, PALETTE[i % PALETTE.len()], pts.join(" "));
        labels.push(series_label(a.protocol, a.method, a.lambda));
    }
    legend(&mut s, &f, &labels);
    s.push_str("</svg>\n");
    s
}

/// Rank-1 per split, one bar per protocol/method/λ group.
pub fn splits_svg(report: &EvalReport) -> String {
    let f = Frame::new();
    let mut s = svg_open("Rank-1 per split");
    axes(&mut s, &f, "R1");
    let mut splits: Vec<usize> = report.rows.iter().map(|r| r.split).collect();
    splits.sort_unstable();
    splits.dedup();
    let groups = &report.aggregate;
    let slot = (f.x1 - f.x0) / splits.len().max(1) as f64;
    let bar = slot * 0.8 / groups.len().max(1) as f64;
    for (si, split) in splits.iter().enumerate() {
        let left = f.x0 + slot * si as f64 + slot * 0.1;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{split}</text>"#, f.x0 + slot * (si as f64 + 0.5), f.y1 + 16.0);
        for (gi, g) in groups.iter().enumerate() {
            let row = report.rows.iter().find(|r| r.split == *split && r.protocol == g.protocol && r.method == g.method && r.lambda == g.lambda);
            if let Some(r) = row {
                let y = f.y(r.r1);
                let _ = writeln!(s, r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#, left + bar * gi as f64, bar, f.y1 - y, PALETTE[gi % PALETTE.len()]);
            }
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">split</text>"#, (f.x0 + f.x1) / 2.0, HEIGHT - 12.0);
    let labels: Vec<String> = groups.iter().map(|a| series_label(a.protocol, a.method, a.lambda)).collect();
    legend(&mut s, &f, &labels);
    s.push_str("</svg>\n");
    s
}

fn tile(record: &ImageRecord, interpolation: Interpolation, h: usize, w: usize) -> CliResult<Image> {
    let img = load_record(record, interpolation)?;
    Ok(resize(&img, h, w, Interpolation::Bilinear)?)
}

fn blit(canvas: &mut Image, img: &Image, top: usize, left: usize) {
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                *canvas.at_mut(top + y, left + x, c) = img.at(y, x, c.min(img.channels - 1));
            }
        }
    }
}

fn outline(canvas: &mut Image, top: usize, left: usize, h: usize, w: usize, color: [f32; 3], thickness: usize) {
    for y in top..top + h {
        for x in left..left + w {
            let edge = y < top + thickness || y >= top + h - thickness || x < left + thickness || x >= left + w - thickness;
            if edge {
                for (c, v) in color.iter().enumerate() {
                    *canvas.at_mut(y, x, c) = *v;
                }
            }
        }
    }
}

/// Query tile followed by its `top` best-ranked valid gallery items. True
/// matches are outlined green, the query blue.
pub fn ranked_strip(protocol: &EvalProtocol, matrix: &DistanceMatrix, q: usize, top: usize, h: usize, w: usize) -> CliResult<Image> {
    let query = &protocol.query[q];
    let mut order: Vec<usize> = (0..matrix.cols()).filter(|&g| is_valid_pair(query, &protocol.gallery[g])).collect();
    let row = matrix.row(q);
    order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    order.truncate(top);
    let (pad, gap, border) = (4, 12, 3);
    let cell_w = w + 2 * pad;
    let width = cell_w * (order.len() + 1) + gap;
    let mut canvas = Image::filled(h + 2 * pad, width, 3, 1.0);
    blit(&mut canvas, &tile(query, protocol.interpolation, h, w)?, pad, pad);
    outline(&mut canvas, pad, pad, h, w, [0.1, 0.3, 0.9], border);
    for (i, &g) in order.iter().enumerate() {
        let rec = &protocol.gallery[g];
        let left = cell_w * (i + 1) + gap + pad;
        blit(&mut canvas, &tile(rec, protocol.interpolation, h, w)?, pad, left);
        if rec.identity == query.identity {
            outline(&mut canvas, pad, left, h, w, [0.1, 0.8, 0.1], border);
        }
    }
    Ok(canvas)
}

pub fn run(args: PlotArgs) -> CliResult<()> {
    let mut cfg: PlotConfig = config::load(args.config.as_deref())?;
    overlay!(cfg, args: report, out, protocol, matrix, strips, top);
    let report_path = require(&cfg.report, "report")?;
    let out = require(&cfg.out, "out")?;
    config::echo(&cfg, &out.join("plot.config.toml"))?;
    let report = EvalReport::read_json(&report_path)?;
    config::write_bytes(&out.join("cmc.svg"), cmc_svg(&report).as_bytes())?;
    config::write_bytes(&out.join("splits.svg"), splits_svg(&report).as_bytes())?;
    match (&cfg.protocol, &cfg.matrix) {
        (None, None) => Ok(()),
        (Some(p), Some(m)) => write_strips(&cfg, p, m, &out),
        _ => Err(CliError::Usage("--protocol and --matrix go together".into())),
    }
}

fn write_strips(cfg: &PlotConfig, protocol: &Path, matrix: &Path, out: &Path) -> CliResult<()> {
    let protocol = EvalProtocol::read(protocol)?;
    let matrix = DistanceMatrix::read(matrix)?;
    if matrix.role == MatrixRole::Resolution {
        return Err(CliError::Usage("strips rank by distance; pass a D_f or fused matrix".into()));
    }
    if matrix.query_ids != protocol.query_ids() || matrix.gallery_ids != protocol.gallery_ids() {
        return Err(Error::Malformed("matrix ids do not follow the protocol's query and gallery order".into()).into());
    }
    for q in 0..cfg.strips.min(matrix.rows()) {
        let strip = ranked_strip(&protocol, &matrix, q, cfg.top, cfg.tile_height, cfg.tile_width)?;
        save_image(&strip, &out.join(format!("strip_{q}.png")))?;
    }
    Ok(())
}
