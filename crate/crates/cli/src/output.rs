//! Artifact writers: atomic file output, CSV rows and SVG plots.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sega_core::{ConceptQuery, MixtureScene};

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("moving output into {}", path.display()))?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(path.to_path_buf())
}

/// `seed,sample_index,x_0..x_{d-1},post_<label>...`, one row per sample.
pub fn samples_csv(
    scene: &MixtureScene,
    seeds: &[u64],
    samples: &[Vec<f64>],
    tracked: &[ConceptQuery],
) -> String {
    let mut out = String::from("seed,sample_index");
    for i in 0..scene.dim() {
        let _ = write!(out, ",x_{i}");
    }
    for q in tracked {
        let _ = write!(out, ",post_{}", q.label());
    }
    out.push('\n');
    for (i, (seed, x)) in seeds.iter().zip(samples).enumerate() {
        let _ = write!(out, "{seed},{i}");
        for v in x {
            let _ = write!(out, ",{v}");
        }
        for q in tracked {
            let _ = write!(out, ",{}", scene.posterior_tag_probability(x, q));
        }
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;

struct Frame {
    lo: (f64, f64),
    hi: (f64, f64),
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            lo = (lo.0.min(x), lo.1.min(y));
            hi = (hi.0.max(x), hi.1.max(y));
        }
        let pad = |a: f64, b: f64| {
            let span = (b - a).max(1e-9);
            (a - 0.05 * span, b + 0.05 * span)
        };
        let (x0, x1) = pad(lo.0, hi.0);
        let (y0, y1) = pad(lo.1, hi.1);
        Self {
            lo: (x0, y0),
            hi: (x1, y1),
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let w = SIZE - 2.0 * MARGIN;
        (
            MARGIN + (x - self.lo.0) / (self.hi.0 - self.lo.0) * w,
            SIZE - MARGIN - (y - self.lo.1) / (self.hi.1 - self.lo.1) * w,
        )
    }

    fn axes(&self, svg: &mut String, x_label: &str, y_label: &str) {
        let (l, r, t, b) = (MARGIN, SIZE - MARGIN, MARGIN, SIZE - MARGIN);
        let _ = writeln!(
            svg,
            r##"<rect x="{l}" y="{t}" width="{w}" height="{w}" fill="none" stroke="#444"/>"##,
            w = r - l
        );
        let _ = writeln!(
            svg,
            r#"<text x="{l}" y="{y}" font-size="10">{:.2}</text><text x="{x}" y="{y}" font-size="10" text-anchor="end">{:.2}</text>"#,
            self.lo.0,
            self.hi.0,
            y = b + 14.0,
            x = r
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{b}" font-size="10" text-anchor="end">{:.2}</text><text x="{x}" y="{ty}" font-size="10" text-anchor="end">{:.2}</text>"#,
            self.lo.1,
            self.hi.1,
            x = l - 4.0,
            ty = t + 10.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{cx}" y="{y}" font-size="12" text-anchor="middle">{x_label}</text><text x="12" y="{cy}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {cy})">{y_label}</text>"#,
            cx = SIZE / 2.0,
            y = SIZE - 8.0,
            cy = SIZE / 2.0
        );
    }
}

fn open(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{x}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
        escape(title),
        x = SIZE / 2.0
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scatter of final samples, colored by argmax component, with component
/// means marked and labelled. One-dimensional scenes are drawn against the
/// sample index.
pub fn scatter_svg(scene: &MixtureScene, samples: &[Vec<f64>], title: &str) -> String {
    let two_d = scene.dim() >= 2;
    let coord = |i: usize, x: &[f64]| if two_d { (x[0], x[1]) } else { (x[0], i as f64) };
    let means: Vec<(f64, f64)> = scene
        .components()
        .iter()
        .map(|c| if two_d { (c.mean[0], c.mean[1]) } else { (c.mean[0], 0.0) })
        .collect();
    let frame = Frame::fit(
        samples
            .iter()
            .enumerate()
            .map(|(i, x)| coord(i, x))
            .chain(means.iter().copied()),
    );
    let mut svg = String::new();
    open(&mut svg, title);
    frame.axes(&mut svg, "x_0", if two_d { "x_1" } else { "sample" });
    for (i, x) in samples.iter().enumerate() {
        let (px, py) = frame.map(coord(i, x).0, coord(i, x).1);
        let k = scene.argmax_component(x);
        let _ = writeln!(
            svg,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="2.5" fill="{}" fill-opacity="0.6"/>"#,
            PALETTE[k % PALETTE.len()]
        );
    }
    for (c, &(mx, my)) in scene.components().iter().zip(&means) {
        let (px, py) = frame.map(mx, my);
        let _ = writeln!(
            svg,
            r#"<path d="M{a:.2} {py:.2}H{b:.2}M{px:.2} {c0:.2}V{c1:.2}" stroke="black" stroke-width="2"/>"#,
            a = px - 6.0,
            b = px + 6.0,
            c0 = py - 6.0,
            c1 = py + 6.0
        );
        let label = c.tags.iter().cloned().collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="11">{}</text>"#,
            escape(&label),
            x = px + 8.0,
            y = py - 8.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean posterior against `s_e`, with ±1 standard-error bars.
pub fn sweep_svg(points: &[(f64, f64, f64)], title: &str) -> String {
    let frame = Frame::fit(
        points
            .iter()
            .flat_map(|&(x, m, se)| [(x, m - se), (x, m + se)])
            .chain([(points[0].0, 0.0), (points[0].0, 1.0)]),
    );
    let mut svg = String::new();
    open(&mut svg, title);
    frame.axes(&mut svg, "s_e", "mean posterior");
    let path: Vec<String> = points
        .iter()
        .enumerate()
        .map(|(i, &(x, m, _))| {
            let (px, py) = frame.map(x, m);
            format!("{}{px:.2} {py:.2}", if i == 0 { "M" } else { "L" })
        })
        .collect();
    let _ = writeln!(
        svg,
        r##"<path d="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        path.join("")
    );
    for &(x, m, se) in points {
        let (px, py) = frame.map(x, m);
        let (_, top) = frame.map(x, m + se);
        let (_, bottom) = frame.map(x, m - se);
        let _ = writeln!(
            svg,
            r##"<path d="M{px:.2} {top:.2}V{bottom:.2}" stroke="#1f77b4"/><circle cx="{px:.2}" cy="{py:.2}" r="3.5" fill="#1f77b4"/>"##
        );
    }
    svg.push_str("</svg>\n");
    svg
}
