//! Deterministic SVG output: heatmaps for fields and line plots for curves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::domain::ScalarField;
use crate::error::Result;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 56.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub enum Plot {
    Heatmap {
        name: String,
        title: String,
        field: ScalarField,
    },
    Lines {
        name: String,
        title: String,
        x_label: String,
        y_label: String,
        log_x: bool,
        log_y: bool,
        series: Vec<Series>,
        annotation: Option<String>,
    },
}

impl Plot {
    pub fn name(&self) -> &str {
        match self {
            Plot::Heatmap { name, .. } | Plot::Lines { name, .. } => name,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Plot::Heatmap { title, field, .. } => heatmap(title, field),
            Plot::Lines {
                title,
                x_label,
                y_label,
                log_x,
                log_y,
                series,
                annotation,
                ..
            } => lines(title, x_label, y_label, *log_x, *log_y, series, annotation.as_deref()),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

/// Blue-white-red for signed data, white-to-red otherwise.
fn color(t: f64, signed: bool) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if signed {
        if t < 0.5 {
            let a = t / 0.5;
            (a, a, 1.0)
        } else {
            let a = (1.0 - t) / 0.5;
            (1.0, a, a)
        }
    } else {
        (1.0, 1.0 - t, 1.0 - t)
    };
    format!("#{:02x}{:02x}{:02x}", (r * 255.0).round() as u8, (g * 255.0).round() as u8, (b * 255.0).round() as u8)
}

pub fn heatmap(title: &str, field: &ScalarField) -> String {
    let g = field.grid;
    let (lo, hi) = (field.min(), field.max());
    let signed = lo < 0.0 && hi > 0.0;
    let (lo, hi) = if signed {
        let m = lo.abs().max(hi.abs());
        (-m, m)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    };
    let side = (H - 2.0 * MARGIN).min(W - 3.0 * MARGIN);
    let (cw, ch) = (side / g.nx as f64, side / g.ny as f64);
    let mut out = String::new();
    header(&mut out, title);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let v = field.values[g.idx(i, j)];
            let x = MARGIN + i as f64 * cw;
            let y = MARGIN + side - (j + 1) as f64 * ch;
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                cw + 0.05,
                ch + 0.05,
                color((v - lo) / (hi - lo), signed)
            );
        }
    }
    let bx = MARGIN + side + 16.0;
    let steps = 32;
    for s in 0..steps {
        let t = s as f64 / (steps - 1) as f64;
        let y = MARGIN + side * (1.0 - (s + 1) as f64 / steps as f64);
        let _ = writeln!(
            out,
            r#"<rect x="{bx:.2}" y="{y:.2}" width="14" height="{:.2}" fill="{}"/>"#,
            side / steps as f64 + 0.05,
            color(t, signed)
        );
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{:.3e}</text>"#, bx + 18.0, MARGIN + 4.0, hi);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{:.3e}</text>"#, bx + 18.0, MARGIN + side, lo);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{side:.2}" height="{side:.2}" fill="none" stroke="black"/>"#
    );
    out.push_str("</svg>\n");
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn lines(
    title: &str,
    x_label: &str,
    y_label: &str,
    log_x: bool,
    log_y: bool,
    series: &[Series],
    annotation: Option<&str>,
) -> String {
    let tx = |v: f64| if log_x { v.log10() } else { v };
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.points
                .iter()
                .filter(|p| (!log_x || p.0 > 0.0) && (!log_y || p.1 > 0.0))
                .map(|&(x, y)| (tx(x), ty(y)))
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MARGIN + ph - (y - y0) / (y1 - y0) * ph;
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for s in 0..=4 {
        let f = s as f64 / 4.0;
        let (vx, vy) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let lx = if log_x { format!("1e{vx:.2}") } else { format!("{vx:.3}") };
        let ly = if log_y { format!("1e{vy:.2}") } else { format!("{vy:.3}") };
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{lx}</text>"#,
            px(vx),
            MARGIN + ph + 14.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{ly}</text>"#,
            MARGIN - 4.0,
            py(vy) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN + pw / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        MARGIN + ph / 2.0,
        MARGIN + ph / 2.0,
        escape(y_label)
    );
    for (idx, (s, p)) in series.iter().zip(&pts).enumerate() {
        let c = PALETTE[idx % PALETTE.len()];
        let d: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        if !d.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
                d.join(" ")
            );
        }
        for &(x, y) in p.iter().filter(|_| p.len() <= 40) {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{c}"/>"#, px(x), py(y));
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{c}">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 14.0 * (idx + 1) as f64,
            escape(&s.label)
        );
    }
    if let Some(a) = annotation {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN + pw - 6.0,
            MARGIN + ph - 8.0,
            escape(a)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Write one `<name>.svg` per plot into `dir`. An empty list writes nothing.
pub fn emit_plots(dir: &Path, plots: &[Plot]) -> Result<Vec<PathBuf>> {
    if plots.is_empty() {
        log::warn!("no plots to emit");
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(plots.len());
    for p in plots {
        let path = dir.join(format!("{}.svg", p.name()));
        fs::write(&path, p.render())?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Grid2D;

    #[test]
    fn rendering_is_deterministic() {
        let g = Grid2D::unit_pi(5).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (x - y).sin());
        let p = Plot::Heatmap {
            name: "f".into(),
            title: "f".into(),
            field: f,
        };
        assert_eq!(p.render(), p.render());
        let l = Plot::Lines {
            name: "d".into(),
            title: "decay".into(),
            x_label: "k".into(),
            y_label: "|z|".into(),
            log_x: true,
            log_y: true,
            series: vec![Series {
                label: "z".into(),
                points: vec![(1e2, 1e-1), (1e4, 1e-2), (1e6, 1e-3)],
            }],
            annotation: Some("slope -0.50".into()),
        };
        let s = l.render();
        assert!(s.contains("slope -0.50") && s.contains("polyline"));
    }

    #[test]
    fn empty_list_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plots(dir.path(), &[]).unwrap().is_empty());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
