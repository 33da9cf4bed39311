//! Rate-accuracy plots (SVG with the plotted data in `<metadata>`) and the
//! post-processed minus encoded mAP gap table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use vcm_core::metrics::{build_rate_curve, CurveLabel, RateCurve, RatePoint};

use crate::error::{IoContext, Result, VcmError};
use crate::evaluate::MetricsRow;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn color(i: usize) -> &'static str {
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"][i % 5]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if (hi - lo).abs() < 1e-12 {
        let pad = if lo.abs() < 1e-12 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    } else {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    }
}

/// Deterministic line plot; the same input always yields the same bytes.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let fold = |f: fn(&(f64, f64)) -> f64| {
        all.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    };
    let (x0, x1) = if all.is_empty() { (0.0, 1.0) } else { nice_range(fold(|p| p.0).0, fold(|p| p.0).1) };
    let (y0, y1) = if all.is_empty() { (0.0, 1.0) } else { nice_range(fold(|p| p.1).0, fold(|p| p.1).1) };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<metadata>");
    let _ = writeln!(s, "series,x,y");
    for se in series {
        for (x, y) in &se.points {
            let _ = writeln!(s, "{},{x:.6},{y:.6}", escape(&se.name));
        }
    }
    let _ = writeln!(s, "</metadata>");
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.1}</text>"##,
            sx(xv),
            TOP + ph + 18.0
        );
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.2}</text>"##,
            LEFT - 6.0,
            sy(yv) + 4.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
            sy(yv),
            LEFT + pw,
            sy(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, se) in series.iter().enumerate() {
        let c = color(i);
        if se.points.len() > 1 {
            let pts: Vec<String> = se
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        for &(x, y) in &se.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{c}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{:.1}" width="12" height="12" fill="{c}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            LEFT + pw + 12.0,
            ly,
            LEFT + pw + 30.0,
            ly + 10.0,
            escape(&se.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn rate_points(rows: &[&MetricsRow]) -> Result<Vec<RateCurve>> {
    let points = rows
        .iter()
        .map(|r| RatePoint {
            label: r.label,
            qp: r.qp,
            bitrate_kbps: r.kbps,
            map_value: r.map.unwrap_or(0.0),
            per_class_ap: r.ap.iter().filter_map(|(c, v)| v.map(|v| (*c, v))).collect(),
            f1: r.f1.iter().filter_map(|(c, v)| v.map(|v| (*c, v))).collect(),
        })
        .collect();
    Ok(build_rate_curve(points)?)
}

fn label_name(l: CurveLabel) -> &'static str {
    match l {
        CurveLabel::Encoded => "encoded",
        CurveLabel::Postprocessed => "post-processed",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub sequence: String,
    pub qp: u8,
    pub encoded: Option<f64>,
    pub postprocessed: Option<f64>,
}

impl GapRow {
    pub fn gap(&self) -> Option<f64> {
        Some(self.postprocessed? - self.encoded?)
    }
}

pub fn gap_rows(rows: &[MetricsRow]) -> Vec<GapRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut table: BTreeMap<(&str, u8), GapRow> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.sequence.as_str()) {
            order.push(&r.sequence);
        }
        let e = table.entry((&r.sequence, r.qp)).or_insert_with(|| GapRow {
            sequence: r.sequence.clone(),
            qp: r.qp,
            encoded: None,
            postprocessed: None,
        });
        match r.label {
            CurveLabel::Encoded => e.encoded = r.map,
            CurveLabel::Postprocessed => e.postprocessed = r.map,
        }
    }
    let mut out = Vec::new();
    for s in order {
        out.extend(table.range((s, 0)..=(s, u8::MAX)).map(|(_, v)| v.clone()));
    }
    out
}

fn fmt2(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_default()
}

fn signed(v: Option<f64>) -> String {
    v.map(|v| format!("{v:+.2}")).unwrap_or_default()
}

pub fn gap_csv(gaps: &[GapRow]) -> String {
    let mut s = String::from("sequence,qp,encoded_map,postprocessed_map,gap\n");
    for g in gaps {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            g.sequence,
            g.qp,
            fmt2(g.encoded),
            fmt2(g.postprocessed),
            signed(g.gap())
        );
    }
    s
}

/// One block per sequence: encoded, post-processed and gap rows across QPs.
pub fn gap_markdown(gaps: &[GapRow]) -> String {
    let qps: BTreeSet<u8> = gaps.iter().map(|g| g.qp).collect();
    let mut s = String::from("| sequence | method |");
    for q in &qps {
        let _ = write!(s, " QP {q} |");
    }
    s.push_str("\n|---|---|");
    for _ in &qps {
        s.push_str("---:|");
    }
    s.push('\n');
    let mut seqs: Vec<&str> = Vec::new();
    for g in gaps {
        if !seqs.contains(&g.sequence.as_str()) {
            seqs.push(&g.sequence);
        }
    }
    for seq in seqs {
        let cell = |q: &u8, f: &dyn Fn(&GapRow) -> String| {
            gaps.iter()
                .find(|g| g.sequence == seq && g.qp == *q)
                .map(f)
                .unwrap_or_default()
        };
        for (name, f) in [
            ("encoded", &(|g: &GapRow| fmt2(g.encoded)) as &dyn Fn(&GapRow) -> String),
            ("post-processed", &|g: &GapRow| fmt2(g.postprocessed)),
            ("gap", &|g: &GapRow| signed(g.gap())),
        ] {
            let label = if name == "encoded" { seq } else { "" };
            let _ = write!(s, "| {label} | {name} |");
            for q in &qps {
                let _ = write!(s, " {} |", cell(q, f));
            }
            s.push('\n');
        }
    }
    s
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

/// Writes plots and gap tables into `out`; returns the written files.
pub fn write_report(rows: &[MetricsRow], out: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(VcmError::Usage("no metrics rows to report".into()));
    }
    std::fs::create_dir_all(out).at(out)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, body).at(&p)?;
        written.push(p);
        Ok(())
    };
    let mut seqs: Vec<&str> = Vec::new();
    for r in rows {
        if !seqs.contains(&r.sequence.as_str()) {
            seqs.push(&r.sequence);
        }
    }
    for seq in seqs {
        let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.sequence == seq).collect();
        let curves = rate_points(&mine)?;
        let classes: BTreeSet<u32> = mine.iter().flat_map(|r| r.ap.keys().copied()).collect();
        let series = |f: &dyn Fn(&RatePoint) -> Option<f64>| -> Vec<Series> {
            curves
                .iter()
                .map(|c| Series {
                    name: label_name(c.label).into(),
                    points: c
                        .points
                        .iter()
                        .filter_map(|p| f(p).map(|y| (p.bitrate_kbps, y)))
                        .collect(),
                })
                .collect()
        };
        let f = file_safe(seq);
        put(
            format!("{f}_rate_map.svg"),
            line_plot(&format!("{seq}: rate-mAP"), "bitrate (kbps)", "mAP", &series(&|p| Some(p.map_value))),
        )?;
        for c in &classes {
            put(
                format!("{f}_rate_ap_{c}.svg"),
                line_plot(
                    &format!("{seq}: rate-AP, class {c}"),
                    "bitrate (kbps)",
                    "AP",
                    &series(&|p| p.per_class_ap.get(c).copied()),
                ),
            )?;
            put(
                format!("{f}_rate_f1_{c}.svg"),
                line_plot(
                    &format!("{seq}: rate-F1, class {c}"),
                    "bitrate (kbps)",
                    "F1",
                    &series(&|p| p.f1.get(c).copied()),
                ),
            )?;
        }
    }
    let gaps = gap_rows(rows);
    put("gap_table.csv".into(), gap_csv(&gaps))?;
    put("gap_table.md".into(), gap_markdown(&gaps))?;
    Ok(written)
}
