use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cost::{cheapest, expected_cost, CostParams};
use super::roc::{auroc, roc_points, RocPoint};
use super::vehicle::{group_by_vehicle, vehicle_scores, Aggregator};
use crate::error::{Error, Result};

pub const COST_CONVENTION: &str = "minimum expected direct cost over all ROC operating points";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub negative: usize,
    pub positive: usize,
}

impl ClassCounts {
    pub fn of(labels: impl IntoIterator<Item = u8>) -> Self {
        let mut c = Self::default();
        for l in labels {
            if l == 1 {
                c.positive += 1;
            } else {
                c.negative += 1;
            }
        }
        c
    }
}

/// A classifier score for one held-out snippet.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSnippet {
    pub vehicle_id: String,
    pub score: f64,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub snippet_auroc: f64,
    pub vehicle_auroc: f64,
    pub aggregator: Aggregator,
    /// Vehicle-level sweep.
    pub roc_points: Vec<RocPoint>,
    pub min_expected_cost: f64,
    #[serde(with = "super::roc::threshold_serde")]
    pub min_cost_threshold: f64,
    pub min_cost_point: RocPoint,
    pub cost_convention: String,
    pub cost_params: CostParams,
    pub snippet_counts: ClassCounts,
    pub vehicle_counts: ClassCounts,
    pub seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
}

impl EvaluationReport {
    /// Scores snippets and vehicles and finds the cheapest vehicle-level
    /// operating point. `seeds` and `config` start empty.
    pub fn evaluate(snippets: &[ScoredSnippet], agg: Aggregator, cost: &CostParams) -> Result<Self> {
        cost.validate()?;
        let scores: Vec<f64> = snippets.iter().map(|s| s.score).collect();
        let labels: Vec<u8> = snippets.iter().map(|s| s.label).collect();
        let snippet_auroc = auroc(&scores, &labels)?;

        let mut vehicle_label: BTreeMap<&str, u8> = BTreeMap::new();
        for s in snippets {
            if *vehicle_label.entry(&s.vehicle_id).or_insert(s.label) != s.label {
                return Err(Error::Data(format!("vehicle {} has mixed labels", s.vehicle_id)));
            }
        }
        let groups = group_by_vehicle(snippets.iter().map(|s| (s.vehicle_id.as_str(), s.score)));
        let per_vehicle = vehicle_scores(&groups, agg)?;
        let v_scores: Vec<f64> = per_vehicle.iter().map(|(_, s)| *s).collect();
        let v_labels: Vec<u8> = per_vehicle.iter().map(|(v, _)| vehicle_label[v.as_str()]).collect();
        let vehicle_auroc = auroc(&v_scores, &v_labels)?;
        let roc = roc_points(&v_scores, &v_labels)?;
        let best = cheapest(&roc, cost);

        Ok(Self {
            snippet_auroc,
            vehicle_auroc,
            aggregator: agg,
            roc_points: roc,
            min_expected_cost: best.cost,
            min_cost_threshold: best.point.threshold,
            min_cost_point: best.point,
            cost_convention: COST_CONVENTION.to_string(),
            cost_params: *cost,
            snippet_counts: ClassCounts::of(labels),
            vehicle_counts: ClassCounts::of(v_labels),
            seeds: BTreeMap::new(),
            config: serde_json::Value::Null,
        })
    }
}

/// One projected point for `tsne.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneRow {
    pub x: f64,
    pub y: f64,
    pub vehicle_id: String,
    pub label: u8,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

/// Writes `report.json`, `roc.csv` and `roc.svg` into `out_dir`.
pub fn emit_report(report: &EvaluationReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = out_dir.join("report.json");
    let mut text = serde_json::to_string_pretty(report).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    text.push('\n');
    write(&json, &text)?;
    let csv = out_dir.join("roc.csv");
    write_roc_csv(&csv, &report.roc_points, &report.cost_params)?;
    let svg = out_dir.join("roc.svg");
    write(&svg, &roc_svg(&report.roc_points))?;
    Ok(vec![json, csv, svg])
}

pub fn write_roc_csv(path: &Path, points: &[RocPoint], cost: &CostParams) -> Result<()> {
    let mut out = String::from("threshold,q_tp,q_fp,expected_cost_cny\n");
    for p in points {
        let c = expected_cost(cost, p.q_tp, p.q_fp);
        writeln!(out, "{},{},{},{}", p.threshold, p.q_tp, p.q_fp, c).expect("string write");
    }
    write(path, &out)
}

pub fn read_roc_csv(path: &Path) -> Result<Vec<RocPoint>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["threshold", "q_tp", "q_fp", "expected_cost_cny"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("unexpected header {headers:?}"),
        });
    }
    let mut pts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("bad number {:?}", &rec[i]),
            })
        };
        pts.push(RocPoint {
            threshold: num(0)?,
            q_tp: num(1)?,
            q_fp: num(2)?,
        });
    }
    Ok(pts)
}

pub fn write_tsne_csv(path: &Path, rows: &[TsneRow]) -> Result<()> {
    let mut out = String::from("x,y,vehicle_id,label\n");
    for r in rows {
        if r.vehicle_id.contains([',', '"', '\n']) {
            return Err(Error::InvalidArgument(format!("vehicle id {:?} needs quoting", r.vehicle_id)));
        }
        writeln!(out, "{},{},{},{}", r.x, r.y, r.vehicle_id, r.label).expect("string write");
    }
    write(path, &out)
}

pub fn read_tsne_csv(path: &Path) -> Result<Vec<TsneRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    rdr.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const SIZE: f64 = 400.0;
const PAD: f64 = 40.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}">"#,
        w = SIZE + 2.0 * PAD
    )
    .unwrap();
    writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    writeln!(
        s,
        r##"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#444444"/>"##
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        PAD + SIZE / 2.0,
        PAD / 2.0 + 5.0
    )
    .unwrap();
    s
}

/// ROC curve with the chance diagonal.
pub fn roc_svg(points: &[RocPoint]) -> String {
    let mut s = svg_open("ROC");
    let px = |q: f64| PAD + q * SIZE;
    let py = |q: f64| PAD + (1.0 - q) * SIZE;
    writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#aaaaaa" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    )
    .unwrap();
    let path: Vec<String> = points
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.q_fp), py(p.q_tp)))
        .collect();
    writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        path.join(" ")
    )
    .unwrap();
    for (x, y, t) in [(PAD + SIZE / 2.0, PAD + SIZE + 28.0, "q_fp"), (12.0, PAD + SIZE / 2.0, "q_tp")] {
        writeln!(s, r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="12">{t}</text>"#).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Scatter of projected points, one color per vehicle in order of first
/// appearance (cycling through a fixed palette).
pub fn scatter_svg(rows: &[TsneRow], title: &str) -> String {
    let mut s = svg_open(title);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in rows {
        x0 = x0.min(r.x);
        x1 = x1.max(r.x);
        y0 = y0.min(r.y);
        y1 = y1.max(r.y);
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let (sx, sy) = (span(x0, x1), span(y0, y1));
    let mut colors: BTreeMap<&str, usize> = BTreeMap::new();
    let mut next = 0;
    for r in rows {
        let c = *colors.entry(&r.vehicle_id).or_insert_with(|| {
            next += 1;
            next - 1
        });
        let cx = PAD + 5.0 + (r.x - x0) / sx * (SIZE - 10.0);
        let cy = PAD + 5.0 + (1.0 - (r.y - y0) / sy) * (SIZE - 10.0);
        let shape = if r.label == 1 { r##" stroke="#000000""## } else { "" };
        writeln!(
            s,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{}"{shape}/>"#,
            PALETTE[c % PALETTE.len()]
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `{stem}.csv` and `{stem}.svg` into `out_dir`.
pub fn emit_tsne(rows: &[TsneRow], out_dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join(format!("{stem}.csv"));
    write_tsne_csv(&csv, rows)?;
    let svg = out_dir.join(format!("{stem}.svg"));
    write(&svg, &scatter_svg(rows, stem))?;
    Ok(vec![csv, svg])
}
