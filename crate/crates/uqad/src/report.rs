//! Reporting: summary tables and plot data from persisted results.
//!
//! Everything here consumes the results CSV and the stored posterior; no
//! training happens during reporting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anova::{AnovaResult, EffectDifference, ParamSummary};
use crate::candidates::Variant;
use crate::data::Protocol;
use crate::pipeline::{successful_rows, ResultRow};
use crate::{Error, Result};

/// Mean and population standard deviation of one table cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellStat {
    pub dataset: String,
    pub protocol: Protocol,
    pub variant: Variant,
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub formatted: String,
}

/// "0.990 (0.002)" style formatting used by the accuracy table.
pub fn format_mean_sd(mean: f64, sd: f64) -> String {
    format!("{mean:.3} ({sd:.3})")
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Five-number summary (type-7 quartiles) for boxplot data.
#[derive(Debug, Clone, Serialize)]
pub struct FiveNumber {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn five_number(values: &[f64]) -> Result<FiveNumber> {
    if values.is_empty() {
        return Err(Error::DegenerateData("empty cell".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(FiveNumber {
        n: s.len(),
        min: s[0],
        q1: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        q3: quantile(&s, 0.75),
        max: s[s.len() - 1],
    })
}

fn cells(rows: &[&ResultRow]) -> Vec<(Protocol, Variant)> {
    let mut protocols: Vec<Protocol> = Vec::new();
    let mut variants: Vec<Variant> = Vec::new();
    for &p in &[Protocol::Blind, Protocol::Calibrated] {
        if rows.iter().any(|r| r.protocol == p) {
            protocols.push(p);
        }
    }
    for &v in Variant::ALL.iter() {
        if rows.iter().any(|r| r.variant == v) {
            variants.push(v);
        }
    }
    protocols
        .into_iter()
        .flat_map(|p| variants.iter().map(move |&v| (p, v)))
        .collect()
}

fn cell_values<F: Fn(&ResultRow) -> Option<f64>>(
    rows: &[&ResultRow],
    protocol: Protocol,
    variant: Variant,
    f: F,
) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.protocol == protocol && r.variant == variant)
        .filter_map(|r| f(r))
        .collect()
}

/// Accuracy table, mean with population sd in parentheses per cell. Empty
/// cells are reported as missing.
pub fn accuracy_table(rows: &[&ResultRow]) -> Vec<CellStat> {
    cells(rows)
        .into_iter()
        .map(|(protocol, variant)| {
            let vals = cell_values(rows, protocol, variant, |r| r.accuracy);
            if vals.is_empty() {
                CellStat {
                    dataset: "MNIST".into(),
                    protocol,
                    variant,
                    n: 0,
                    mean: None,
                    sd: None,
                    formatted: "missing".into(),
                }
            } else {
                let (mean, sd) = mean_sd(&vals);
                CellStat {
                    dataset: "MNIST".into(),
                    protocol,
                    variant,
                    n: vals.len(),
                    mean: Some(mean),
                    sd: Some(sd),
                    formatted: format_mean_sd(mean, sd),
                }
            }
        })
        .collect()
}

/// Stored ANOVA artifacts (written by the `anova` subcommand, read by
/// `report`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnovaArtifacts {
    pub converged: bool,
    pub mean_acceptance: f64,
    pub summaries: Vec<ParamSummary>,
    pub differences: Vec<EffectDifference>,
}

pub fn anova_json_path(out_dir: &Path) -> PathBuf {
    out_dir.join("anova.json")
}

/// Persist sampler output: summary and difference CSVs, pooled draws for
/// density plots, and a JSON snapshot for the report step.
pub fn write_anova_outputs(out_dir: &Path, result: &AnovaResult) -> Result<AnovaArtifacts> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let artifacts = AnovaArtifacts {
        converged: result.converged,
        mean_acceptance: result.mean_acceptance,
        summaries: result.summaries.clone(),
        differences: result.differences.clone(),
    };
    let json = anova_json_path(out_dir);
    std::fs::write(
        &json,
        serde_json::to_string_pretty(&artifacts).expect("artifacts serialize"),
    )
    .map_err(|e| Error::io(&json, e))?;

    let path = out_dir.join("anova_summary.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Error::Results(format!("{}: {e}", path.display())))?;
    for s in &result.summaries {
        w.serialize(s)
            .map_err(|e| Error::Results(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join("anova_differences.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Error::Results(format!("{}: {e}", path.display())))?;
    for d in &result.differences {
        w.serialize(d)
            .map_err(|e| Error::Results(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    // Pooled draws, capped so plot data stays small.
    let path = out_dir.join("posterior_draws.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Error::Results(format!("{}: {e}", path.display())))?;
    w.write_record(["parameter", "draw"])
        .map_err(|e| Error::Results(e.to_string()))?;
    const MAX_DRAWS: usize = 4000;
    for (j, name) in result.param_names.iter().enumerate() {
        let pooled = result.pooled(j);
        let stride = (pooled.len() / MAX_DRAWS).max(1);
        for v in pooled.iter().step_by(stride) {
            w.write_record([name.as_str(), &format!("{v}")])
                .map_err(|e| Error::Results(e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let svg = out_dir.join("posterior_densities.svg");
    let mut panels = Vec::new();
    for d in &result.differences {
        let draws: Vec<f64> = result
            .chains
            .iter()
            .flat_map(|c| {
                let names = &result.param_names;
                let a = names
                    .iter()
                    .position(|n| *n == format!("theta[{}]", d.a))
                    .unwrap();
                let b = names
                    .iter()
                    .position(|n| *n == format!("theta[{}]", d.b))
                    .unwrap();
                c.column(a)
                    .iter()
                    .zip(c.column(b).iter())
                    .map(|(x, y)| x - y)
                    .collect::<Vec<_>>()
            })
            .collect();
        panels.push((format!("{} - {}", d.a, d.b), draws));
    }
    std::fs::write(&svg, render_density_svg(&panels)).map_err(|e| Error::io(&svg, e))?;
    Ok(artifacts)
}

/// Write the full report: accuracy table, AUC boxplot data, ANOVA tables if
/// available, and SVG renderings. Returns the written paths.
pub fn write_report(
    out_dir: &Path,
    rows: &[ResultRow],
    anova: Option<&AnovaArtifacts>,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ok = successful_rows(rows);
    if ok.is_empty() {
        return Err(Error::DegenerateData("no successful rows to report".into()));
    }
    let mut written = Vec::new();

    let path = out_dir.join("accuracy_table.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Error::Results(format!("{}: {e}", path.display())))?;
    for cell in accuracy_table(&ok) {
        w.serialize(&cell)
            .map_err(|e| Error::Results(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = out_dir.join("auc_summary.csv");
    let mut w = csv::Writer::from_path(&path)
        .map_err(|e| Error::Results(format!("{}: {e}", path.display())))?;
    w.write_record([
        "dataset", "protocol", "variant", "n", "min", "q1", "median", "q3", "max",
    ])
    .map_err(|e| Error::Results(e.to_string()))?;
    let mut boxes = Vec::new();
    for (protocol, variant) in cells(&ok) {
        let vals = cell_values(&ok, protocol, variant, |r| r.auc);
        if vals.is_empty() {
            w.write_record([
                "MNIST",
                &protocol.to_string(),
                &variant.to_string(),
                "0",
                "", "", "", "", "",
            ])
            .map_err(|e| Error::Results(e.to_string()))?;
            continue;
        }
        let f = five_number(&vals)?;
        w.write_record([
            "MNIST",
            &protocol.to_string(),
            &variant.to_string(),
            &f.n.to_string(),
            &format!("{}", f.min),
            &format!("{}", f.q1),
            &format!("{}", f.median),
            &format!("{}", f.q3),
            &format!("{}", f.max),
        ])
        .map_err(|e| Error::Results(e.to_string()))?;
        boxes.push((format!("{protocol}/{variant}"), f));
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = out_dir.join("auc_boxplot.svg");
    std::fs::write(&path, render_boxplot_svg(&boxes)).map_err(|e| Error::io(&path, e))?;
    written.push(path);

    if let Some(a) = anova {
        let path = out_dir.join("report_anova.csv");
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| Error::Results(format!("{}: {e}", path.display())))?;
        for d in &a.differences {
            w.serialize(d)
                .map_err(|e| Error::Results(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

const SVG_W: f64 = 720.0;
const SVG_H: f64 = 360.0;

/// Minimal boxplot rendering from five-number summaries.
pub fn render_boxplot_svg(boxes: &[(String, FiveNumber)]) -> String {
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    );
    if boxes.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let lo = boxes.iter().map(|(_, f)| f.min).fold(f64::INFINITY, f64::min);
    let hi = boxes
        .iter()
        .map(|(_, f)| f.max)
        .fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    let y = |v: f64| 30.0 + (SVG_H - 80.0) * (1.0 - (v - lo) / span);
    let slot = SVG_W / boxes.len() as f64;
    for (i, (label, f)) in boxes.iter().enumerate() {
        let cx = slot * (i as f64 + 0.5);
        let half = (slot * 0.3).min(40.0);
        out.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"black\"/>\n",
            y(f.min),
            y(f.max)
        ));
        out.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"white\" stroke=\"black\"/>\n",
            cx - half,
            y(f.q3),
            2.0 * half,
            (y(f.q1) - y(f.q3)).max(0.5)
        ));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"2\"/>\n",
            cx - half,
            y(f.median),
            cx + half,
            y(f.median)
        ));
        out.push_str(&format!(
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{label}</text>\n",
            SVG_H - 20.0
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram-polyline density sketches, one panel per named draw set, with a
/// zero reference line.
pub fn render_density_svg(panels: &[(String, Vec<f64>)]) -> String {
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" viewBox=\"0 0 {SVG_W} {SVG_H}\">\n"
    );
    let n_panels = panels.len().max(1);
    let panel_h = (SVG_H - 20.0) / n_panels as f64;
    for (pi, (label, draws)) in panels.iter().enumerate() {
        if draws.is_empty() {
            continue;
        }
        let top = 10.0 + pi as f64 * panel_h;
        let lo = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        const BINS: usize = 60;
        let mut counts = [0usize; BINS];
        for &v in draws {
            let b = (((v - lo) / span) * BINS as f64) as usize;
            counts[b.min(BINS - 1)] += 1;
        }
        let peak = *counts.iter().max().unwrap() as f64;
        let mut pts = Vec::with_capacity(BINS);
        for (b, &c) in counts.iter().enumerate() {
            let x = 40.0 + (SVG_W - 80.0) * (b as f64 + 0.5) / BINS as f64;
            let y = top + (panel_h - 30.0) * (1.0 - c as f64 / peak);
            pts.push(format!("{x:.1},{y:.1}"));
        }
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            pts.join(" ")
        ));
        if lo < 0.0 && hi > 0.0 {
            let zx = 40.0 + (SVG_W - 80.0) * (0.0 - lo) / span;
            out.push_str(&format!(
                "<line x1=\"{zx:.1}\" y1=\"{top:.1}\" x2=\"{zx:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n",
                top + panel_h - 30.0
            ));
        }
        out.push_str(&format!(
            "<text x=\"12\" y=\"{:.1}\" font-size=\"12\">{label}</text>\n",
            top + 14.0
        ));
    }
    out.push_str("</svg>\n");
    out
}
