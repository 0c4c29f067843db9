//! Output emission: results CSV, SVG plots, and the run manifest.
//!
//! Floats are printed with Rust's shortest round-trip formatting, so a
//! parsed CSV reproduces the records bit for bit, and equal configs yield
//! byte-identical files. Every emitted file carries the config hash.

use super::{EntropyHistogram, EvalRecord, ExperimentConfig, Method, RunArtifacts};
use crate::error::{Error, Result};
use plotters::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::str::FromStr;

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn fmt_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Format(e.to_string())
}

pub(crate) fn records_to_csv(records: &[EvalRecord], config_hash: &str) -> Result<String> {
    if records.is_empty() {
        return Err(Error::invalid("no records to emit"));
    }
    let n = records[0].confusion.len();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "method".to_string(),
        "snr_db".to_string(),
        "accuracy".to_string(),
        "total".to_string(),
    ];
    for t in 0..n {
        for p in 0..n {
            header.push(format!("c{t}_{p}"));
        }
    }
    wtr.write_record(&header).map_err(fmt_err)?;
    for rec in records {
        rec.validate()?;
        if rec.confusion.len() != n {
            return Err(Error::dims("records disagree on confusion size"));
        }
        let mut row = vec![
            rec.method.name().to_string(),
            format!("{}", rec.snr_db),
            format!("{}", rec.accuracy),
            rec.total.to_string(),
        ];
        for conf_row in &rec.confusion {
            for &cell in conf_row {
                row.push(cell.to_string());
            }
        }
        wtr.write_record(&row).map_err(fmt_err)?;
    }
    let body = String::from_utf8(wtr.into_inner().map_err(fmt_err)?).map_err(fmt_err)?;
    Ok(format!("# config {config_hash}\n{body}"))
}

/// Inverse of the CSV emitter; returns the embedded config hash and the
/// records, each revalidated.
pub fn parse_records_csv(text: &str) -> Result<(String, Vec<EvalRecord>)> {
    let (first, rest) = text
        .split_once('\n')
        .ok_or_else(|| Error::Format("empty results file".into()))?;
    let hash = first
        .strip_prefix("# config ")
        .ok_or_else(|| Error::Format("missing config hash line".into()))?
        .trim()
        .to_string();
    let mut rdr = csv::Reader::from_reader(rest.as_bytes());
    let headers = rdr.headers().map_err(fmt_err)?.clone();
    if headers.len() < 5 {
        return Err(Error::Format("results header is too short".into()));
    }
    let fixed = ["method", "snr_db", "accuracy", "total"];
    for (i, name) in fixed.iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(Error::Format(format!("unexpected results column {i}")));
        }
    }
    let cells = headers.len() - fixed.len();
    let n = (cells as f64).sqrt().round() as usize;
    if n * n != cells {
        return Err(Error::Format("confusion columns are not square".into()));
    }
    for t in 0..n {
        for p in 0..n {
            let idx = fixed.len() + t * n + p;
            if headers.get(idx) != Some(format!("c{t}_{p}").as_str()) {
                return Err(Error::Format(format!("unexpected results column {idx}")));
            }
        }
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(fmt_err)?;
        if row.len() != headers.len() {
            return Err(Error::Format("results row width mismatch".into()));
        }
        let method = Method::from_str(&row[0])?;
        let snr_db: f64 = row[1].parse().map_err(fmt_err)?;
        let accuracy: f64 = row[2].parse().map_err(fmt_err)?;
        let total: u64 = row[3].parse().map_err(fmt_err)?;
        let mut confusion = vec![vec![0u64; n]; n];
        for t in 0..n {
            for p in 0..n {
                confusion[t][p] = row[fixed.len() + t * n + p].parse().map_err(fmt_err)?;
            }
        }
        let rec = EvalRecord {
            method,
            snr_db,
            accuracy,
            confusion,
            total,
        };
        rec.validate()?;
        records.push(rec);
    }
    Ok((hash, records))
}

/// Accuracy-vs-SNR curves, one series per method, as an SVG string.
pub fn render_accuracy_plot(
    records: &[EvalRecord],
    eval_snapshots: usize,
    config_hash: &str,
) -> Result<String> {
    if records.is_empty() {
        return Err(Error::invalid("no records to plot"));
    }
    let mut methods: Vec<Method> = Vec::new();
    for rec in records {
        if !methods.contains(&rec.method) {
            methods.push(rec.method);
        }
    }
    let xs: Vec<f64> = records.iter().map(|r| r.snr_db).collect();
    let (mut x_min, mut x_max) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    if x_min == x_max {
        x_min -= 1.0;
        x_max += 1.0;
    }

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (900, 620)).into_drawing_area();
        root.fill(&WHITE).map_err(fmt_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(
                format!("Correct model-order rate vs SNR, T={eval_snapshots}"),
                ("sans-serif", 26),
            )
            .margin(14)
            .x_label_area_size(44)
            .y_label_area_size(54)
            .build_cartesian_2d(x_min..x_max, 0.0..1.0)
            .map_err(fmt_err)?;
        chart
            .configure_mesh()
            .x_desc("SNR (dB)")
            .y_desc("accuracy")
            .draw()
            .map_err(fmt_err)?;
        for (i, &method) in methods.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            let points: Vec<(f64, f64)> = records
                .iter()
                .filter(|r| r.method == method)
                .map(|r| (r.snr_db, r.accuracy))
                .collect();
            chart
                .draw_series(points.iter().map(|p| Circle::new(*p, 3, color.filled())))
                .map_err(fmt_err)?;
            chart
                .draw_series(LineSeries::new(points.iter().cloned(), color.stroke_width(2)))
                .map_err(fmt_err)?
                .label(method.name())
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
                });
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(fmt_err)?;
        root.present().map_err(fmt_err)?;
    }
    svg.push_str(&format!("\n<!-- config {config_hash} -->\n"));
    Ok(svg)
}

/// Per-order entropy histogram (orders 1..=L_max; order zero is excluded
/// from this view) as an SVG string.
pub(crate) fn render_entropy_plot(hist: &EntropyHistogram, config_hash: &str) -> Result<String> {
    let all: Vec<f64> = hist.per_mo.iter().flatten().cloned().collect();
    if all.is_empty() {
        return Err(Error::invalid("entropy histogram holds no values"));
    }
    let mut lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let bins = 36usize;
    let bin_w = (hi - lo) / bins as f64;
    let groups = hist.per_mo.len();
    let sub_w = bin_w / groups as f64;

    let mut fractions: Vec<Vec<f64>> = Vec::with_capacity(groups);
    for values in &hist.per_mo {
        let mut counts = vec![0usize; bins];
        for &v in values {
            let mut b = ((v - lo) / bin_w) as usize;
            if b >= bins {
                b = bins - 1;
            }
            counts[b] += 1;
        }
        let total = values.len().max(1) as f64;
        fractions.push(counts.iter().map(|&c| c as f64 / total).collect());
    }
    let y_max = fractions
        .iter()
        .flatten()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1e-6)
        * 1.15;

    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (900, 620)).into_drawing_area();
        root.fill(&WHITE).map_err(fmt_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(
                format!(
                    "Feature entropy by model order, {} at {} dB",
                    hist.method.name(),
                    hist.snr_db
                ),
                ("sans-serif", 26),
            )
            .margin(14)
            .x_label_area_size(44)
            .y_label_area_size(54)
            .build_cartesian_2d(lo..hi, 0.0..y_max)
            .map_err(fmt_err)?;
        chart
            .configure_mesh()
            .x_desc("entropy")
            .y_desc("fraction of samples")
            .draw()
            .map_err(fmt_err)?;
        for (k, fracs) in fractions.iter().enumerate() {
            let color = Palette99::pick(k).to_rgba();
            let boxes: Vec<Rectangle<(f64, f64)>> = fracs
                .iter()
                .enumerate()
                .filter(|(_, f)| **f > 0.0)
                .map(|(b, &f)| {
                    let x0 = lo + b as f64 * bin_w + k as f64 * sub_w;
                    Rectangle::new([(x0, 0.0), (x0 + sub_w, f)], color.mix(0.7).filled())
                })
                .collect();
            chart
                .draw_series(boxes)
                .map_err(fmt_err)?
                .label(format!("MO {}", k + 1))
                .legend(move |(x, y)| {
                    Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.mix(0.7).filled())
                });
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperRight)
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .draw()
            .map_err(fmt_err)?;
        root.present().map_err(fmt_err)?;
    }
    svg.push_str(&format!("\n<!-- config {config_hash} -->\n"));
    Ok(svg)
}

#[derive(Serialize)]
struct ManifestFile {
    name: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'static str,
    version: u32,
    config_hash: String,
    eval_snapshots: usize,
    config: &'a ExperimentConfig,
    files: Vec<ManifestFile>,
}

/// Write the results CSV, the plots, and a manifest that hashes them.
/// Returns the written paths, manifest last.
pub fn emit_outputs(artifacts: &RunArtifacts, config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    if artifacts.records.is_empty() {
        return Err(Error::invalid("no records to emit"));
    }
    let hash = config.config_hash();
    let t = config.scenario.eval_snapshots;
    std::fs::create_dir_all(&config.paths.out_dir)?;

    let mut written: Vec<(PathBuf, Vec<u8>)> = Vec::new();
    let csv_text = records_to_csv(&artifacts.records, &hash)?;
    written.push((config.csv_path(), csv_text.into_bytes()));
    let acc_svg = render_accuracy_plot(&artifacts.records, t, &hash)?;
    written.push((config.accuracy_plot_path(), acc_svg.into_bytes()));
    if let Some(hist) = &artifacts.entropy_histogram {
        let hist_svg = render_entropy_plot(hist, &hash)?;
        written.push((config.entropy_plot_path(), hist_svg.into_bytes()));
    }

    let mut files = Vec::new();
    for (path, bytes) in &written {
        std::fs::write(path, bytes)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        files.push(ManifestFile {
            name,
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = Manifest {
        format: "moselect-manifest",
        version: 1,
        config_hash: hash,
        eval_snapshots: t,
        config,
        files,
    };
    let manifest_text = format!("{}\n", serde_json::to_string_pretty(&manifest)?);
    let manifest_path = config.manifest_path();
    std::fs::write(&manifest_path, manifest_text)?;

    let mut paths: Vec<PathBuf> = written.into_iter().map(|(p, _)| p).collect();
    paths.push(manifest_path);
    Ok(paths)
}
