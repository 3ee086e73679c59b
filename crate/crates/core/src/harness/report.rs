use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::HarnessError;
use crate::protocol::{RoundMetrics, METRICS_HEADER};

/// Rows of a metrics CSV, with the scheme column when present.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub scheme: Option<String>,
    pub rows: Vec<RoundMetrics>,
}

/// Parses both the protocol schema and the schema with a leading `scheme` column.
pub fn read_metrics_csv(input: impl Read) -> Result<MetricsFile, HarnessError> {
    let mut reader = csv::Reader::from_reader(input);
    let bad = |m: String| HarnessError::Config(format!("metrics csv: {m}"));
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let offset = usize::from(header.get(0) == Some("scheme"));
    let names: Vec<&str> = header.iter().skip(offset).collect();
    if names != METRICS_HEADER {
        return Err(bad(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut scheme = None;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let f = |c: usize| -> Result<f64, HarnessError> {
            rec[c + offset].parse().map_err(|_| bad(format!("line {line}: bad value in column {}", METRICS_HEADER[c])))
        };
        let u = |c: usize| -> Result<usize, HarnessError> {
            rec[c + offset].parse().map_err(|_| bad(format!("line {line}: bad value in column {}", METRICS_HEADER[c])))
        };
        if offset == 1 {
            match &scheme {
                None => scheme = Some(rec[0].to_string()),
                Some(s) if s != &rec[0] => return Err(bad(format!("line {line}: mixed schemes"))),
                Some(_) => {}
            }
        }
        rows.push(RoundMetrics {
            round: u(0)?,
            present_nodes: u(1)?,
            mean_acc: f(2)?,
            mean_loss: f(3)?,
            macro_f1: f(4)?,
            macro_precision: f(5)?,
            macro_recall: f(6)?,
            training: f(7)?,
            evaluation: f(8)?,
            communication: f(9)?,
            objective: f(10)?,
        });
    }
    Ok(MetricsFile { scheme, rows })
}

/// Summarized quantities of a run's final row; `rounds` is the cut-off.
pub const SUMMARY_METRICS: [&str; 8] = ["rounds", "mean_acc", "mean_loss", "macro_f1", "S", "Gamma", "C", "objective"];

fn summary_values(m: &RoundMetrics) -> [f64; 8] {
    [m.round as f64, m.mean_acc, m.mean_loss, m.macro_f1, m.training, m.evaluation, m.communication, m.objective]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: String,
    pub metric: &'static str,
    pub n: usize,
    pub mean: f64,
    /// Student-t half-width; NaN with fewer than two runs.
    pub half_width: f64,
    pub confidence: f64,
}

pub fn confidence_half_width(values: &[f64], confidence: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return 0.0;
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    t.inverse_cdf(0.5 + confidence / 2.0) * (var / n as f64).sqrt()
}

/// Groups final rows by scheme, in order of first appearance.
pub fn summarize(finals: &[(String, RoundMetrics)], confidence: f64) -> Vec<SummaryRow> {
    let mut schemes: Vec<&str> = Vec::new();
    for (s, _) in finals {
        if !schemes.contains(&s.as_str()) {
            schemes.push(s);
        }
    }
    let mut out = Vec::new();
    for scheme in schemes {
        let values: Vec<[f64; 8]> =
            finals.iter().filter(|(s, _)| s == scheme).map(|(_, m)| summary_values(m)).collect();
        for (j, metric) in SUMMARY_METRICS.iter().enumerate() {
            let col: Vec<f64> = values.iter().map(|v| v[j]).collect();
            out.push(SummaryRow {
                scheme: scheme.to_string(),
                metric,
                n: col.len(),
                mean: col.iter().sum::<f64>() / col.len() as f64,
                half_width: confidence_half_width(&col, confidence),
                confidence,
            });
        }
    }
    out
}

fn metrics_files(dir: &Path, found: &mut Vec<PathBuf>) -> std::io::Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            metrics_files(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == "metrics.csv") {
            found.push(p);
        }
    }
    Ok(())
}

/// Summarizes every `metrics.csv` below `dir`. A file without a scheme
/// column takes its scheme from the directory two levels up
/// (`<scheme>/seed-<n>/metrics.csv`).
pub fn summarize_dir(dir: &Path, confidence: f64) -> Result<Vec<SummaryRow>, HarnessError> {
    let mut files = Vec::new();
    metrics_files(dir, &mut files).map_err(|e| HarnessError::Config(format!("{}: {e}", dir.display())))?;
    if files.is_empty() {
        return Err(HarnessError::Config(format!("no metrics.csv files below {}", dir.display())));
    }
    let mut finals = Vec::new();
    for path in files {
        let file = read_metrics_csv(std::fs::File::open(&path)?)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let scheme = file.scheme.unwrap_or_else(|| {
            path.parent()
                .and_then(Path::parent)
                .and_then(Path::file_name)
                .map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned())
        });
        if let Some(last) = file.rows.last() {
            finals.push((scheme, *last));
        }
    }
    Ok(summarize(&finals, confidence))
}

pub fn write_summary_csv(rows: &[SummaryRow], out: impl Write) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| std::io::Error::other(e);
    w.write_record(["scheme", "metric", "n", "mean", "half_width", "confidence"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.scheme.clone(),
            r.metric.to_string(),
            r.n.to_string(),
            r.mean.to_string(),
            r.half_width.to_string(),
            r.confidence.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
}
