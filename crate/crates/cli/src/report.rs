//! Comparison tables over tuning traces.

use serde_json::json;
use std::path::{Path, PathBuf};

use kldpg_core::tuning::TuneTrace;

use crate::commands::Context;
use crate::manifest::{RunManifest, MANIFEST_NAME};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Better {
    Higher,
    Lower,
    Neither,
}

fn direction(metric: &str) -> Better {
    match metric {
        "compilability_rate" | "distinct1" => Better::Higher,
        "mean_char_length" | "mean_ast_nodes" => Better::Neither,
        _ => Better::Lower,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub method: String,
    pub metrics: Vec<String>,
    /// `(update, values)`; empty cells are `None`.
    pub rows: Vec<(usize, Vec<Option<f64>>)>,
}

fn mismatch(path: &Path, why: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("SchemaMismatch: {}: {why}", path.display()))
}

/// Number of leading bookkeeping columns before the metrics.
const PREFIX_COLUMNS: usize = 4;

pub fn read_trace(path: &Path, method: String) -> Result<Trace, CliError> {
    let expected = TuneTrace::csv_header();
    let mut reader = csv::Reader::from_path(path).map_err(|e| mismatch(path, e))?;
    let headers = reader.headers().map_err(|e| mismatch(path, e))?.clone();
    let joined = headers.iter().collect::<Vec<_>>().join(",");
    if joined != expected {
        return Err(mismatch(path, "unexpected columns"));
    }
    let metrics: Vec<String> = headers
        .iter()
        .skip(PREFIX_COLUMNS)
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| mismatch(path, e))?;
        let update = record[0].parse().map_err(|e| mismatch(path, e))?;
        let values = record
            .iter()
            .skip(PREFIX_COLUMNS)
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse().map(Some)
                }
            })
            .collect::<Result<Vec<Option<f64>>, _>>()
            .map_err(|e| mismatch(path, e))?;
        rows.push((update, values));
    }
    if rows.is_empty() {
        return Err(mismatch(path, "no evaluations"));
    }
    Ok(Trace {
        method,
        metrics,
        rows,
    })
}

/// Method label from the tune manifest next to the trace, else the directory name.
fn label(path: &Path) -> String {
    let dir = path.parent().unwrap_or(Path::new("."));
    if let Ok(m) = RunManifest::load(&dir.join(MANIFEST_NAME)) {
        if let Some(method) = m.config.get("tune.method") {
            return method.clone();
        }
    }
    dir.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("trace")
        .to_string()
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn summary_csv(traces: &[Trace]) -> String {
    let metrics = &traces[0].metrics;
    let mut out = String::from("method,evaluations,final_update");
    for m in metrics {
        out.push_str(&format!(",final_{m},best_{m}"));
    }
    out.push('\n');
    for t in traces {
        let (last_update, last) = t.rows.last().expect("nonempty");
        out.push_str(&format!("{},{},{}", t.method, t.rows.len(), last_update));
        for (j, m) in metrics.iter().enumerate() {
            let column = t.rows.iter().filter_map(|(_, v)| v[j]);
            let best = match direction(m) {
                Better::Higher => column.reduce(f64::max),
                Better::Lower => column.reduce(f64::min),
                Better::Neither => None,
            };
            out.push_str(&format!(",{},{}", fmt(last[j]), fmt(best)));
        }
        out.push('\n');
    }
    out
}

pub fn long_csv(traces: &[Trace]) -> String {
    let mut out = String::from("method,update,metric,value\n");
    for t in traces {
        for (update, values) in &t.rows {
            for (m, v) in t.metrics.iter().zip(values) {
                out.push_str(&format!("{},{update},{m},{}\n", t.method, fmt(*v)));
            }
        }
    }
    out
}

pub fn run(mut ctx: Context, inputs: &[PathBuf]) -> Result<(), CliError> {
    let mut traces = Vec::new();
    for input in inputs {
        let path = if input.is_dir() {
            input.join("trace.csv")
        } else {
            input.clone()
        };
        ctx.input(&path)?;
        traces.push(read_trace(&path, label(&path))?);
    }
    ctx.out
        .write("summary.csv", summary_csv(&traces).as_bytes())?;
    ctx.out.write("long.csv", long_csv(&traces).as_bytes())?;
    let methods: Vec<&str> = traces.iter().map(|t| t.method.as_str()).collect();
    ctx.finish(json!({ "methods": methods }))
}
