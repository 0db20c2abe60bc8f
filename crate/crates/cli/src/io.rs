use std::fs::File;
use std::io::Write;
use std::path::Path;

use nys_sink::{Cloud, PointSet, WeightedCloud};

use crate::error::{CliError, Result};

/// Weights further than this from unit mass are renormalized with a warning.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Reads a point cloud from CSV: one point per row, one column per
/// coordinate. A header row is optional; when present and its last column is
/// named `weight`, that column holds the (unnormalized) point masses.
/// Otherwise every point gets mass `1/n`.
pub fn load_point_cloud(path: &Path) -> Result<Cloud> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(file);
    let parse_err = |line: u64, msg: String| CliError::Parse { path: path.to_path_buf(), line, msg };

    let mut width = None;
    let mut weighted = false;
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(idx as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if idx == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            weighted = record.iter().next_back().is_some_and(|f| f.eq_ignore_ascii_case("weight"));
            width = Some(record.len());
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(parse_err(line, format!("expected {w} fields, found {}", record.len())));
            }
            _ => width = Some(record.len()),
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("column {}: not a finite number: {field:?}", col + 1)))?;
            if weighted && col + 1 == record.len() {
                if value < 0.0 {
                    return Err(parse_err(line, format!("negative weight {value}")));
                }
                weights.push(value);
            } else {
                coords.push(value);
            }
        }
    }

    let width = width.unwrap_or(0);
    let dim = if weighted { width.saturating_sub(1) } else { width };
    if dim == 0 || coords.is_empty() {
        return Err(parse_err(0, "no points".into()));
    }
    let points = PointSet::new(dim, coords)?;
    if !weighted {
        return Ok(WeightedCloud::uniform(points)?);
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(parse_err(0, "weights sum to zero".into()));
    }
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
        log::warn!("{}: weights sum to {total}; renormalizing", path.display());
    }
    Ok(WeightedCloud::new(points, weights.into_iter().map(|w| w / total).collect())?)
}

/// Writes `cloud` in the format [`load_point_cloud`] reads, with a
/// `x1,…,xd,weight` header. Values use the shortest round-tripping form.
pub fn write_point_cloud(path: &Path, cloud: &Cloud) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    let mut header: Vec<String> = (1..=cloud.dim()).map(|k| format!("x{k}")).collect();
    header.push("weight".into());
    out.write_record(&header)?;
    for (point, w) in cloud.points().iter().zip(cloud.weights()) {
        out.write_record(point.iter().chain(std::iter::once(w)).map(|v| v.to_string()))?;
    }
    out.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `contents` to `path`, or to stdout when `path` is `None`.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, contents).map_err(|e| CliError::io(p, e)),
        None => std::io::stdout().write_all(contents.as_bytes()).map_err(|e| CliError::io("<stdout>", e)),
    }
}
