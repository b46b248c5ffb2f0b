//! CSV data files: a header row of feature columns `f0…f{d-1}` optionally
//! followed by label columns `y0…y{K-1}`, one sample per line.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use csdiv::{LabeledDomain, SampleMatrix};

use crate::CliError;

/// Features and optional label rows read from one file.
#[derive(Debug, Clone)]
pub struct DataFile {
    pub features: SampleMatrix,
    pub labels: Option<SampleMatrix>,
}

impl DataFile {
    /// The file as a labeled domain; fails when it has no label columns.
    pub fn labeled(&self, path: &Path) -> Result<LabeledDomain, CliError> {
        let labels = self
            .labels
            .clone()
            .ok_or_else(|| CliError::input(format!("{}: conditional statistics need y0… label columns", path.display())))?;
        LabeledDomain::new(self.features.clone(), labels).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }
}

fn column_index(name: &str, prefix: char) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok()
}

/// Parses the header into `(d, K)`.
fn parse_header(names: &[&str], path: &Path) -> Result<(usize, usize), CliError> {
    let err = |msg: String| CliError::input(format!("{}:1: {msg}", path.display()));
    let d = names.iter().take_while(|n| n.starts_with('f')).count();
    if d == 0 {
        return Err(err("header must start with feature column f0".into()));
    }
    for (i, n) in names[..d].iter().enumerate() {
        if column_index(n, 'f') != Some(i) {
            return Err(err(format!("expected column f{i}, found {n:?}")));
        }
    }
    for (i, n) in names[d..].iter().enumerate() {
        if column_index(n, 'y') != Some(i) {
            return Err(err(format!("expected column y{i}, found {n:?}")));
        }
    }
    Ok((d, names.len() - d))
}

pub fn read_data(path: &Path) -> Result<DataFile, CliError> {
    let file = File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| CliError::input(format!("{}:1: {e}", path.display())))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let (d, k) = parse_header(&names, path)?;

    let mut feats = Vec::new();
    let mut labs = Vec::new();
    let mut n = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::input(format!("{}:{line}: {e}", path.display()))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::input(format!("{}:{line}: column {} is not a number: {field:?}", path.display(), names[j]))
            })?;
            if !v.is_finite() {
                return Err(CliError::input(format!("{}:{line}: column {} is not finite", path.display(), names[j])));
            }
            if j < d {
                feats.push(v);
            } else {
                labs.push(v);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    let features = SampleMatrix::from_flat(n, d, feats).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let labels = if k > 0 {
        Some(SampleMatrix::from_flat(n, k, labs).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?)
    } else {
        None
    };
    Ok(DataFile { features, labels })
}

#[cfg(test)]
/// Writes features and optional labels in the format [`read_data`] accepts.
pub fn write_data(path: &Path, features: &SampleMatrix, labels: Option<&SampleMatrix>) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().from_path(path).map_err(|e| CliError::io(path, e))?;
    let mut header: Vec<String> = (0..features.d()).map(|j| format!("f{j}")).collect();
    if let Some(l) = labels {
        header.extend((0..l.d()).map(|j| format!("y{j}")));
    }
    w.write_record(&header).map_err(|e| CliError::io(path, e))?;
    for i in 0..features.n() {
        let mut row: Vec<String> = features.row(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = labels {
            row.extend(l.row(i).iter().map(|v| v.to_string()));
        }
        w.write_record(&row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes `rows` under `header` as CSV.
pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, body: &str) -> Result<(), CliError> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut body = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    body.push('\n');
    write_text(path, &body)
}
