//! CSV matrices (samples as rows, `NA` or empty for missing) and label files.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{GpccaError, Result};

/// One samples × features table read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub path: PathBuf,
    pub sample_ids: Option<Vec<String>>,
    pub feature_names: Vec<String>,
    /// n×p; missing entries hold 0.
    pub values: DMatrix<f64>,
    pub observed: DMatrix<bool>,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }
}

const ID_HEADERS: [&str; 5] = ["", "id", "sample", "sample_id", "sampleid"];

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

fn parse_error(path: &Path, line: Option<u64>, message: impl Into<String>) -> GpccaError {
    GpccaError::Parse {
        path: path.to_path_buf(),
        line: line.map(|l| l as usize),
        message: message.into(),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> GpccaError {
    let line = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => GpccaError::Io {
            path: path.to_path_buf(),
            source,
        },
        kind => parse_error(path, line, format!("{kind:?}")),
    }
}

/// Reads a header-first CSV matrix. The first column holds sample IDs when its
/// header is empty or one of `id`, `sample`, `sample_id`, or when any of its
/// entries is not numeric.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() {
        return Err(parse_error(path, Some(1), "missing header row"));
    }
    let mut rows: Vec<(u64, Vec<String>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    if rows.is_empty() {
        return Err(parse_error(path, None, "no data rows"));
    }
    let first = header[0].trim().to_ascii_lowercase();
    let has_ids = ID_HEADERS.contains(&first.as_str())
        || rows
            .iter()
            .any(|(_, r)| !is_missing(&r[0]) && r[0].trim().parse::<f64>().is_err());
    let skip = usize::from(has_ids);
    let feature_names = header[skip..].to_vec();
    if feature_names.is_empty() {
        return Err(parse_error(path, Some(1), "no feature columns"));
    }
    let n = rows.len();
    let p = feature_names.len();
    let mut values = DMatrix::zeros(n, p);
    let mut observed = DMatrix::from_element(n, p, false);
    let mut ids = Vec::with_capacity(n);
    for (k, (line, row)) in rows.iter().enumerate() {
        if has_ids {
            ids.push(row[0].clone());
        }
        for (j, cell) in row[skip..].iter().enumerate() {
            if is_missing(cell) {
                continue;
            }
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_error(
                    path,
                    Some(*line),
                    format!("column '{}': cannot parse '{cell}' as a number", feature_names[j]),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_error(
                    path,
                    Some(*line),
                    format!("column '{}': non-finite value '{cell}'", feature_names[j]),
                ));
            }
            values[(k, j)] = v;
            observed[(k, j)] = true;
        }
    }
    Ok(Table {
        path: path.to_path_buf(),
        sample_ids: has_ids.then_some(ids),
        feature_names,
        values,
        observed,
    })
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NA".to_owned()
    } else {
        format!("{v}")
    }
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

/// Writes `rows` (one per record) with an optional leading name column.
pub fn write_table(
    path: &Path,
    id_header: &str,
    ids: Option<&[String]>,
    header: &[String],
    rows: &DMatrix<f64>,
) -> Result<()> {
    let mut w = writer(path)?;
    let mut head: Vec<&str> = Vec::with_capacity(header.len() + 1);
    if ids.is_some() {
        head.push(id_header);
    }
    head.extend(header.iter().map(String::as_str));
    w.write_record(&head).map_err(|e| csv_error(path, e))?;
    for k in 0..rows.nrows() {
        let mut rec: Vec<String> = Vec::with_capacity(rows.ncols() + 1);
        if let Some(ids) = ids {
            rec.push(ids[k].clone());
        }
        rec.extend(rows.row(k).iter().map(|&v| format_float(v)));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| GpccaError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `sample,label` file.
pub fn write_labels(path: &Path, ids: &[String], labels: &[usize]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["sample", "label"]).map_err(|e| csv_error(path, e))?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|source| GpccaError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a two-column `sample,label` file; labels are arbitrary strings.
pub fn read_labels(path: &Path) -> Result<Vec<(String, String)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() != 2 {
            let line = rec.position().map(|p| p.line());
            return Err(parse_error(path, line, "expected two columns: sample,label"));
        }
        out.push((rec[0].to_owned(), rec[1].to_owned()));
    }
    Ok(out)
}

pub fn default_ids(n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("s{k}")).collect()
}
