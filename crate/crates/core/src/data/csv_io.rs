use std::fs::File;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use super::TabularDataset;
use crate::error::{Error, Result};

/// Which column holds the label: a header name, or a 0-based index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl LabelColumn {
    /// Header names take precedence over numeric interpretation.
    pub fn parse(s: &str) -> Self {
        match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }

    fn resolve(&self, header: Option<&[String]>, width: usize) -> Result<usize> {
        if let (Some(h), LabelColumn::Name(name)) = (header, self) {
            if let Some(i) = h.iter().position(|c| c == name) {
                return Ok(i);
            }
        }
        if let (Some(h), LabelColumn::Index(i)) = (header, self) {
            if let Some(j) = h.iter().position(|c| *c == i.to_string()) {
                return Ok(j);
            }
        }
        match self {
            LabelColumn::Index(i) if *i < width => Ok(*i),
            _ => Err(Error::config(
                "label_column",
                format!("{self:?} matches no column"),
            )),
        }
    }
}

pub fn load_csv(path: &Path, label_column: &LabelColumn, has_header: bool) -> Result<TabularDataset> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        message,
    };

    let header: Option<Vec<String>> = if has_header {
        let h = reader
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(Vec::len);
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(parse_err(
                    line,
                    format!("ragged row: expected {w} fields, found {}", record.len()),
                ))
            }
            None => width = Some(record.len()),
            _ => {}
        }
        let mut values = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric value {field:?} in column {j}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value in column {j}")));
            }
            values.push(v);
        }
        rows.push(values);
    }

    let width = width.unwrap_or(0);
    if rows.is_empty() {
        return Err(parse_err(0, "no data rows".into()));
    }
    let label_idx = label_column.resolve(header.as_deref(), width)?;
    if width < 2 {
        return Err(parse_err(0, "need at least one feature column besides the label".into()));
    }
    let n = rows.len();
    let d = width - 1;
    let feature_cols: Vec<usize> = (0..width).filter(|&j| j != label_idx).collect();
    let features = Array2::from_shape_fn((n, d), |(i, j)| rows[i][feature_cols[j]]);
    let labels = rows.iter().map(|r| r[label_idx]).collect();
    let (feature_names, label_name) = match &header {
        Some(h) => (
            feature_cols.iter().map(|&j| h[j].clone()).collect(),
            h[label_idx].clone(),
        ),
        None => (
            feature_cols.iter().map(|j| format!("x{j}")).collect(),
            "label".to_string(),
        ),
    };
    TabularDataset::new(features, labels, feature_names, label_name, vec![false; d])
}

/// Writes features then the label as the last column, with a header and
/// 17 significant digits per value.
pub fn save_csv(ds: &TabularDataset, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    let mut header = ds.feature_names.clone();
    header.push(ds.label_name.clone());
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for (row, y) in ds.features.outer_iter().zip(&ds.labels) {
        let mut fields: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        fields.push(format!("{y:.16e}"));
        writeln!(out, "{}", fields.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Sidecar listing each feature name with its spurious flag.
pub fn save_flags(ds: &TabularDataset, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    writeln!(out, "feature,spurious").map_err(io)?;
    for (name, flag) in ds.feature_names.iter().zip(&ds.spurious_flags) {
        writeln!(out, "{name},{flag}").map_err(io)?;
    }
    out.flush().map_err(io)
}
