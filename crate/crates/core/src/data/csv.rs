//! Dataset CSV: header `f0,...,f{d-1},label`, decimal cells, `#` comments.

use std::io::Write;
use std::path::Path;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Expectations checked while loading.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    /// Required feature count, if known.
    pub num_features: Option<usize>,
    /// Labels must be below this; defaults to `max label + 1`.
    pub num_classes: Option<usize>,
    pub split: Split,
}

impl CsvSchema {
    pub fn new(split: Split) -> Self {
        CsvSchema {
            num_features: None,
            num_classes: None,
            split,
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema, &path.display().to_string())
}

pub(crate) fn read_csv(
    input: impl std::io::Read,
    schema: &CsvSchema,
    name: &str,
) -> Result<Dataset> {
    let fmt = |line: u64, msg: String| Error::format(format!("{name} line {line}"), msg);
    let mut rdr = ::csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(::csv::Trim::All)
        .flexible(true)
        .from_reader(input);

    let header = rdr.headers().map_err(|e| fmt(1, e.to_string()))?.clone();
    let header_line = rdr.position().line().max(1);
    let d = header.len().saturating_sub(1);
    if header.is_empty() || &header[d] != "label" {
        return Err(fmt(
            header_line,
            "last header column must be `label`".into(),
        ));
    }
    for (j, h) in header.iter().take(d).enumerate() {
        if h != format!("f{j}") {
            return Err(fmt(
                header_line,
                format!("feature column {j} is named `{h}`, expected `f{j}`"),
            ));
        }
    }
    if let Some(nf) = schema.num_features {
        if nf != d {
            return Err(fmt(
                header_line,
                format!("{d} feature columns, expected {nf}"),
            ));
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            fmt(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != d + 1 {
            return Err(fmt(
                line,
                format!("{} cells, expected {}", rec.len(), d + 1),
            ));
        }
        for (j, cell) in rec.iter().take(d).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| fmt(line, format!("column f{j}: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(fmt(line, format!("column f{j}: non-finite value `{cell}`")));
            }
            data.push(v);
        }
        let cell = &rec[d];
        let y: usize = cell.parse().map_err(|_| {
            fmt(
                line,
                format!("label `{cell}` is not a non-negative integer"),
            )
        })?;
        if let Some(c) = schema.num_classes {
            if y >= c {
                return Err(fmt(line, format!("unknown label {y} (expected < {c})")));
            }
        }
        labels.push(y);
    }
    let num_classes = schema
        .num_classes
        .unwrap_or_else(|| labels.iter().max().map_or(0, |&m| m + 1));
    let features = Matrix::new(labels.len(), d, data)?;
    Dataset::new(features, labels, num_classes, schema.split)
        .map_err(|e| Error::format(name.to_string(), e.to_string()))
}

/// Write a dataset. Values use the shortest representation that parses back
/// to the same `f64`.
pub fn write_csv(data: &Dataset, mut out: impl Write) -> std::io::Result<()> {
    let header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    writeln!(out, "{},label", header.join(","))?;
    for (row, y) in data.features().row_iter().zip(data.labels()) {
        for v in row {
            write!(out, "{v},")?;
        }
        writeln!(out, "{y}")?;
    }
    Ok(())
}

pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(data, &mut buf).expect("write to Vec");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}
