//! CSV and JSON input/output.

use std::fs;
use std::path::Path;

use lowrank::{DataMatrix, Mask, Mat};
use serde::Serialize;

use crate::error::CliError;

/// A numeric table as read from disk; `raw` keeps every token verbatim so
/// observed cells can be written back unchanged.
pub struct Table {
    pub header: Vec<String>,
    pub values: Mat<f64>,
    pub mask: Mask,
    pub raw: Vec<Vec<String>>,
}

impl Table {
    pub fn has_missing(&self) -> bool {
        self.mask.n_missing() > 0
    }

    pub fn data(&self) -> Result<DataMatrix, CliError> {
        if self.has_missing() {
            Ok(DataMatrix::with_mask(self.values.clone(), self.mask.clone())?)
        } else {
            Ok(DataMatrix::new(self.values.clone())?)
        }
    }
}

pub fn read_table(path: &Path, na_token: &str) -> Result<Table, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Usage(format!("{}: bad header row: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let p = header.len();
    let mut raw: Vec<Vec<String>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: data row {}: {e}", path.display(), r + 1)))?;
        if rec.len() != p {
            return Err(CliError::Usage(format!(
                "{}: data row {} has {} fields, the header has {p}",
                path.display(),
                r + 1,
                rec.len()
            )));
        }
        raw.push(rec.iter().map(str::to_string).collect());
    }
    let n = raw.len();
    if n == 0 || p == 0 {
        return Err(CliError::Usage(format!("{}: no data", path.display())));
    }
    let mut values = Mat::zeros(n, p);
    let mut observed = vec![true; n * p];
    for (i, row) in raw.iter().enumerate() {
        for (j, tok) in row.iter().enumerate() {
            if tok == na_token {
                values[(i, j)] = f64::NAN;
                observed[j * n + i] = false;
                continue;
            }
            let v: f64 = tok.parse().map_err(|_| {
                CliError::Usage(format!(
                    "{}: cannot parse {tok:?} at data row {}, column {} ({})",
                    path.display(),
                    i + 1,
                    j + 1,
                    header[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::Usage(format!(
                    "{}: non-finite value at data row {}, column {}",
                    path.display(),
                    i + 1,
                    j + 1
                )));
            }
            values[(i, j)] = v;
        }
    }
    let mask = Mask::from_fn(n, p, |i, j| observed[j * n + i]);
    Ok(Table { header, values, mask, raw })
}

/// Shortest representation that parses back to the same value.
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e16).contains(&a) || !x.is_finite() {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn default_header(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("V{j}")).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

pub struct Writer<'a> {
    pub dir: &'a Path,
    pub format: Format,
}

impl Writer<'_> {
    pub fn create(dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))
    }

    fn put(&self, name: &str, contents: String) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }

    /// Matrix as `<stem>.csv` (or `.json`, an array of rows); `cell` renders entry `(i, j)`.
    pub fn matrix_with(
        &self,
        stem: &str,
        header: &[String],
        n: usize,
        p: usize,
        cell: impl Fn(usize, usize) -> String,
    ) -> Result<(), CliError> {
        match self.format {
            Format::Csv => {
                let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
                w.write_record(header).map_err(csv_err)?;
                for i in 0..n {
                    w.write_record((0..p).map(|j| cell(i, j))).map_err(csv_err)?;
                }
                let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
                self.put(&format!("{stem}.csv"), String::from_utf8(bytes).expect("utf8"))
            }
            Format::Json => {
                let rows: Vec<String> =
                    (0..n).map(|i| format!("[{}]", (0..p).map(|j| cell(i, j)).collect::<Vec<_>>().join(","))).collect();
                let names = serde_json::to_string(header).expect("header serialises");
                self.put(&format!("{stem}.json"), format!("{{\"columns\":{names},\"data\":[{}]}}\n", rows.join(",")))
            }
        }
    }

    pub fn matrix(&self, stem: &str, header: &[String], m: &Mat<f64>) -> Result<(), CliError> {
        self.matrix_with(stem, header, m.nrows(), m.ncols(), |i, j| fmt_num(m[(i, j)]))
    }

    /// Rows of named columns.
    pub fn rows(&self, stem: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        let p = header.len();
        match self.format {
            Format::Csv => self.matrix_with(stem, &header, rows.len(), p, |i, j| rows[i][j].clone()),
            Format::Json => {
                let objs: Vec<serde_json::Map<String, serde_json::Value>> = rows
                    .iter()
                    .map(|r| header.iter().cloned().zip(r.iter().map(|s| json_scalar(s))).collect())
                    .collect();
                self.json(&format!("{stem}.json"), &objs)
            }
        }
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        self.put(name, s)
    }
}

fn json_scalar(s: &str) -> serde_json::Value {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => {
            serde_json::Number::from_f64(v).map_or(serde_json::Value::Null, serde_json::Value::Number)
        }
        Ok(_) => serde_json::Value::Null,
        Err(_) if s.is_empty() => serde_json::Value::Null,
        Err(_) => serde_json::Value::String(s.to_string()),
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}
