//! CSV matrix files: one row per feature, one column per sample.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::GramMatrix;
use crate::linalg::DataMatrix;

/// Parses a rectangular numeric CSV. Lines and columns in errors are 1-based.
pub fn parse_matrix<R: Read>(reader: R, has_header: bool) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            col: None,
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    line,
                    col: None,
                    message: format!("expected {w} fields, found {}", rec.len()),
                })
            }
            _ => {}
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                let bad = |message: String| Error::Parse {
                    line,
                    col: Some(j + 1),
                    message,
                };
                let v: f64 = cell
                    .parse()
                    .map_err(|_| bad(format!("not a number: {cell:?}")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(format!("non-finite value {cell:?}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let ncols = width.ok_or_else(|| Error::invalid("matrix file has no data rows"))?;
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Loads a data matrix; `transpose` swaps rows and columns after parsing.
pub fn load_matrix(
    path: impl AsRef<Path>,
    has_header: bool,
    transpose: bool,
) -> Result<DataMatrix> {
    let m = parse_matrix(open(path.as_ref())?, has_header)?;
    DataMatrix::new(if transpose { m.transpose() } else { m })
}

pub fn load_gram(path: impl AsRef<Path>, has_header: bool) -> Result<GramMatrix> {
    GramMatrix::new(parse_matrix(open(path.as_ref())?, has_header)?)
}

/// Writes values with shortest round-trip formatting, so reloading is exact.
pub fn write_matrix_to<W: Write>(writer: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_matrix_to(f, m)
}
