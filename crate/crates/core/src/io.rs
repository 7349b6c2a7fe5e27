//! File formats: data CSV with header `y,x1..xp`, label and matrix CSVs,
//! atomic writes and a stable float formatter.

use std::fs;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RjmError};
use crate::types::Dataset;

/// Shortest round-trip representation, switching to exponent form for very
/// large or small magnitudes.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn parse_err(context: impl Into<String>, message: impl Into<String>) -> RjmError {
    RjmError::Parse {
        context: context.into(),
        message: message.into(),
    }
}

fn parse_f64(field: &str, line: u64, col: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(format!("line {line}"), format!("column {}: cannot parse {field:?} as a number", col + 1)))?;
    if !v.is_finite() {
        return Err(parse_err(format!("line {line}"), format!("column {}: non-finite value", col + 1)));
    }
    Ok(v)
}

fn read_table<R: Read>(src: R, has_header: bool, what: &str) -> Result<(Option<Vec<String>>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(src);
    let header = if has_header {
        let h = rdr
            .headers()
            .map_err(|e| parse_err(format!("{what} header"), e.to_string()))?
            .iter()
            .map(String::from)
            .collect::<Vec<_>>();
        Some(h)
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut width = header.as_ref().map(|h| h.len());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(format!("{what} line {line}"), e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(parse_err(
                format!("{what} line {line}"),
                format!("expected {w} fields, found {}", rec.len()),
            ));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, f)| parse_f64(f, line, j))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                RjmError::Parse { context, message } => parse_err(format!("{what} {context}"), message),
                other => other,
            })?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Reads a data set whose first column is the response.
pub fn read_dataset<R: Read>(src: R) -> Result<Dataset> {
    let (header, rows) = read_table(src, true, "data")?;
    let header = header.unwrap_or_default();
    if header.len() < 2 {
        return Err(parse_err("data header", "expected a response column followed by at least one feature"));
    }
    if rows.is_empty() {
        return Err(parse_err("data", "no data rows"));
    }
    let p = header.len() - 1;
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[0]));
    let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j + 1]);
    Dataset::new(x, y)?.with_feature_names(header[1..].to_vec())
}

/// Reads a feature-only CSV (no response column), as used for prediction.
/// A leading `y` column, if present, is ignored.
pub fn read_features<R: Read>(src: R) -> Result<DMatrix<f64>> {
    let (header, rows) = read_table(src, true, "data")?;
    let header = header.unwrap_or_default();
    if rows.is_empty() {
        return Err(parse_err("data", "no data rows"));
    }
    let skip = usize::from(header.first().is_some_and(|h| h == "y"));
    let p = header.len() - skip;
    if p == 0 {
        return Err(parse_err("data header", "no feature columns"));
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j + skip]))
}

pub fn read_dataset_file(path: &Path) -> Result<Dataset> {
    let f = fs::File::open(path).map_err(|e| parse_err(path.display().to_string(), e.to_string()))?;
    read_dataset(f).map_err(|e| with_path(e, path))
}

pub fn read_features_file(path: &Path) -> Result<DMatrix<f64>> {
    let f = fs::File::open(path).map_err(|e| parse_err(path.display().to_string(), e.to_string()))?;
    read_features(f).map_err(|e| with_path(e, path))
}

fn with_path(e: RjmError, path: &Path) -> RjmError {
    match e {
        RjmError::Parse { context, message } => parse_err(format!("{}: {context}", path.display()), message),
        other => other,
    }
}

/// Headerless square matrix, e.g. a base covariance.
pub fn read_matrix<R: Read>(src: R) -> Result<DMatrix<f64>> {
    let (_, rows) = read_table(src, false, "matrix")?;
    if rows.is_empty() {
        return Err(parse_err("matrix", "empty file"));
    }
    let c = rows[0].len();
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    let f = fs::File::open(path).map_err(|e| parse_err(path.display().to_string(), e.to_string()))?;
    read_matrix(f).map_err(|e| with_path(e, path))
}

pub fn dataset_csv(data: &Dataset) -> String {
    let mut out = String::from("y");
    for j in 0..data.p() {
        out.push_str(&format!(",x{}", j + 1));
    }
    out.push('\n');
    for i in 0..data.n() {
        out.push_str(&fmt_f64(data.y()[i]));
        for j in 0..data.p() {
            out.push(',');
            out.push_str(&fmt_f64(data.x()[(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// `row,label` with 1-based rows and labels.
pub fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("row,label\n");
    for (i, l) in labels.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l + 1));
    }
    out
}

/// Writes to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| RjmError::domain(format!("{} is not a file path", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_json_atomic<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.0, 1.5, -2.25e-9, 1e300, 0.1 + 0.2, 123456.789, -7.0] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_f64(1e-9), "1e-9");
    }

    #[test]
    fn dataset_round_trip() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.5]);
        let y = DVector::from_vec(vec![0.1, -1.0]);
        let d = Dataset::new(x, y).unwrap();
        let text = dataset_csv(&d);
        let back = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(back.x(), d.x());
        assert_eq!(back.y(), d.y());
    }

    #[test]
    fn bad_row_names_line() {
        let text = "y,x1\n1,2\n3,abc\n";
        let err = read_dataset(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let ragged = "y,x1\n1,2\n3\n";
        let err = read_dataset(ragged.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn features_skip_response() {
        let m = read_features("y,x1,x2\n0,1,2\n".as_bytes()).unwrap();
        assert_eq!(m.ncols(), 2);
        let m = read_features("x1,x2\n1,2\n".as_bytes()).unwrap();
        assert_eq!(m[(0, 1)], 2.0);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
