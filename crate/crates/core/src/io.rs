//! Plain-text matrix and dataset files.
//!
//! Matrices: first line `# rows=<m> cols=<d>`, then `m` comma-separated rows.
//! Datasets: first line `# n=<N> d=<d> dist=<tag> seed=<u64>`, then `N` rows
//! of `d` inputs, each optionally followed by its label as a final column.
//! Floats are written in shortest round-trip form, so files reload bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub fn format_matrix_csv(m: &DMatrix<f64>) -> String {
    let mut out = format!("# rows={} cols={}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        push_row(&mut out, m.row(i).iter().copied());
    }
    out
}

pub fn parse_matrix_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let fields = parse_header(header)?;
    let rows: usize = header_field(&fields, "rows")?;
    let cols: usize = header_field(&fields, "cols")?;
    let mut values = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let row = parse_row(line)?;
        if row.len() != cols {
            return Err(Error::Parse(format!(
                "row {seen} has {} columns, expected {cols}",
                row.len()
            )));
        }
        values.extend(row);
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Parse(format!("expected {rows} rows, found {seen}")));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, format_matrix_csv(m))?;
    Ok(())
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    parse_matrix_csv(&std::fs::read_to_string(path)?)
}

pub fn format_dataset_csv(ds: &Dataset) -> String {
    let mut out = format!(
        "# n={} d={} dist={} seed={}\n",
        ds.n(),
        ds.d(),
        ds.tag(),
        ds.seed()
    );
    for i in 0..ds.n() {
        let label = ds.labels().map(|l| l[i]);
        push_row(&mut out, ds.inputs().row(i).iter().copied().chain(label));
    }
    out
}

pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
    let fields = parse_header(header)?;
    let n: usize = header_field(&fields, "n")?;
    let d: usize = header_field(&fields, "d")?;
    let seed: u64 = header_field(&fields, "seed")?;
    let tag = fields
        .iter()
        .find(|(k, _)| k == "dist")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Parse("missing dist= in dataset header".into()))?;

    let mut inputs = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut labeled: Option<bool> = None;
    let mut seen = 0;
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let row = parse_row(line)?;
        let has_label = match row.len() {
            c if c == d => false,
            c if c == d + 1 => true,
            c => {
                return Err(Error::Parse(format!(
                    "row {seen} has {c} columns, expected {d} or {}",
                    d + 1
                )))
            }
        };
        match labeled {
            None => labeled = Some(has_label),
            Some(prev) if prev != has_label => {
                return Err(Error::Parse("mixed labeled and unlabeled rows".into()))
            }
            _ => {}
        }
        inputs.extend_from_slice(&row[..d]);
        if has_label {
            labels.push(row[d]);
        }
        seen += 1;
    }
    if seen != n {
        return Err(Error::Parse(format!("expected {n} rows, found {seen}")));
    }
    let ds = Dataset::from_inputs(DMatrix::from_row_slice(n, d, &inputs), tag, seed)?;
    if labeled == Some(true) {
        ds.with_labels(DVector::from_vec(labels))
    } else {
        Ok(ds)
    }
}

pub fn write_dataset_csv(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    std::fs::write(path, format_dataset_csv(ds))?;
    Ok(())
}

pub fn read_dataset_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset_csv(&std::fs::read_to_string(path)?)
}

fn push_row(out: &mut String, values: impl Iterator<Item = f64>) {
    for (k, v) in values.enumerate() {
        if k > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:?}");
    }
    out.push('\n');
}

fn parse_row(line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number {t:?}: {e}")))
        })
        .collect()
}

fn parse_header(line: &str) -> Result<Vec<(String, String)>> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse(format!("header must start with '#': {line:?}")))?;
    body.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::Parse(format!("bad header field {kv:?}")))
        })
        .collect()
}

fn header_field<T: std::str::FromStr>(fields: &[(String, String)], key: &str) -> Result<T> {
    let raw = fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Parse(format!("missing {key}= in header")))?;
    raw.parse()
        .map_err(|_| Error::Parse(format!("bad value for {key}: {raw:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample_dataset;
    use crate::model::Distribution;

    #[test]
    fn matrix_layout() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, -2.0, 0.1, 3.0, 1e-20]);
        let text = format_matrix_csv(&m);
        assert!(text.starts_with("# rows=2 cols=3\n1.0,0.5,-2.0\n"));
        assert_eq!(parse_matrix_csv(&text).unwrap(), m);
    }

    #[test]
    fn matrix_shape_errors() {
        assert!(parse_matrix_csv("# rows=2 cols=2\n1,2\n").is_err());
        assert!(parse_matrix_csv("# rows=1 cols=2\n1,2,3\n").is_err());
        assert!(parse_matrix_csv("rows=1 cols=1\n1\n").is_err());
    }

    #[test]
    fn dataset_with_custom_tag_reloads() {
        let ds = sample_dataset(&Distribution::Custom { mu2: 1.0, mu4: 3.0 }, 4, 2, 11).unwrap();
        let ds = ds
            .clone()
            .with_labels(DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]))
            .unwrap();
        let text = format_dataset_csv(&ds);
        assert!(text.starts_with("# n=4 d=2 dist=custom(1,3) seed=11\n"));
        assert_eq!(parse_dataset_csv(&text).unwrap(), ds);
    }

    #[test]
    fn mixed_label_rows_rejected() {
        let text = "# n=2 d=1 dist=x seed=0\n1.0\n2.0,4.0\n";
        assert!(parse_dataset_csv(text).is_err());
    }
}
