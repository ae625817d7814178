//! Plain-text CSV helpers shared by every exported artifact.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Formats with 17 significant digits so values round-trip exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `# key = value` metadata lines.
pub fn write_metadata<W: Write>(out: &mut W, meta: &[(String, String)]) -> Result<()> {
    for (k, v) in meta {
        writeln!(out, "# {k} = {v}")?;
    }
    Ok(())
}

/// A CSV table read back from disk: `#` metadata, header and numeric rows.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut table = CsvTable::default();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(meta) = trimmed.strip_prefix('#') {
                if let Some((k, v)) = meta.split_once('=') {
                    table.metadata.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            if table.header.is_empty() {
                table.header = trimmed.split(',').map(|s| s.trim().to_string()).collect();
                continue;
            }
            let row = trimmed
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| {
                        Error::Parse(format!("line {}: '{}': {e}", lineno + 1, s.trim()))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != table.header.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    table.header.len(),
                    row.len()
                )));
            }
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn expect_header(&self, expected: &[&str]) -> Result<()> {
        if self.header.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(Error::Parse(format!(
                "unexpected header {:?}, wanted {:?}",
                self.header, expected
            )));
        }
        Ok(())
    }
}

/// Headerless numeric matrix, one row per line.
pub fn write_matrix<W: Write>(out: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        let line = m.row(i).iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",");
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_matrix<R: BufRead>(input: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in input.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        rows.push(
            t.split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?,
        );
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn table_parses_metadata_and_rows() {
        let text = "# seed = 4\n# grid = ci\na,b\n1,2\n3.5,-1e-3\n";
        let t = CsvTable::read(text.as_bytes()).unwrap();
        assert_eq!(t.meta("seed"), Some("4"));
        assert_eq!(t.header, vec!["a", "b"]);
        assert_eq!(t.rows, vec![vec![1.0, 2.0], vec![3.5, -1e-3]]);
        assert!(t.expect_header(&["a", "b"]).is_ok());
        assert!(t.expect_header(&["a"]).is_err());
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(CsvTable::read("a,b\n1\n".as_bytes()).is_err());
    }
}
