//! CSV tables and atomic file output.
//!
//! Floats are written with `Display`, which gives the shortest text that
//! parses back to the same value and never depends on locale. Infinite and
//! missing values appear as `inf` and `NaN`.

use std::fmt::{Display, Write as _};
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, Result};

/// A header-first CSV table built in memory.
#[derive(Debug, Clone)]
pub struct Csv {
    columns: usize,
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self {
            columns: header.len(),
            text,
        }
    }

    pub fn row(&mut self, fields: &[&dyn Display]) {
        assert_eq!(fields.len(), self.columns, "row width does not match header");
        for (k, f) in fields.iter().enumerate() {
            if k > 0 {
                self.text.push(',');
            }
            write!(self.text, "{f}").expect("writing to a String");
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Writes `bytes` to `dir/name` through a temporary file in `dir` and a
/// rename, so readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(&target, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(&target, e))?;
    tmp.persist(&target).map_err(|e| CliError::io(&target, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    write_atomic(dir, name, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortest_round_trip_floats() {
        let mut csv = Csv::new(&["a", "b", "c"]);
        csv.row(&[&0.1, &1.5e-7, &f64::INFINITY]);
        csv.row(&[&1.0, &(1.0 / 3.0), &"x"]);
        assert_eq!(csv.as_str(), "a,b,c\n0.1,0.00000015,inf\n1,0.3333333333333333,x\n");
        let v: f64 = "0.3333333333333333".parse().unwrap();
        assert_eq!(v, 1.0 / 3.0);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "f.csv", b"one").unwrap();
        write_atomic(dir.path(), "f.csv", b"two").unwrap();
        assert_eq!(std::fs::read(dir.path().join("f.csv")).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
