//! Plain CSV tables with a fixed column schema and round-trippable floats.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// 17 significant digits: enough to round-trip any `f64` exactly.
pub fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// `None` is written as an empty field.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

pub fn parse_opt(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field.parse().map(Some).map_err(|_| Error::Input(format!("not a number: {field:?}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::Dimension(format!("row has {} fields, header has {}", row.len(), self.header.len())));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    /// Reads a table and checks that its header matches `expected` exactly.
    pub fn read<R: Read>(input: R, expected: &[&str]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != expected {
            return Err(Error::Input(format!("CSV header {header:?} does not match {expected:?}")));
        }
        let mut table = Self { header, rows: Vec::new() };
        for rec in r.records() {
            table.push(rec?.iter().map(str::to_string).collect())?;
        }
        Ok(table)
    }

    /// Column `name` parsed as optional floats.
    pub fn column(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let j =
            self.header.iter().position(|h| h == name).ok_or_else(|| Error::Input(format!("no column {name:?}")))?;
        self.rows.iter().map(|r| parse_opt(&r[j])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(fmt_float(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_opt(None), "");
        assert_eq!(parse_opt("").unwrap(), None);
    }

    #[test]
    fn schema_checked() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![fmt_float(0.1), fmt_opt(None)]).unwrap();
        assert!(t.push(vec!["1".into()]).is_err());
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = Table::read(buf.as_slice(), &["a", "b"]).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.column("a").unwrap(), vec![Some(0.1)]);
        assert!(Table::read(buf.as_slice(), &["a", "c"]).is_err());
    }
}
