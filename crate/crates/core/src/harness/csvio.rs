//! CSV output helpers.
//!
//! All artifact CSV files use CRLF line endings, a single header row, and
//! floats printed with 17 significant digits so that values round-trip
//! exactly through text.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Format a float with 17 significant digits (exact f64 round-trip).
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Quote a field per RFC 4180 if it contains a comma, quote or newline.
pub fn escape_field(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') || field.contains('\r') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Incremental CSV writer with a fixed column count.
pub struct CsvWriter<W: Write> {
    sink: W,
    columns: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new(mut sink: W, header: &[&str]) -> Result<Self> {
        let line: Vec<String> = header.iter().map(|h| escape_field(h)).collect();
        write!(sink, "{}\r\n", line.join(","))?;
        Ok(CsvWriter { sink, columns: header.len() })
    }

    pub fn write_row(&mut self, fields: &[String]) -> Result<()> {
        assert_eq!(fields.len(), self.columns, "CSV row width mismatch");
        let line: Vec<String> = fields.iter().map(|f| escape_field(f)).collect();
        write!(self.sink, "{}\r\n", line.join(","))?;
        Ok(())
    }

    /// Convenience for all-numeric rows.
    pub fn write_floats(&mut self, values: &[f64]) -> Result<()> {
        let fields: Vec<String> = values.iter().map(|&v| fmt_g17(v)).collect();
        self.write_row(&fields)
    }

    pub fn finish(mut self) -> Result<()> {
        self.sink.flush()?;
        Ok(())
    }
}

/// Open a buffered CSV writer on `path`.
pub fn create_csv(
    path: &Path,
    header: &[&str],
) -> Result<CsvWriter<std::io::BufWriter<std::fs::File>>> {
    let file = std::fs::File::create(path)?;
    CsvWriter::new(std::io::BufWriter::new(file), header)
}

/// Read a CSV file written by [`CsvWriter`] back as header plus float rows.
/// Only used by tests and by commands that reload their own artifacts, so
/// quoting support is limited to unquoted numeric fields.
pub fn read_float_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| crate::error::Error::invalid(format!("{}: empty CSV", path.display())))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            crate::error::Error::invalid(format!("{}: bad float on row {}: {e}", path.display(), i + 2))
        })?;
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt_g17_round_trips_exactly() {
        for &x in &[0.0, 1.0, -1.0 / 3.0, std::f64::consts::PI, 1e-300, -2.5e17, f64::EPSILON] {
            let s = fmt_g17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "{x} -> {s} -> {back}");
        }
    }

    #[test]
    fn escape_quotes_and_commas() {
        assert_eq!(escape_field("plain"), "plain");
        assert_eq!(escape_field("a,b"), "\"a,b\"");
        assert_eq!(escape_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn writer_emits_crlf_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        {
            let mut w = create_csv(&path, &["t", "p"]).unwrap();
            w.write_floats(&[0.0, 1.0]).unwrap();
            w.write_floats(&[0.5, 1.0 / 3.0]).unwrap();
            w.finish().unwrap();
        }
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.ends_with("\r\n"));
        assert_eq!(raw.matches("\r\n").count(), 3);
        let (header, rows) = read_float_csv(&path).unwrap();
        assert_eq!(header, vec!["t", "p"]);
        assert_eq!(rows[1][1], 1.0 / 3.0);
    }

    #[test]
    #[should_panic(expected = "width mismatch")]
    fn writer_rejects_ragged_rows() {
        let mut w = CsvWriter::new(Vec::new(), &["a", "b"]).unwrap();
        let _ = w.write_row(&["x".to_string()]);
    }
}
