//! CSV emission: fixed 12-significant-digit decimal formatting and a
//! metadata comment line ahead of the header.

use sha2::{Digest, Sha256};
use std::fmt::Write as _;

/// Formats `x` in plain decimal notation with 12 significant digits.
/// Non-finite values are written as `inf`, `-inf` or `nan`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // Rounding to 12 significant digits is delegated to the exponent form.
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(char::is_ascii_digit).collect();
    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if exp >= 0 {
        let int_len = exp as usize + 1;
        if digits.len() <= int_len {
            out.push_str(&digits);
            out.extend(std::iter::repeat_n('0', int_len - digits.len()));
        } else {
            out.push_str(&digits[..int_len]);
            out.push('.');
            out.push_str(&digits[int_len..]);
        }
    } else {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
        out.push_str(&digits);
    }
    out
}

/// Short hex digest of a config's serialized text.
pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut s = String::with_capacity(16);
    for b in &digest[..8] {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Package version, used in the metadata line of every CSV.
pub fn version() -> &'static str {
    concat!("v", env!("CARGO_PKG_VERSION"))
}

/// In-memory CSV table with a `#` metadata line.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub metadata: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(seed: u64, config_hash: &str, header: &[&str]) -> Self {
        CsvTable {
            metadata: format!(
                "# version={} seed={seed} config_hash={config_hash}",
                version()
            ),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push_row(row.iter().map(|&v| fmt_num(v)).collect());
    }

    /// Extra `#` comment appended to the metadata line.
    pub fn annotate(&mut self, note: &str) {
        self.metadata.push(' ');
        self.metadata.push_str(note);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.metadata);
        s.push('\n');
        s.push_str(&self.header.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    /// Column values parsed back as `f64` (test and tooling helper).
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r[idx].parse::<f64>().unwrap_or(f64::NAN))
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_num(3.894), "3.89400000000");
        assert_eq!(fmt_num(-0.000123456789012345), "-0.000123456789012");
        assert_eq!(fmt_num(1234567.891234567), "1234567.89123");
        assert_eq!(fmt_num(1.5e15), "1500000000000000");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(1.0), "1.00000000000");
    }

    #[test]
    fn formatted_values_parse_back_closely() {
        for &v in &[std::f64::consts::PI, 1e-9 / 3.0, 12345.678, -9.87654321e20] {
            let back: f64 = fmt_num(v).parse().unwrap();
            assert!(((back - v) / v).abs() < 1e-11, "{v}");
        }
    }

    #[test]
    fn table_renders_metadata_then_header() {
        let mut t = CsvTable::new(7, "abc", &["n", "value"]);
        t.push_numbers(&[10.0, 0.5]);
        let text = t.render();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# version="));
        assert_eq!(lines.next().unwrap(), "n,value");
        assert_eq!(lines.next().unwrap(), "10.0000000000,0.500000000000");
        assert_eq!(t.column("value").unwrap(), vec![0.5]);
    }
}
