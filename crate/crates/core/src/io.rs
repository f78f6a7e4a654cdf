//! Small CSV and number-formatting helpers shared by the file formats.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Significant digits for bit-faithful float round-trips.
pub const FULL_PRECISION: usize = 17;
/// Significant digits for human-facing report tables.
pub const REPORT_PRECISION: usize = 6;

/// Formats `x` with `digits` significant digits, `%g` style.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub struct CsvRows {
    pub headers: Vec<String>,
    pub records: Vec<csv::StringRecord>,
}

impl CsvRows {
    /// Index of `name`, or a format error naming the missing column.
    pub fn column(&self, name: &str, path: &Path) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Format(format!("{}: missing column {name:?}", path.display())))
    }
}

pub fn read_csv_rows(path: &Path) -> Result<CsvRows> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.iter().map(str::to_string).collect();
    let records = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(CsvRows { headers, records })
}

pub fn parse_field<T: std::str::FromStr>(field: &str, path: &Path, what: &str) -> Result<T> {
    field
        .parse::<T>()
        .map_err(|_| Error::Format(format!("{}: bad {what} value {field:?}", path.display())))
}

pub fn parse_flag(field: &str, path: &Path, what: &str) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Format(format!(
            "{}: {what} must be 0 or 1, got {field:?}",
            path.display()
        ))),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
