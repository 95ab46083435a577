//! Output formatting: every float is printed with 17 significant digits
//! so golden-file comparisons are exact and values round-trip.

use std::path::Path;

use anyhow::{Context, Result};

pub fn num17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "NA".to_string()
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

/// Quotes nothing: callers guarantee the label columns carry no commas.
pub fn csv_line(fields: &[String]) -> String {
    let mut line = fields.join(",");
    line.push('\n');
    line
}
