//! Plain column-text output: one header line with column names, one row per
//! record, space separated. Floats print in Rust's shortest round-trip form,
//! which is deterministic across runs and platforms.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub fn write_columns(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    out.push_str(&header.join(" "));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            out.push_str(&format_value(*v));
            first = false;
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else if v == 0.0 {
        // normalize negative zero (empty sums produce -0.0)
        "0".to_string()
    } else {
        format!("{v}")
    }
}
