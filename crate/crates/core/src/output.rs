//! CSV formatting shared by the writers.
//!
//! Files are UTF-8 with LF line endings and a header row. Reals are written
//! with 17 significant digits in scientific notation (`1.2345678901234567e-3`),
//! which round-trips every `f64`; infinities are `inf`/`-inf` and a missing
//! value is an empty field.

use std::io::{self, Write};

/// Formats a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        }
    } else {
        format!("{x:.16e}")
    }
}

/// Formats an optional real; `None` becomes an empty field.
pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

/// Writes a header and rows of already formatted fields.
pub fn write_table<W: Write>(mut w: W, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
