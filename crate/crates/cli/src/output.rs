//! CSV output: header `method,K,T,value,flag`, numbers with 17 significant
//! digits so that reruns can be compared byte for byte.

use std::io::Write;

use crate::error::Result;
use crate::run::{Row, Summary};

pub const HEADER: [&str; 5] = ["method", "K", "T", "value", "flag"];

/// Scientific notation with 17 significant digits; `NaN` and infinities as
/// Rust prints them.
pub fn number(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn write_rows<W: Write>(rows: &[Row], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rows {
        w.write_record([
            r.method.as_str(),
            &number(r.strike),
            &number(r.maturity),
            &number(r.value),
            r.flag.as_str(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Human-readable block of the largest errors.
pub fn write_summary<W: Write>(summary: &[Summary], mut out: W) -> std::io::Result<()> {
    writeln!(out, "max |relative error|")?;
    writeln!(out, "{:<16} {:>8} {:>12}", "method", "T", "error")?;
    for s in summary {
        writeln!(out, "{:<16} {:>8} {:>12.4e}", s.method, s.maturity, s.max_abs_error)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(number(0.1), "1.0000000000000001e-1");
        assert_eq!(number(2.5), "2.5000000000000000e0");
        assert_eq!(number(f64::NAN), "NaN");
        let x = 0.123_456_789_012_345_68_f64;
        assert_eq!(number(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn header_and_rows() {
        let rows = vec![Row {
            method: "order2".into(),
            strike: 4.0,
            maturity: 2.5,
            value: 0.2,
            flag: "ok".into(),
        }];
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "method,K,T,value,flag\norder2,4.0000000000000000e0,2.5000000000000000e0,2.0000000000000001e-1,ok\n"
        );
    }
}
