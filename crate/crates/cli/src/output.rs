//! Tabular results rendered as CSV (12 significant digits, config echoed in
//! `#` header lines) or JSON (full precision, config embedded).

use std::io::Write;

use anyhow::Result;
use serde_json::{json, Value};

use crate::config::{Config, Format};

pub struct Table {
    pub command: &'static str,
    pub columns: &'static [&'static str],
    pub rows: Vec<Vec<Value>>,
}

/// `x` with 12 significant digits, trailing zeros dropped.
pub fn sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let s = if (-5..15).contains(&magnitude) {
        format!("{:.*}", (11 - magnitude).max(0) as usize, x)
    } else {
        format!("{:.11e}", x)
    };
    trim_zeros(&s)
}

fn trim_zeros(s: &str) -> String {
    let (mantissa, exponent) = match s.find('e') {
        Some(i) => s.split_at(i),
        None => (s, ""),
    };
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    format!("{mantissa}{exponent}")
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Number(n) => match n.as_f64() {
            Some(x) if n.is_f64() => sig12(x),
            _ => n.to_string(),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl Table {
    pub fn render(&self, config: &Config) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        match config.format {
            Format::Csv => {
                writeln!(out, "# specdec {}", self.command)?;
                writeln!(out, "# config: {}", serde_json::to_string(config)?)?;
                let mut w = csv::Writer::from_writer(&mut out);
                w.write_record(self.columns)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(cell))?;
                }
                w.flush()?;
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        Value::Object(
                            self.columns
                                .iter()
                                .zip(row)
                                .map(|(c, v)| (c.to_string(), v.clone()))
                                .collect(),
                        )
                    })
                    .collect();
                let doc = json!({ "command": self.command, "config": config, "rows": rows });
                serde_json::to_writer_pretty(&mut out, &doc)?;
                out.push(b'\n');
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(sig12(16.41), "16.41");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig12(2.0 / 3.0 * 100.0), "66.6666666667");
        assert_eq!(sig12(50.0), "50");
        assert_eq!(sig12(-0.25), "-0.25");
        assert_eq!(sig12(1.5e-9), "1.5e-9");
        assert_eq!(sig12(0.0), "0");
    }
}
