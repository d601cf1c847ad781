//! Deterministic report export: sorted keys, floats rounded to 12
//! significant digits.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};

pub const SIGNIFICANT_DIGITS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::InvalidArgument(format!("unknown output format `{other}`"))),
        }
    }
}

/// Anything the CLI can write. CSV is optional per report type.
pub trait Report: Serialize {
    fn csv(&self) -> Option<String> {
        None
    }
}

pub fn round_significant(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

pub fn format_float(x: f64) -> String {
    let r = round_significant(x);
    if r == 0.0 {
        // normalizes -0.0
        "0".to_string()
    } else {
        r.to_string()
    }
}

fn normalize(v: Value) -> Value {
    match v {
        Value::Number(n) if !n.is_i64() && !n.is_u64() => n
            .as_f64()
            .and_then(|x| serde_json::Number::from_f64(round_significant(x) + 0.0))
            .map(Value::Number)
            .unwrap_or(Value::Null),
        Value::Array(a) => Value::Array(a.into_iter().map(normalize).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, normalize(v))).collect()),
        other => other,
    }
}

/// Canonical JSON text: object keys sorted, floats rounded, trailing newline.
pub fn to_canonical_json<T: Serialize + ?Sized>(data: &T) -> Result<String> {
    let v = normalize(serde_json::to_value(data)?);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn render<T: Report + ?Sized>(data: &T, format: Format) -> Result<String> {
    match format {
        Format::Json => to_canonical_json(data),
        Format::Csv => data
            .csv()
            .ok_or_else(|| Error::InvalidArgument("this report has no CSV form".into())),
    }
}

/// Render `data` and write it to `path`, or to standard output when `path` is `None`.
pub fn export_report<T: Report + ?Sized>(data: &T, format: Format, path: Option<&Path>) -> Result<String> {
    let text = render(data, format)?;
    match path {
        Some(p) => std::fs::write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn rounding() {
        assert_eq!(round_significant(0.1 + 0.2), 0.3);
        assert_eq!(format_float(-0.0), "0");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333333");
    }

    #[test]
    fn keys_sorted_regardless_of_source_order() {
        let mut a = HashMap::new();
        for k in ["zeta", "alpha", "mid"] {
            a.insert(k, 1.0 / 7.0);
        }
        let s = to_canonical_json(&a).unwrap();
        let alpha = s.find("alpha").unwrap();
        let mid = s.find("mid").unwrap();
        let zeta = s.find("zeta").unwrap();
        assert!(alpha < mid && mid < zeta);
        assert!(s.contains("0.142857142857"));
    }
}
