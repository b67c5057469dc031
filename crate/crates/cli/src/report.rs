//! Report serialization: 12 significant digits, tagged claims, CSV tables.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

/// Strength of a numeric claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    /// Closed form on the finite window.
    Exact,
    /// Verified bound or certified computation.
    Certified,
    /// Random search or finite tail sampling; an estimate.
    Sampled,
    /// Truncation extrapolation without a certificate.
    Heuristic,
}

impl Tag {
    pub fn name(self) -> &'static str {
        match self {
            Tag::Exact => "exact",
            Tag::Certified => "certified",
            Tag::Sampled => "sampled",
            Tag::Heuristic => "heuristic",
        }
    }
}

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Shortest text of the rounded value; non-finite values spelled out.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{}", round_sig(x))
    }
}

/// A single numeric claim with its tag.
pub fn claim(value: f64, tag: Tag) -> Value {
    let mut m = Map::new();
    m.insert("tag".into(), Value::from(tag.name()));
    m.insert("value".into(), num(value));
    Value::Object(m)
}

/// A JSON number, or a string for non-finite values (JSON has none).
pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(round_sig(x))
        .map(Value::Number)
        .unwrap_or_else(|| Value::from(fmt_num(x)))
}

/// Serializes `value` and attaches `tag` to the resulting object.
pub fn tagged<S: Serialize>(value: &S, tag: Tag) -> Value {
    let mut v = to_value(value);
    if let Value::Object(m) = &mut v {
        m.insert("tag".into(), Value::from(tag.name()));
    }
    v
}

/// `serde_json::to_value` with every float rounded. Non-finite floats,
/// which serde maps to `null`, should go through [`num`] instead.
pub fn to_value<S: Serialize>(value: &S) -> Value {
    let mut v = serde_json::to_value(value).expect("report types serialize");
    round_in_place(&mut v);
    v
}

pub fn round_in_place(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            *v = num(n.as_f64().expect("f64 number"));
        }
        Value::Array(a) => a.iter_mut().for_each(round_in_place),
        Value::Object(m) => m.values_mut().for_each(round_in_place),
        _ => {}
    }
}

/// Pretty JSON with a trailing newline; key order is sorted.
pub fn render_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// A CSV side file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> io::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| io::Error::new(io::ErrorKind::Other, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.render()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_twelve_digits() {
        assert_eq!(round_sig(1.0 / 3.0), 0.333333333333);
        assert_eq!(round_sig(2.0), 2.0);
        assert_eq!(round_sig(-123456.7890123456), -123456.789012);
        assert_eq!(fmt_num(0.1 + 0.2), "0.3");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
    }

    #[test]
    fn nonfinite_numbers_become_strings() {
        assert_eq!(num(f64::NAN), Value::from("nan"));
        assert_eq!(claim(4.0, Tag::Exact)["value"], Value::from(4.0));
    }

    #[test]
    fn nested_floats_are_rounded() {
        let mut v = serde_json::json!({"a": [0.1 + 0.2, 1], "b": {"c": 2.0 / 3.0}});
        round_in_place(&mut v);
        assert_eq!(v["a"][0], Value::from(0.3));
        assert_eq!(v["a"][1], Value::from(1));
        assert_eq!(v["b"]["c"], Value::from(0.666666666667));
    }

    #[test]
    fn tables_render_as_csv() {
        let mut t = Table::new(&["n", "value"]);
        t.push(vec!["1".into(), fmt_num(0.5)]);
        assert_eq!(String::from_utf8(t.render().unwrap()).unwrap(), "n,value\n1,0.5\n");
    }
}
