//! Rendering of reports as CSV or JSON.
//!
//! CSV layout: metadata lines starting with `#` (tool version, command,
//! config echo, seed, one line per bound report and optional JSON
//! attachments), then a fixed header row and the data rows. Floating-point
//! cells are decimal with 9 significant digits.

use mixcomp_core::bounds::BoundReport;
use serde::Serialize;
use serde_json::Value;

use crate::args::Format;
use crate::error::{CliError, CliResult};

pub const TOOL: &str = "mixcomp";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Header of the `# bound` metadata lines.
pub const BOUND_FIELDS: &str = "name,status,lhs,rhs,slack";

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Float(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(x) => sig9(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}

impl From<usize> for Cell {
    fn from(i: usize) -> Self {
        Cell::Int(i as u64)
    }
}

impl From<u64> for Cell {
    fn from(i: u64) -> Self {
        Cell::Int(i)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(o: Option<T>) -> Self {
        o.map_or(Cell::Empty, Into::into)
    }
}

/// Everything one command emits.
#[derive(Debug)]
pub struct Report {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub bounds: Vec<BoundReport>,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    /// Named JSON values shown as `# name: ...` lines in CSV.
    pub attachments: Vec<(String, Value)>,
    pub result: Value,
}

impl Report {
    pub fn violations(&self) -> Vec<&BoundReport> {
        self.bounds.iter().filter(|b| !b.passed()).collect()
    }

    pub fn render(&self, format: Format) -> CliResult<String> {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }

    fn to_csv(&self) -> CliResult<String> {
        let json = |v: &Value| serde_json::to_string(v).expect("JSON values serialise");
        let mut out = String::new();
        out.push_str(&format!("# {TOOL} {VERSION}\n"));
        out.push_str(&format!("# command: {}\n", self.command));
        out.push_str(&format!("# config: {}\n", json(&self.config)));
        out.push_str(&format!("# seed: {}\n", self.seed));
        out.push_str(&format!("# bounds: {BOUND_FIELDS}\n"));
        for b in &self.bounds {
            out.push_str(&format!(
                "# bound: {},{},{},{},{}\n",
                b.name,
                b.status(),
                sig9(b.lhs),
                sig9(b.rhs),
                sig9(b.slack)
            ));
        }
        for (name, v) in &self.attachments {
            out.push_str(&format!("# {name}: {}\n", json(v)));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            debug_assert_eq!(row.len(), self.header.len());
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        let body = w.into_inner().map_err(|e| CliError::Io(std::io::Error::other(e.to_string())))?;
        out.push_str(&String::from_utf8(body).expect("CSV output is UTF-8"));
        Ok(out)
    }

    fn to_json(&self) -> CliResult<String> {
        let doc = serde_json::json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "bounds": self.bounds,
            "result": self.result,
        });
        let mut s = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.into()))?;
        s.push('\n');
        Ok(s)
    }
}

/// Decimal rendering with 9 significant digits, never in exponent notation.
pub fn sig9(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.into();
    }
    if x == 0.0 {
        return "0.00000000".into();
    }
    // `{:.8e}` does the rounding, the rest only moves the decimal point
    let sci = format!("{:.8e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let sign = if x < 0.0 { "-" } else { "" };
    let body = if exp >= 8 {
        format!("{digits}{}", "0".repeat((exp - 8) as usize))
    } else if exp >= 0 {
        let (int, frac) = digits.split_at(exp as usize + 1);
        format!("{int}.{frac}")
    } else {
        format!("0.{}{digits}", "0".repeat((-exp - 1) as usize))
    };
    format!("{sign}{body}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(1.0), "1.00000000");
        assert_eq!(sig9(0.987205), "0.987205000");
        assert_eq!(sig9(0.7459431618637297), "0.745943162");
        assert_eq!(sig9(-2.5e-5), "-0.0000250000000");
        assert_eq!(sig9(123456789012.0), "123456789000");
        assert_eq!(sig9(9.999999999), "10.0000000");
        assert_eq!(sig9(0.0), "0.00000000");
        assert_eq!(sig9(176.0), "176.000000");
    }

    #[test]
    fn rendered_values_parse_back() {
        for &x in &[0.600876037, 1e-12, 1.234567891234, 42.0, -7.25] {
            let back: f64 = sig9(x).parse().unwrap();
            assert!((back - x).abs() <= 1e-8 * x.abs());
        }
    }

    #[test]
    fn csv_layout() {
        let r = Report {
            command: "analyze".into(),
            config: serde_json::json!({"a": 1}),
            seed: 7,
            bounds: vec![BoundReport::new("b", 0.5, 1.0)],
            header: vec!["quantity", "index", "value"],
            rows: vec![vec!["entropy".into(), Cell::Empty, 1.0.into()]],
            attachments: vec![],
            result: Value::Null,
        };
        let text = r.render(Format::Csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# {TOOL} {VERSION}"));
        assert_eq!(lines[3], "# seed: 7");
        assert_eq!(lines[5], "# bound: b,satisfied,0.500000000,1.00000000,0.500000000");
        assert_eq!(lines[6], "quantity,index,value");
        assert_eq!(lines[7], "entropy,,1.00000000");
    }
}
