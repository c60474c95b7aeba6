//! Run records and their on-disk form: JSON Lines metrics, a JSON summary
//! and tab-separated tables, all numbers at 17 significant digits.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::Formatter;
use serde_json::{Map, Value};

/// One table or summary cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn to_json(&self) -> Value {
        match self {
            Cell::Num(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Int(v) => Value::from(*v),
            Cell::Text(s) => Value::String(s.clone()),
        }
    }

    fn to_tsv(&self) -> String {
        match self {
            Cell::Num(v) => fmt_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// Ordered named values: a metrics line or a summary.
pub type Row = Vec<(String, Cell)>;

pub fn row<const N: usize>(items: [(&str, Cell); N]) -> Row {
    items.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// `{:.16e}`, which round-trips every finite `f64`.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = self.header.join("\t");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(Cell::to_tsv).collect();
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<Vec<Cell>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].clone()).collect())
    }
}

/// Everything a run produced, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub version: String,
    /// The configuration text exactly as given.
    pub config_echo: String,
    pub metrics: Vec<Row>,
    /// Wall-clock seconds per metrics line, kept apart so metrics stay
    /// reproducible.
    pub timings: Vec<f64>,
    pub tables: Vec<Table>,
    pub summary: Row,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn summary_value(&self, key: &str) -> Option<&Cell> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn metrics_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.metrics {
            s.push_str(&to_json_line(&row_json(r)));
            s.push('\n');
        }
        if let Some(e) = &self.error {
            let mut m = Map::new();
            m.insert("error".into(), Value::String(e.clone()));
            s.push_str(&to_json_line(&Value::Object(m)));
            s.push('\n');
        }
        s
    }

    pub fn timings_jsonl(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.timings.iter().enumerate() {
            s.push_str(&to_json_line(&serde_json::json!({ "line": i, "seconds": t })));
            s.push('\n');
        }
        s
    }

    pub fn summary_json(&self) -> String {
        let mut m = Map::new();
        m.insert("version".into(), Value::String(self.version.clone()));
        m.insert(
            "status".into(),
            Value::String(if self.error.is_some() { "error" } else { "ok" }.into()),
        );
        if let Some(e) = &self.error {
            m.insert("error".into(), Value::String(e.clone()));
        }
        m.insert("summary".into(), row_json(&self.summary));
        m.insert("config_echo".into(), Value::String(self.config_echo.clone()));
        let mut s = to_json_pretty(&Value::Object(m));
        s.push('\n');
        s
    }

    /// Writes `metrics.jsonl`, `timings.jsonl`, `summary.json`,
    /// `config.json` and one `<table>.tsv` per table into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.jsonl"), self.metrics_jsonl())?;
        fs::write(dir.join("timings.jsonl"), self.timings_jsonl())?;
        fs::write(dir.join("summary.json"), self.summary_json())?;
        fs::write(dir.join("config.json"), &self.config_echo)?;
        for t in &self.tables {
            fs::write(dir.join(format!("{}.tsv", t.name)), t.to_tsv())?;
        }
        Ok(())
    }
}

fn row_json(r: &Row) -> Value {
    // insertion order is kept by writing through a Vec of pairs
    Value::Object(r.iter().map(|(k, v)| (k.clone(), v.to_json())).collect())
}

/// Writes floats with 17 significant digits.
struct Precise;

impl Formatter for Precise {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_num(value).as_bytes())
    }
}

struct PrecisePretty<'a>(serde_json::ser::PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for PrecisePretty<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_num(value).as_bytes())
    }
    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }
}

pub fn to_json_line<T: Serialize>(v: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Precise);
    v.serialize(&mut ser).expect("in-memory JSON");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn to_json_pretty<T: Serialize>(v: &T) -> String {
    let mut buf = Vec::new();
    let fmt = PrecisePretty(serde_json::ser::PrettyFormatter::new());
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, fmt);
    v.serialize(&mut ser).expect("in-memory JSON");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt_num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let j = to_json_line(&serde_json::json!({ "x": v }));
            let back: Value = serde_json::from_str(&j).unwrap();
            assert_eq!(back["x"].as_f64().unwrap(), v);
        }
        assert_eq!(fmt_num(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn tsv_has_one_header() {
        let mut t = Table::new("t", &["a", "b"]);
        t.rows.push(vec![Cell::Int(1), Cell::Num(0.25)]);
        t.rows.push(vec![Cell::Text("exact".into()), Cell::Num(2.0)]);
        let s = t.to_tsv();
        assert_eq!(s.lines().count(), 3);
        assert!(s.starts_with("a\tb\n1\t2.5000000000000000e-1\n"));
    }

    #[test]
    fn error_flags_outputs() {
        let r = RunRecord {
            version: "0".into(),
            config_echo: "{}".into(),
            metrics: vec![row([("step", Cell::Int(1))])],
            timings: vec![0.5],
            tables: vec![],
            summary: vec![],
            error: Some("boom".into()),
        };
        assert!(r.metrics_jsonl().ends_with("{\"error\":\"boom\"}\n"));
        assert!(r.summary_json().contains("\"status\": \"error\""));
    }
}
