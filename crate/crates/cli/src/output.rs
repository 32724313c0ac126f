//! JSON and CSV writers. Every output starts with the resolved config.

use std::io::{self, Write};

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

pub struct Output {
    w: Box<dyn Write>,
    format: Format,
}

pub type Row = Vec<(&'static str, Value)>;

fn csv_cell(v: &Value) -> String {
    let s = match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    };
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s
    }
}

/// Dotted-path leaves of a JSON value, in document order.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, v)| flatten(&join(k), v, out)),
        Value::Array(items) => items.iter().enumerate().for_each(|(i, v)| flatten(&join(&i.to_string()), v, out)),
        leaf => out.push((prefix.to_string(), leaf.clone())),
    }
}

impl Output {
    pub fn new(w: Box<dyn Write>, format: Format) -> Self {
        Self { w, format }
    }

    fn config_line(&mut self, config: &Value) -> io::Result<()> {
        match self.format {
            Format::Json => writeln!(self.w, "{}", serde_json::json!({ "config": config })),
            Format::Csv => writeln!(self.w, "# config: {config}"),
        }
    }

    /// One report. JSON: a single document `{config, result}`. CSV: the
    /// config comment followed by `key,value` rows.
    pub fn document(&mut self, config: &Value, result: &Value) -> io::Result<()> {
        match self.format {
            Format::Json => {
                let doc = serde_json::json!({ "config": config, "result": result });
                writeln!(self.w, "{}", serde_json::to_string_pretty(&doc)?)?;
            }
            Format::Csv => {
                self.config_line(config)?;
                writeln!(self.w, "key,value")?;
                let mut leaves = Vec::new();
                flatten("", result, &mut leaves);
                for (k, v) in leaves {
                    writeln!(self.w, "{},{}", csv_cell(&Value::String(k)), csv_cell(&v))?;
                }
            }
        }
        self.w.flush()
    }

    /// Starts a stream of rows with the given columns.
    pub fn start_table(&mut self, config: &Value, columns: &[&str]) -> io::Result<()> {
        self.config_line(config)?;
        if self.format == Format::Csv {
            writeln!(self.w, "{}", columns.join(","))?;
        }
        Ok(())
    }

    pub fn row(&mut self, row: Row) -> io::Result<()> {
        match self.format {
            Format::Json => {
                let map: Map<String, Value> = row.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
                writeln!(self.w, "{}", Value::Object(map))
            }
            Format::Csv => {
                let cells: Vec<String> = row.iter().map(|(_, v)| csv_cell(v)).collect();
                writeln!(self.w, "{}", cells.join(","))
            }
        }
    }

    /// A trailing summary after a table: a JSON line, or a CSV comment.
    pub fn summary(&mut self, name: &str, value: &Value) -> io::Result<()> {
        match self.format {
            Format::Json => writeln!(self.w, "{}", serde_json::json!({ name: value })),
            Format::Csv => writeln!(self.w, "# {name}: {value}"),
        }
    }

    pub fn finish(&mut self) -> io::Result<()> {
        self.w.flush()
    }
}
