use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Wraps a command body in the versioned report envelope.
pub fn envelope(command: &str, status: &str, body: Value) -> Value {
    let mut v = json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "command": command,
        "status": status,
    });
    if let (Value::Object(dst), Value::Object(src)) = (&mut v, body) {
        dst.extend(src);
    }
    v
}

pub fn write_json(value: &Value, out: Option<&Path>) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    text.push('\n');
    write_text(&text, out)
}

pub fn write_csv<T: Serialize>(rows: &[T], out: Option<&Path>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(std::io::Error::other)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    write_text(&String::from_utf8_lossy(&bytes), out)
}

fn write_text(text: &str, out: Option<&Path>) -> std::io::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text),
        None => std::io::stdout().write_all(text.as_bytes()),
    }
}
