//! JSON report envelope and flat CSV tables.

use std::io::Write;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct ReportEnvelope<T: Serialize> {
    pub tool_version: String,
    pub command: String,
    /// Effective configuration after defaults, sufficient to replay the run.
    pub config_echo: Map<String, Value>,
    pub results: T,
    pub warnings: Vec<String>,
}

impl<T: Serialize> ReportEnvelope<T> {
    pub fn new(
        command: &str,
        config_echo: Map<String, Value>,
        results: T,
        warnings: Vec<String>,
    ) -> Self {
        ReportEnvelope {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            config_echo,
            results,
            warnings,
        }
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }
}

/// A header plus rows of already formatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I, S>(&mut self, row: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        self.rows
            .push(row.into_iter().map(|s| s.to_string()).collect());
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        out.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            out.write_record(row).map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Formats an optional number, leaving the cell empty when absent.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_is_valid_json() {
        let mut cfg = Map::new();
        cfg.insert("rank".into(), 3.into());
        let env = ReportEnvelope::new("noise", cfg, vec![1.0, f64::NAN], vec!["w".into()]);
        let mut buf = Vec::new();
        env.write_json(&mut buf).unwrap();
        let v: Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["command"], "noise");
        assert_eq!(v["config_echo"]["rank"], 3);
        assert_eq!(v["results"][1], Value::Null);
        assert_eq!(v["tool_version"], TOOL_VERSION);
    }

    #[test]
    fn table_csv() {
        let mut t = Table::new(&["a", "b"]);
        t.push([1.5, 2.0]);
        t.push(["x", ""]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n1.5,2\nx,\n");
    }
}
