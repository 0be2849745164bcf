//! JSON run reports. See `docs/report-schema.md` for the layout.

use std::collections::BTreeMap;
use std::path::Path;

use abreu_core::estimates::BoundsReport;
use abreu_core::solver::ContinuityTrace;
use serde::Serialize;
use serde_json::Value;

use crate::fieldfile::{self, FieldFileError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

impl Default for Tool {
    fn default() -> Self {
        Self {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridInfo {
    pub dim: usize,
    pub resolution: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool: Tool,
    pub command: String,
    pub arguments: Vec<String>,
    pub config: Value,
    pub grid: Option<GridInfo>,
    pub trace: Option<ContinuityTrace>,
    pub bounds: Option<BoundsReport>,
    pub residuals: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub status: &'static str,
    pub error: Option<String>,
    pub exit_code: i32,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn new(command: &str, arguments: Vec<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: Tool::default(),
            command: command.to_string(),
            arguments,
            config: Value::Null,
            grid: None,
            trace: None,
            bounds: None,
            residuals: BTreeMap::new(),
            warnings: Vec::new(),
            status: "ok",
            error: None,
            exit_code: 0,
            wall_clock_seconds: 0.0,
        }
    }

    /// Serializes with non-finite numbers replaced by `null`.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&value).expect("report serializes") + "\n"
    }

    pub fn write(&self, path: &Path) -> Result<(), FieldFileError> {
        fieldfile::write_atomic(path, self.to_json().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_fields_present() {
        let mut r = RunReport::new("solve", vec!["--dim".into(), "1".into()]);
        r.residuals.insert("final".into(), f64::NAN);
        let v: Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["command"], "solve");
        assert_eq!(v["tool"]["name"], "abreu-cli");
        assert!(v["residuals"]["final"].is_null());
        assert_eq!(v["status"], "ok");
    }
}
