use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::ser::Error as _;
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: &str = "1.0";

/// A float written with 17 significant digits; non-finite values become `null`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

pub fn format_number(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.16e}")
}

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return s.serialize_none();
        }
        RawValue::from_string(format_number(self.0))
            .map_err(S::Error::custom)?
            .serialize(s)
    }
}

pub fn nums(v: &[f64]) -> Vec<Num> {
    v.iter().copied().map(Num).collect()
}

pub fn matrix(m: &DMatrix<f64>) -> Vec<Vec<Num>> {
    m.row_iter()
        .map(|r| r.iter().copied().map(Num).collect())
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

impl Metadata {
    pub fn new(command: &'static str, input: Option<&Path>) -> Self {
        Metadata {
            tool: "blockcorr",
            version: env!("CARGO_PKG_VERSION"),
            command,
            input: input
                .and_then(Path::file_name)
                .map(|s| s.to_string_lossy().into_owned()),
        }
    }
}

/// Writes pretty JSON with a trailing newline to `path`, or stdout when absent.
pub fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let mut text =
        serde_json::to_vec_pretty(value).map_err(|e| CliError::write("report", e.into()))?;
    text.push(b'\n');
    write_bytes(&text, path)
}

pub fn write_bytes(bytes: &[u8], path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => {
            std::fs::write(p, bytes).map_err(|e| CliError::write(p.display().to_string(), e))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::write("stdout", e))
        }
    }
}
