use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Numeric table read from a delimited file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

pub fn delimiter_byte(s: &str) -> CliResult<u8> {
    match s {
        "tab" | "\\t" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(CliError::Config(format!(
            "delimiter must be a single ASCII character or 'tab', got {s:?}"
        ))),
    }
}

pub fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_to_string(path: &Path) -> CliResult<String> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|source| CliError::Read {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(s)
}

/// Parses a rectangular numeric table. Errors carry the 1-based line number.
pub fn read_table<R: Read>(reader: R, delimiter: u8, header: bool) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names = if header {
        let h = rdr.headers().map_err(csv_error)?;
        Some(h.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };
    let mut width = names.as_ref().map(Vec::len);
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(CliError::parse(
                    line,
                    format!("expected {w} fields, found {}", record.len()),
                ))
            }
            None => width = Some(record.len()),
            _ => {}
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(k, field)| parse_value(field, k, line))
            .collect::<CliResult<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table {
        header: names,
        rows,
    })
}

fn parse_value(field: &str, column: usize, line: Option<u64>) -> CliResult<f64> {
    let x: f64 = field.parse().map_err(|_| {
        CliError::parse(
            line,
            format!("field {} is not a number: {field:?}", column + 1),
        )
    })?;
    if !x.is_finite() {
        return Err(CliError::parse(
            line,
            format!("field {} is not finite", column + 1),
        ));
    }
    Ok(x)
}

fn csv_error(e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line());
    CliError::parse(line, e.to_string())
}
