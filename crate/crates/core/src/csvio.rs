//! Line-oriented comma-separated helpers shared by the stage file formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One non-blank data line: 1-based line number and its trimmed fields.
pub(crate) struct Record {
    pub line: usize,
    pub fields: Vec<String>,
}

/// Reads every non-blank line of `path`. A first line whose first field is
/// not numeric is treated as a header and skipped.
pub(crate) fn read_records(path: &Path) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_records(&text))
}

pub(crate) fn parse_records(text: &str) -> Vec<Record> {
    let mut out = Vec::new();
    let mut first = true;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if first {
            first = false;
            if fields[0].parse::<f64>().is_err() {
                continue;
            }
        }
        out.push(Record {
            line: idx + 1,
            fields,
        });
    }
    out
}

impl Record {
    pub fn expect_len(&self, path: &Path, n: usize) -> Result<()> {
        if self.fields.len() != n {
            return Err(self.error(
                path,
                format!("expected {n} fields, found {}", self.fields.len()),
            ));
        }
        Ok(())
    }

    pub fn f64(&self, path: &Path, idx: usize) -> Result<f64> {
        let raw = &self.fields[idx];
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(path, format!("field {} is not a finite number: {raw:?}", idx + 1))),
        }
    }

    pub fn usize(&self, path: &Path, idx: usize) -> Result<usize> {
        let raw = &self.fields[idx];
        raw.parse::<usize>()
            .map_err(|_| self.error(path, format!("field {} is not a non-negative integer: {raw:?}", idx + 1)))
    }

    pub fn u64(&self, path: &Path, idx: usize) -> Result<u64> {
        let raw = &self.fields[idx];
        raw.parse::<u64>()
            .map_err(|_| self.error(path, format!("field {} is not a non-negative integer: {raw:?}", idx + 1)))
    }

    pub fn error(&self, path: &Path, message: String) -> Error {
        Error::Parse {
            path: path.display().to_string(),
            line: self.line,
            message,
        }
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}
