//! Newline-delimited JSON helpers shared by the stores.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path, source: io::Error) -> JsonlError {
    JsonlError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads every non-blank line of `path` as a `T`. Line numbers are 1-based.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Like [`read`], but a final line that fails to parse is treated as a torn
/// write and dropped. Returns the records and whether a torn tail was found.
pub fn read_tolerant<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, bool), JsonlError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(_) if i + 1 == lines.len() => return Ok((out, true)),
            Err(source) => {
                return Err(JsonlError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    source,
                })
            }
        }
    }
    Ok((out, false))
}

pub fn to_line<T: Serialize>(value: &T) -> String {
    // Plain data structs never fail to serialize.
    serde_json::to_string(value).expect("serializable record")
}

/// Writes all records atomically (temp file + rename).
pub fn write_all<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&to_line(r));
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), JsonlError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(path, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Appends records to `path`, creating it if needed.
pub fn append<T: Serialize>(path: &Path, records: &[T]) -> Result<(), JsonlError> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let mut buf = String::new();
    for r in records {
        buf.push_str(&to_line(r));
        buf.push('\n');
    }
    f.write_all(buf.as_bytes()).map_err(|e| io_err(path, e))?;
    f.flush().map_err(|e| io_err(path, e))
}

/// Reads a whole-file JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, JsonlError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| JsonlError::Parse {
        path: path.display().to_string(),
        line: 1,
        source,
    })
}

pub fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), JsonlError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable record");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}
