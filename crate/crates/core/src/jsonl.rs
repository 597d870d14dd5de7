//! Line-delimited JSON artifacts.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Reads every non-blank line of `path` as one `T`.
///
/// Errors carry the file name and 1-based line number.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("cannot open: {e}"),
    })?;
    parse_lines(BufReader::new(file), path)
}

pub fn parse_lines<T: DeserializeOwned, R: BufRead>(reader: R, path: &Path) -> Result<Vec<T>> {
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn to_line<T: Serialize>(item: &T) -> Result<String> {
    let mut line = serde_json::to_string(item)?;
    line.push('\n');
    Ok(line)
}

/// Replaces `path` with one line per item.
pub fn write<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        out.write_all(to_line(item)?.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Appends one line and flushes it, creating the file if needed.
pub fn append<T: Serialize>(path: &Path, item: &T) -> Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(to_line(item)?.as_bytes())?;
    file.flush()?;
    Ok(())
}
