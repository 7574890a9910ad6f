//! File helpers shared by every artifact writer.

use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Writes `bytes` to `path` atomically: temp file in the same directory, fsync, rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Serializes each item as one JSON line.
pub fn to_jsonl<'a, T, I>(items: I) -> Vec<u8>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record types serialize to JSON");
        out.push(b'\n');
    }
    out
}

/// One non-blank line of a JSONL stream, with its 1-based line number.
pub struct NumberedLine {
    pub line_no: usize,
    pub text: String,
}

/// Reads all non-blank lines, keeping their 1-based positions.
pub fn numbered_lines<R: BufRead>(reader: R) -> io::Result<Vec<NumberedLine>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        out.push(NumberedLine { line_no: idx + 1, text });
    }
    Ok(out)
}

/// Parses a JSONL file where every line is a `T`. Errors carry the line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let lines = numbered_lines(BufReader::new(file)).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    lines
        .into_iter()
        .map(|l| {
            serde_json::from_str(&l.text).map_err(|e| JsonlError::Parse {
                path: path.display().to_string(),
                line: l.line_no,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}
