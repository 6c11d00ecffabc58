use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_SCENES: &str = "patchlab.scenes";
pub const FORMAT_QA: &str = "patchlab.qa";
pub const FORMAT_DETECTIONS: &str = "patchlab.detections";

const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Writes a versioned JSONL file: one header line, then one record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, format: &str, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header { format: format.to_string(), version: VERSION };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_jsonl`], validating the header.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path, format: &str) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Persist(format!("{}: empty file", path.display())))??;
    let header: Header = serde_json::from_str(&first).map_err(|e| {
        Error::Persist(format!("{}: bad header: {e}", path.display()))
    })?;
    if header.format != format {
        return Err(Error::Persist(format!(
            "{}: format is {:?}, expected {:?}",
            path.display(),
            header.format,
            format
        )));
    }
    if header.version != VERSION {
        return Err(Error::Persist(format!(
            "{}: version {} is not supported (this build reads {})",
            path.display(),
            header.version,
            VERSION
        )));
    }
    let mut items = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| {
            Error::Persist(format!("{}: line {}: {e}", path.display(), no + 2))
        })?;
        items.push(item);
    }
    Ok(items)
}
