//! Versioned CSV tables. The first line of every file is
//! `# schema: <name>` followed by the column header row.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const ESTIMATES_SCHEMA: &str = "iblab.mi-estimates.v1";
pub const BA_CURVE_SCHEMA: &str = "iblab.ba-curve.v1";
pub const TRAIN_LOG_SCHEMA: &str = "iblab.train-log.v1";
pub const ATTACK_SCHEMA: &str = "iblab.attack-report.v1";
pub const SWEEP_SCHEMA: &str = "iblab.sweep-points.v1";

pub fn write_csv<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# schema: {schema}").expect("vec write");
    {
        let mut w = csv::WriterBuilder::new()
            .has_headers(true)
            .from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    write_bytes(path, &buf)
}

/// Appends rows to an existing table, creating it (with schema line and
/// header) if absent.
pub fn append_csv<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    if !path.exists() {
        return write_csv(path, schema, rows);
    }
    check_schema(path, schema)?;
    let existing = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if existing.lines().count() < 2 {
        // schema line only: no header was written yet
        return write_csv(path, schema, rows);
    }
    let file = std::fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn check_schema(path: &Path, schema: &str) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    std::io::BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    let found = first
        .trim()
        .strip_prefix("# schema: ")
        .unwrap_or("<none>")
        .to_string();
    if found != schema {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            found,
            expected: schema.to_string(),
        });
    }
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>> {
    check_schema(path, schema)?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = std::io::BufReader::new(file);
    let mut skip = String::new();
    reader.read_line(&mut skip).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}
