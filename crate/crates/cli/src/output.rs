//! Writers that stamp every artifact with the config hash.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("cannot write {}: {e}", path.display()))
}

pub struct OutputDir {
    root: PathBuf,
    hash: String,
}

impl OutputDir {
    pub fn create(root: &Path, hash: &str) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            hash: hash.to_string(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes a CSV whose first line is `# config_sha256=<hash>` followed
    /// by `extra` comment lines.
    pub fn csv<R, I>(&self, name: &str, extra: &[String], header: &[&str], rows: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "# config_sha256={}", self.hash).map_err(|e| io_err(&path, e))?;
        for line in extra {
            writeln!(w, "# {line}").map_err(|e| io_err(&path, e))?;
        }
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(header).map_err(|e| io_err(&path, e))?;
        for r in rows {
            cw.write_record(r).map_err(|e| io_err(&path, e))?;
        }
        cw.flush().map_err(|e| io_err(&path, e))
    }

    /// Writes `{"config_sha256": ..., <fields of value>}` as pretty JSON.
    pub fn json(&self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let path = self.path(name);
        let body = stamped(&self.hash, value);
        let text = serde_json::to_string_pretty(&body).expect("report serializes");
        fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

/// Adds the hash to an object report; other values land under `report`.
pub fn stamped(hash: &str, value: &impl Serialize) -> Value {
    let mut out = serde_json::Map::new();
    out.insert("config_sha256".into(), Value::String(hash.into()));
    match serde_json::to_value(value).expect("report serializes") {
        Value::Object(fields) => out.extend(fields),
        other => {
            out.insert("report".into(), other);
        }
    }
    Value::Object(out)
}

/// Shortest round-trip form, with non-finite values spelled `nan`/`inf`.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:e}")
    }
}
