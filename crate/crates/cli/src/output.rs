//! CSV and JSON artifacts with a reproducibility header and schema sidecar.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use ntk_core::{NtkError, Result};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Column {
    pub name: String,
    pub description: String,
}

impl Column {
    pub fn new(name: &str, description: &str) -> Self {
        Self::owned(name.into(), description.into())
    }

    pub fn owned(name: String, description: String) -> Self {
        Self { name, description }
    }
}

/// Provenance written as `#` lines above the CSV header.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub version: &'static str,
    pub command: String,
    pub config: String,
    pub seed: u64,
    pub created_unix: u64,
}

impl Meta {
    pub fn new(command: &str, config: String, seed: u64) -> Self {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self { version: env!("CARGO_PKG_VERSION"), command: command.into(), config, seed, created_unix }
    }
}

#[derive(Debug, Serialize)]
struct Schema<'a> {
    version: &'static str,
    command: &'a str,
    header_prefix: &'static str,
    float_format: &'static str,
    columns: &'a [Column],
}

pub struct CsvTable {
    columns: Vec<Column>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: Vec<Column>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Writes `path` and `<stem>.schema.json` next to it.
    pub fn write(&self, path: &Path, meta: &Meta) -> Result<()> {
        let mut body = Vec::new();
        for line in [
            format!("ntk {}", meta.version),
            format!("command: {}", meta.command),
            format!("config: {}", meta.config),
            format!("seed: {}", meta.seed),
            format!("created_unix: {}", meta.created_unix),
        ] {
            writeln!(body, "# {line}")?;
        }
        {
            let mut w = csv::Writer::from_writer(&mut body);
            let io = |e: csv::Error| NtkError::Io(e.to_string());
            w.write_record(self.columns.iter().map(|c| c.name.as_str())).map_err(io)?;
            for row in &self.rows {
                w.write_record(row).map_err(io)?;
            }
            w.flush()?;
        }
        atomic_write(path, &body)?;
        let schema = Schema {
            version: meta.version,
            command: &meta.command,
            header_prefix: "#",
            float_format: "{:.16e}",
            columns: &self.columns,
        };
        write_json(&schema_path(path), &schema)
    }
}

pub fn schema_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "ntk".into());
    path.with_file_name(format!("{stem}.schema.json"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| NtkError::Io(e.to_string()))?;
    text.push(b'\n');
    atomic_write(path, &text)
}

/// Temp file in the target directory, then rename.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| NtkError::Io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| NtkError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}
