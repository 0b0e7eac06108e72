//! Output files. Every file starts with a provenance line naming the tool
//! version, the configuration hash and the master seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub master_seed: u64,
}

impl Provenance {
    pub fn new(config_sha256: String, master_seed: u64) -> Self {
        Provenance { tool: "rram-mcmc".into(), version: VERSION.into(), config_sha256, master_seed }
    }

    /// `# rram-mcmc <version> config_sha256=<hash> master_seed=<seed>`
    pub fn header_line(&self) -> String {
        format!(
            "# {} {} config_sha256={} master_seed={}",
            self.tool, self.version, self.config_sha256, self.master_seed
        )
    }
}

/// Writes files under one output directory.
pub struct OutputDir {
    root: PathBuf,
    provenance: Provenance,
}

impl OutputDir {
    pub fn create(root: &Path, provenance: Provenance) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(OutputDir { root: root.to_path_buf(), provenance })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    fn write(&self, rel: &str, body: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    /// CSV with the provenance comment as its first line.
    pub fn csv<R: Serialize>(&self, rel: &str, rows: impl IntoIterator<Item = R>) -> Result<PathBuf, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| CliError::Data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        let mut body = self.provenance.header_line();
        body.push('\n');
        body.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
        self.write(rel, &body)
    }

    /// CSV with an explicit header and pre-formatted rows.
    pub fn csv_raw(
        &self,
        rel: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<f64>>,
    ) -> Result<PathBuf, CliError> {
        let mut body = self.provenance.header_line();
        body.push('\n');
        body.push_str(&header.join(","));
        body.push('\n');
        for r in rows {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(body, "{}", cells.join(","));
        }
        self.write(rel, &body)
    }

    /// JSON object `{"provenance": ..., "<key>": value}`.
    pub fn json<T: Serialize>(&self, rel: &str, key: &str, value: &T) -> Result<PathBuf, CliError> {
        let value = serde_json::to_value(value).map_err(|e| CliError::Data(e.to_string()))?;
        let mut doc = serde_json::Map::new();
        doc.insert("provenance".into(), json!(self.provenance));
        doc.insert(key.into(), value);
        let text = serde_json::to_string_pretty(&Value::Object(doc)).expect("json value serializes");
        self.write(rel, &(text + "\n"))
    }

    /// Raw text (already containing its own provenance).
    pub fn text(&self, rel: &str, body: &str) -> Result<PathBuf, CliError> {
        self.write(rel, body)
    }
}

/// Strip a leading provenance comment from CSV text.
pub fn strip_provenance(text: &str) -> &str {
    match text.strip_prefix('#') {
        Some(rest) => rest.split_once('\n').map_or("", |(_, body)| body),
        None => text,
    }
}
