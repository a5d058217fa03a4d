//! Writing results in the requested format, plus the run manifest that
//! accompanies every file written.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::svg::Chart;
use crate::table::Table;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    /// Format implied by a file extension, if any.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Format::Csv),
            "json" => Some(Format::Json),
            "svg" => Some(Format::Svg),
            _ => None,
        }
    }
}

/// A command's result in all the shapes it can be emitted as.
#[derive(Debug, Clone)]
pub struct Output {
    pub table: Table,
    /// JSON document used instead of the table's row array.
    pub json: Option<Value>,
    pub chart: Option<Chart>,
}

impl Output {
    pub fn new(table: Table) -> Self {
        Self { table, json: None, chart: None }
    }

    pub fn with_chart(mut self, chart: Chart) -> Self {
        self.chart = Some(chart);
        self
    }

    pub fn render(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Csv => {
                let mut buf = Vec::new();
                self.table.write_csv(&mut buf)?;
                Ok(buf)
            }
            Format::Json => {
                if self.table.rows.is_empty() && self.json.is_none() {
                    return Err(CliError::Validation("nothing to write".into()));
                }
                let doc = self.json.clone().unwrap_or_else(|| self.table.to_json());
                let mut buf = serde_json::to_vec_pretty(&doc)?;
                buf.push(b'\n');
                Ok(buf)
            }
            Format::Svg => match &self.chart {
                Some(chart) => Ok(chart.render()?.into_bytes()),
                None => Err(CliError::Validation("this command has no chart output; use csv or json".into())),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputChecksum {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub parameters: Value,
    pub seed: Option<u64>,
    pub timestamp: String,
    pub outputs: Vec<OutputChecksum>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `<file>.manifest.json` next to `path`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

/// Collects the files a command writes and records them in one manifest.
pub struct Emitter {
    command: String,
    parameters: Value,
    seed: Option<u64>,
    written: Vec<(PathBuf, OutputChecksum)>,
}

impl Emitter {
    pub fn new(command: &str, parameters: impl Serialize, seed: Option<u64>) -> Result<Self, CliError> {
        Ok(Self { command: command.into(), parameters: serde_json::to_value(parameters)?, seed, written: Vec::new() })
    }

    pub fn write_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(path, bytes).map_err(CliError::io(path))?;
        self.written.push((
            path.to_path_buf(),
            OutputChecksum {
                file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(bytes),
            },
        ));
        Ok(())
    }

    /// Writes to `path`, or to stdout without a manifest entry when `path` is `None`.
    pub fn emit(&mut self, output: &Output, format: Format, path: Option<&Path>) -> Result<(), CliError> {
        let bytes = output.render(format)?;
        match path {
            Some(p) => self.write_bytes(p, &bytes),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(&bytes)?;
                stdout.flush()?;
                Ok(())
            }
        }
    }

    /// Writes the manifest next to the first output file. No-op if nothing was written.
    pub fn finish(self) -> Result<Option<PathBuf>, CliError> {
        let Some((first, _)) = self.written.first() else {
            return Ok(None);
        };
        let path = manifest_path(first);
        let manifest = RunManifest {
            tool: "reservoir",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            parameters: self.parameters,
            seed: self.seed,
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            outputs: self.written.into_iter().map(|(_, c)| c).collect(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).map_err(CliError::io(&path))?;
        Ok(Some(path))
    }
}
