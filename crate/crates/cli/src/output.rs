//! Output files. JSON objects carry a `config_hash` field; CSV tables start with a
//! `# config_hash: …` comment line. Nothing time-dependent is written.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::{RunConfig, Task};
use crate::CliError;

pub struct Sink {
    dir: PathBuf,
    hash: String,
    files: Vec<PathBuf>,
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Sink {
    pub fn new(dir: &Path, hash: &str) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(io_error(dir))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash: hash.to_string(),
            files: Vec::new(),
        })
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_error(&path))?;
        if !self.files.contains(&path) {
            self.files.push(path);
        }
        Ok(())
    }

    /// Writes `value` as pretty JSON with a `config_hash` field added (keys are sorted).
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let value = serde_json::to_value(value).map_err(|e| CliError::Numerical(format!("serializing {name}: {e}")))?;
        let mut obj = Map::new();
        obj.insert("config_hash".into(), Value::String(self.hash.clone()));
        match value {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("result".into(), other);
            }
        }
        let mut bytes = serde_json::to_vec_pretty(&Value::Object(obj)).expect("json value serializes");
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Writes a CSV table with a hash comment line.
    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut buf = Vec::new();
        writeln!(buf, "# config_hash: {}", self.hash).expect("in-memory write");
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            let err = |e: csv::Error| CliError::Numerical(format!("formatting {name}: {e}"));
            w.write_record(header).map_err(err)?;
            for row in rows {
                w.write_record(row).map_err(err)?;
            }
            w.flush().map_err(|e| CliError::Numerical(format!("formatting {name}: {e}")))?;
        }
        self.write(name, &buf)
    }

    /// Raw bytes after the hash comment line (for tables produced elsewhere).
    pub fn csv_bytes(&mut self, name: &str, body: &[u8]) -> Result<(), CliError> {
        let mut buf = format!("# config_hash: {}\n", self.hash).into_bytes();
        buf.extend_from_slice(body);
        self.write(name, &buf)
    }
}

/// Formats a float losslessly.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// Reproducibility record of a run.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub task: String,
    pub version: &'static str,
    pub schema_version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    /// Every numerical setting in effect, including internal constants.
    pub tolerances: Map<String, Value>,
    pub decisions: Vec<String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(task: Task, config: &RunConfig, hash: &str) -> Self {
        Self {
            task: task.name().to_string(),
            version: env!("CARGO_PKG_VERSION"),
            schema_version: config.schema_version,
            config_hash: hash.to_string(),
            config: config.clone(),
            tolerances: Map::new(),
            decisions: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn tolerance(&mut self, name: &str, value: impl Into<Value>) {
        let value = value.into();
        log::info!("tolerance {name} = {value}");
        self.tolerances.insert(name.to_string(), value);
    }

    pub fn decide(&mut self, text: impl Into<String>) {
        let text = text.into();
        log::info!("decision: {text}");
        self.decisions.push(text);
    }
}
