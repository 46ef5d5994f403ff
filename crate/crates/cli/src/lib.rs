//! Batch driver for the spikelab tools: reads a JSON run configuration, runs one task and
//! writes JSON reports and CSV tables, each stamped with the configuration hash, plus a
//! `manifest.json` listing every tolerance and decision used.

pub mod config;
mod output;
mod tasks;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{RunConfig, Task};

/// Exit code for a rejected configuration.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for a numerical failure.
pub const EXIT_NUMERICAL: i32 = 3;
/// Exit code for I/O failures while writing outputs.
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config field '{field}': {message}")]
    Validation { field: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => EXIT_VALIDATION,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

/// Files written by a successful run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub files: Vec<PathBuf>,
}

/// Default output directory when neither the command line nor the config names one.
pub const DEFAULT_OUT_DIR: &str = "spikelab-out";

/// Loads `config_path` and runs `task`, or the config's `task` when none is given.
/// `out` and `seed` override the config.
pub fn run(task: Option<Task>, config_path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<RunOutcome, CliError> {
    let config = RunConfig::load(config_path)?;
    let task = match (task, config.task) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::Validation {
                field: "task".into(),
                message: format!("command line asks for '{a}' but the config says '{b}'"),
            })
        }
        (Some(t), _) | (None, Some(t)) => t,
        (None, None) => {
            return Err(CliError::Validation {
                field: "task".into(),
                message: "no task given on the command line or in the config".into(),
            })
        }
    };
    run_config(task, config, out, seed)
}

/// Runs `task` on an already parsed configuration.
pub fn run_config(
    task: Task,
    mut config: RunConfig,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<RunOutcome, CliError> {
    if let Some(s) = seed {
        config.seed = s;
    }
    config.task = Some(task);
    config.validate(task)?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| config.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    // the output location does not change results, so it stays out of the hash
    config.out = None;
    let hash = config.hash();
    log::info!("task {task}, config hash {hash}, output {}", out_dir.display());
    let mut sink = output::Sink::new(&out_dir, &hash)?;
    let mut manifest = output::Manifest::new(task, &config, &hash);
    tasks::execute(task, &config, &mut sink, &mut manifest)?;
    manifest.outputs = sink.files().iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    sink.json("manifest.json", &manifest)?;
    Ok(RunOutcome {
        out_dir,
        config_hash: hash,
        files: sink.files().to_vec(),
    })
}
