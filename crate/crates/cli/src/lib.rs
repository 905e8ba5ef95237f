//! Experiment runners over `geoflow-core`: configuration, dispatch and
//! result persistence.

pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use geoflow_core::GeoError;
use serde::Serialize;

pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed or inconsistent configuration; exit status 2.
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Geo(GeoError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        match e {
            GeoError::Config(m) => CliError::Usage(m),
            other => CliError::Geo(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// Machine-readable form for standard error.
    pub fn to_json(&self) -> String {
        let kind = match self {
            CliError::Usage(_) => "usage",
            CliError::Geo(_) => "numerical",
            CliError::Io(_) => "io",
        };
        serde_json::json!({ "error": { "kind": kind, "message": self.to_string() } }).to_string()
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// A named output file.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn new(name: impl Into<String>, bytes: Vec<u8>) -> Self {
        Self { name: name.into(), bytes }
    }
}

/// What a command hands back to the runner.
pub struct Outcome {
    pub passed: bool,
    pub verdict: String,
    pub result: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

pub(crate) fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report types serialize")
}

#[derive(Serialize)]
struct Report<'a> {
    experiment: &'a str,
    config_hash: &'a str,
    config: &'a ExperimentConfig,
    passed: bool,
    verdict: &'a str,
    result: &'a serde_json::Value,
}

/// Where a finished run was written.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub passed: bool,
    pub verdict: String,
    pub report: PathBuf,
}

/// Runs `cfg` and writes `<out>/<experiment>/<hash>/`; the manifest is written last.
pub fn run_config(cfg: &ExperimentConfig, out: &Path) -> CliResult<RunRecord> {
    let started = Instant::now();
    let outcome = commands::dispatch(cfg)?;
    let hash = cfg.hash();
    let name = cfg.experiment.name();
    let dir = out.join(name).join(&hash);
    std::fs::create_dir_all(&dir)?;
    let report = Report { experiment: name, config_hash: &hash, config: cfg, passed: outcome.passed, verdict: &outcome.verdict, result: &outcome.result };
    let mut files = outcome.artifacts;
    files.push(Artifact::new("report.json", io::to_json(&report).map_err(|e| CliError::Io(e.into()))?));
    if cfg.output.format == config::Format::Csv {
        files.push(Artifact::new("summary.csv", manifest::summary_csv(&outcome.result)));
    }
    for f in &files {
        std::fs::write(dir.join(&f.name), &f.bytes)?;
    }
    let m = manifest::RunManifest::new(cfg, &hash, &files, started.elapsed().as_secs_f64(), outcome.passed);
    std::fs::write(dir.join("manifest.json"), io::to_json(&m).map_err(|e| CliError::Io(e.into()))?)?;
    Ok(RunRecord { report: dir.join("report.json"), dir, passed: outcome.passed, verdict: outcome.verdict })
}
