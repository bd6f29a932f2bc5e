//! Command layer: config resolution, presets, run directories and the study
//! commands built on the trainer.

mod commands;
mod spec;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::commands::{
    cmd_ablate_occ, cmd_eval, cmd_mask_study, cmd_render, cmd_train, load_run, AblationRow, EvalSplit, LoadedRun, TrainOptions,
    TrainSummary,
};
pub use self::spec::{
    parse_config_text, preset, read_config_file, resolve, valid_keys, LoadedScene, ProtocolKind, RunSpec, SceneSpec, PRESET_NAMES,
    SCENE_KEYS,
};
use crate::autodiff::CheckpointError;
use crate::metrics::MetricError;
use crate::rendering::RenderError;
use crate::trainer::TrainError;

/// Failure classes with distinct process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::Config(_) | TrainError::Resume(_) | TrainError::Field(_) | TrainError::Loss(_) => CliError::Config(e.to_string()),
            TrainError::NonFinite { .. } | TrainError::Autodiff(_) | TrainError::Metric(_) => CliError::Numeric(e.to_string()),
            TrainError::Render(r) => CliError::from_render(r, e.to_string()),
            TrainError::Checkpoint(_) | TrainError::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl CliError {
    fn from_render(r: &RenderError, msg: String) -> Self {
        match r {
            RenderError::Image(_) => CliError::Io(msg),
            RenderError::NonFiniteDensity { .. } => CliError::Numeric(msg),
            _ => CliError::Config(msg),
        }
    }
}

impl From<RenderError> for CliError {
    fn from(e: RenderError) -> Self {
        let msg = e.to_string();
        CliError::from_render(&e, msg)
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Reduction mode recorded in every manifest.
pub const DETERMINISM: &str = "bitwise: fixed shard order, results independent of thread count";

/// Everything needed to rerun a command, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub label: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub threads: usize,
    pub determinism: String,
    pub outputs: BTreeMap<String, String>,
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, spec: &RunSpec) -> Self {
        RunManifest {
            command: command.into(),
            label: spec.label().into(),
            config: spec.to_pairs(),
            seed: spec.train.seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: unix_now(),
            finished_unix: 0,
            threads: crate::trainer::resolve_threads(spec.train.threads),
            determinism: DETERMINISM.into(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(&mut self, dir: &Path) -> Result<(), CliError> {
        self.finished_unix = unix_now();
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        write_atomic(&dir.join("manifest.json"), text.as_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::Io(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
