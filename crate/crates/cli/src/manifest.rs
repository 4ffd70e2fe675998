use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{ExperimentConfig, Violation};
use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// One pass/fail comparison against a configured threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub workers: usize,
    pub wall_seconds: f64,
    pub stages: Vec<StageTiming>,
    pub outputs: Vec<String>,
    pub warnings: Vec<Violation>,
    pub checks: Vec<Check>,
}

impl RunManifest {
    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(|c| format!("{} ({})", c.name, c.detail)).collect()
    }
}

/// Writes a file by renaming a sibling temporary into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let err = |source| CliError::Output { path: path.to_path_buf(), source };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = std::fs::File::create(&tmp).map_err(err)?;
    f.write_all(bytes).map_err(err)?;
    f.sync_all().map_err(err)?;
    std::fs::rename(&tmp, path).map_err(err)
}

/// Run state shared by the stages of one experiment. Outputs go through
/// here from the driving thread only, so file writes never interleave.
pub struct RunContext {
    pub config: ExperimentConfig,
    out: PathBuf,
    started: Instant,
    stages: Vec<StageTiming>,
    outputs: Vec<String>,
    checks: Vec<Check>,
}

impl RunContext {
    pub fn new(config: ExperimentConfig) -> Result<Self, CliError> {
        let out = config.out.clone();
        std::fs::create_dir_all(&out).map_err(|source| CliError::Output { path: out.clone(), source })?;
        Ok(Self { config, out, started: Instant::now(), stages: Vec::new(), outputs: Vec::new(), checks: Vec::new() })
    }

    pub fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Runs one named stage, recording its time and tagging core errors.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> sheetsew_core::Result<T>) -> Result<T, CliError> {
        let t0 = Instant::now();
        let res = f();
        self.stages.push(StageTiming { stage: name.into(), seconds: t0.elapsed().as_secs_f64() });
        res.map_err(|source| CliError::Stage { stage: name.into(), source })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.out.join(name), bytes)?;
        self.outputs.push(name.into());
        Ok(())
    }

    /// Renders CSV through a closure writing into a buffer.
    pub fn write_csv(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|source| CliError::Output { path: self.out.join(name), source })?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check::new(name, passed, detail));
    }

    pub fn finish(mut self, workers: usize, warnings: Vec<Violation>) -> Result<RunManifest, CliError> {
        self.write_json("checks.json", &self.checks.clone())?;
        let manifest = RunManifest {
            experiment: self.config.experiment.clone(),
            config_hash: self.config.hash(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: self.config.seed,
            workers,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            stages: self.stages,
            outputs: self.outputs,
            warnings,
            checks: self.checks,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&self.out.join("manifest.json"), &bytes)?;
        Ok(manifest)
    }
}
