//! Reproducible experiment runner for `sheetsew-core`.
//!
//! A run reads one JSON [`ExperimentConfig`], validates it, executes the
//! named experiment inside a fixed-size worker pool and leaves CSV/JSON
//! outputs, a copy of the effective config and a `manifest.json` in the
//! output directory.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;

pub use config::{ExperimentConfig, Overrides, Severity, Violation};
pub use error::CliError;
pub use manifest::{Check, RunManifest};

use experiments::experiment_registry;
use manifest::RunContext;

/// Every problem with `config`, errors and warnings alike. Runs proceed
/// when no entry is an error.
pub fn validate(config: &ExperimentConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if config.workers == Some(0) {
        out.push(Violation::error("workers", "must be at least 1"));
    }
    if config.samples == Some(0) {
        out.push(Violation::error("samples", "must be at least 1"));
    }
    match experiment_registry().get(&config.experiment) {
        Ok(ctor) => out.extend(ctor().validate(config)),
        Err(e) => out.push(Violation::error("experiment", e.to_string())),
    }
    out
}

/// Validates and runs `config`. Failed checks are recorded in the manifest;
/// [`exit_code`] turns them into status 3 under `--check`.
pub fn run(config: ExperimentConfig) -> Result<RunManifest, CliError> {
    let (errors, warnings): (Vec<_>, Vec<_>) = validate(&config).into_iter().partition(Violation::is_error);
    if !errors.is_empty() {
        return Err(CliError::Validation(errors));
    }
    let experiment = experiment_registry()
        .get(&config.experiment)
        .map_err(|e| CliError::Validation(vec![Violation::error("experiment", e.to_string())]))?();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Validation(vec![Violation::error("workers", e.to_string())]))?;
    let mut ctx = RunContext::new(config.clone())?;
    ctx.write_json("config.json", &config)?;
    pool.install(|| experiment.run(&mut ctx))?;
    ctx.finish(pool.current_num_threads(), warnings)
}

pub fn exit_code(result: &Result<RunManifest, CliError>, check: bool) -> i32 {
    match result {
        Ok(m) if check && !m.all_checks_passed() => 3,
        Ok(_) => 0,
        Err(e) => e.exit_code(),
    }
}
