use std::io::Write;

use serde::Deserialize;
use sheetsew_core::identities::run_identity_suite;

use super::{params, parse_params, Experiment};
use crate::config::{ExperimentConfig, Violation};
use crate::error::CliError;
use crate::manifest::RunContext;

/// Randomised identity checks of the increment algebra; `samples` is the
/// trial count per identity (default 10⁴).
pub struct AlgebraSelftest;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {}

const DEFAULT_TRIALS: usize = 10_000;

impl Experiment for AlgebraSelftest {
    fn name(&self) -> &'static str {
        "algebra-selftest"
    }

    fn validate(&self, config: &ExperimentConfig) -> Vec<Violation> {
        parse_params::<Params>(config).err().into_iter().collect()
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), CliError> {
        let _: Params = params(&ctx.config)?;
        let trials = ctx.config.samples_or(DEFAULT_TRIALS);
        let seed = ctx.seed();
        let report = ctx.stage("identities", || run_identity_suite(trials, seed))?;
        ctx.write_json("identity_report.json", &report)?;
        ctx.write_csv("identities.csv", |w| {
            writeln!(w, "identity,trials,passed,worst_error")?;
            for c in &report.checks {
                writeln!(w, "{},{},{},{:e}", c.name, c.trials, c.passed, c.worst_error)?;
            }
            Ok(())
        })?;
        for c in &report.checks {
            ctx.check(
                c.name,
                c.ok(),
                format!("{}/{} within {:e}, worst {:e}", c.passed, c.trials, report.tolerance, c.worst_error),
            );
        }
        Ok(())
    }
}
