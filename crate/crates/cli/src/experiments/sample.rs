use std::io::Write;

use rayon::prelude::*;
use serde::Deserialize;
use sheetsew_core::fields::FieldSample;
use sheetsew_core::stats::mean;

use super::{params, parse_params, Experiment, FieldSpec};
use crate::config::{ExperimentConfig, Violation};
use crate::error::CliError;
use crate::manifest::RunContext;

/// Draws an ensemble of sheets and compares the empirical variance at the
/// far corner with the model covariance.
pub struct Sample;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    field: FieldSpec,
    /// Write every sample's values; off leaves only the summary.
    #[serde(default = "yes")]
    write_paths: bool,
    /// Allowed deviation of the corner variance in standard errors.
    #[serde(default = "four")]
    variance_sigmas: f64,
}

fn yes() -> bool {
    true
}

fn four() -> f64 {
    4.0
}

const DEFAULT_SAMPLES: usize = 4;

impl Experiment for Sample {
    fn name(&self) -> &'static str {
        "sample"
    }

    fn validate(&self, config: &ExperimentConfig) -> Vec<Violation> {
        match parse_params::<Params>(config) {
            Ok(p) => p.field.violations("params.field"),
            Err(v) => vec![v],
        }
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), CliError> {
        let p: Params = params(&ctx.config)?;
        let n = ctx.config.samples_or(DEFAULT_SAMPLES);
        let seed = ctx.seed();
        let sampler = ctx.stage("factorise", || p.field.sampler())?;
        let paths: Vec<FieldSample> = ctx.stage("sample", || {
            (0..n as u64).into_par_iter().map(|k| sampler.sample(seed, k)).collect()
        })?;
        if p.write_paths {
            let grid = sampler.grid();
            ctx.write_csv("samples.csv", |w| {
                let d = grid.dim();
                let coords: Vec<String> = (1..=d).map(|i| format!("t{i}")).collect();
                writeln!(w, "sample,{},comp,value", coords.join(","))?;
                for path in &paths {
                    for c in 0..path.components {
                        for (k, v) in path.component(c).iter().enumerate() {
                            let pt = grid.point(k);
                            let t: Vec<String> = pt.coords().iter().map(|x| x.to_string()).collect();
                            writeln!(w, "{},{},{},{}", path.sample, t.join(","), c, v)?;
                        }
                    }
                }
                Ok(())
            })?;
        }
        let grid = sampler.grid();
        let corner = grid.len() - 1;
        let t = grid.point(corner);
        let exact = ctx.stage("covariance", || p.field.model.covariance(&t, &t))?;
        let draws: Vec<f64> = paths.iter().map(|s| s.component(0)[corner].powi(2)).collect();
        let empirical = mean(&draws);
        // Var of a squared centred Gaussian is 2σ⁴.
        let se = exact * (2.0 / n as f64).sqrt();
        ctx.write_csv("corner_variance.csv", |w| {
            writeln!(w, "samples,exact,empirical,stderr")?;
            writeln!(w, "{n},{exact},{empirical},{se}")
        })?;
        ctx.check(
            "corner_variance",
            (empirical - exact).abs() <= p.variance_sigmas * se,
            format!("empirical {empirical:.5} vs exact {exact:.5} ± {se:.5}"),
        );
        Ok(())
    }
}
