use std::io::Write;

use serde::{Deserialize, Serialize};
use sheetsew_core::conditioning::LndNotion;
use sheetsew_core::fields::{FieldModel, FixedPath};
use sheetsew_core::occupation::{decay_target, moment_decay_fit, plateau_ramp_path, quadrature_registry, DecayOptions, RegularityFit};
use sheetsew_core::sewing::PathEnsemble;

use super::{params, parse_params, rect_or_domain, zeta_violations, Experiment, FieldSpec, RectSpec};
use crate::config::{ExperimentConfig, Violation};
use crate::error::CliError;
use crate::manifest::RunContext;

/// Decay of `‖□μ̂(z)‖_m` in `|z|` for an ensemble of sheets, with a
/// deterministic plateau path as the no-decay control.
pub struct Occupation;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    #[serde(default = "default_field")]
    field: FieldSpec,
    #[serde(default)]
    rect: Option<RectSpec>,
    /// Explicit radii; otherwise `radius_count` geometric radii from
    /// `radius_min` to `radius_max`.
    #[serde(default)]
    radii: Option<Vec<f64>>,
    #[serde(default = "radius_min")]
    radius_min: f64,
    #[serde(default = "radius_max")]
    radius_max: f64,
    #[serde(default = "radius_count")]
    radius_count: usize,
    #[serde(default = "default_rule")]
    rule: String,
    #[serde(default = "multiplicative")]
    notion: LndNotion,
    #[serde(default)]
    zeta: Option<Vec<f64>>,
    #[serde(default = "two")]
    m: f64,
    #[serde(default = "directions")]
    directions: usize,
    #[serde(default = "min_exponent")]
    min_exponent: f64,
    #[serde(default = "yes")]
    control: bool,
    #[serde(default = "control_slope")]
    control_slope: f64,
    #[serde(default = "control_max_exponent")]
    control_max_exponent: f64,
}

fn default_field() -> FieldSpec {
    FieldSpec { model: FieldModel::fbs(&[0.5, 0.5]).expect("valid Hurst indices"), ..FieldSpec::brownian_sheet(6) }
}

fn radius_min() -> f64 {
    2.0
}

fn radius_max() -> f64 {
    64.0
}

fn radius_count() -> usize {
    8
}

pub(crate) fn default_rule() -> String {
    "piecewise-linear".into()
}

pub(crate) fn multiplicative() -> LndNotion {
    LndNotion::Multiplicative
}

fn two() -> f64 {
    2.0
}

fn directions() -> usize {
    8
}

fn min_exponent() -> f64 {
    0.3375
}

fn yes() -> bool {
    true
}

fn control_slope() -> f64 {
    8.0
}

fn control_max_exponent() -> f64 {
    0.1
}

const DEFAULT_SAMPLES: usize = 2000;

#[derive(Serialize)]
struct DecayReport<'a> {
    field: &'a RegularityFit,
    control: Option<&'a RegularityFit>,
}

impl Params {
    fn radii(&self) -> Vec<f64> {
        match &self.radii {
            Some(r) => r.clone(),
            None => {
                let k = self.radius_count.max(2) - 1;
                let ratio = self.radius_max / self.radius_min;
                (0..=k).map(|j| self.radius_min * ratio.powf(j as f64 / k as f64)).collect()
            }
        }
    }
}

impl Experiment for Occupation {
    fn name(&self) -> &'static str {
        "occupation"
    }

    fn validate(&self, config: &ExperimentConfig) -> Vec<Violation> {
        let p: Params = match parse_params(config) {
            Ok(p) => p,
            Err(v) => return vec![v],
        };
        let mut out = p.field.violations("params.field");
        if !out.is_empty() {
            return out;
        }
        let d = p.field.model.dim;
        out.extend(zeta_violations("params.zeta", &p.zeta.clone().unwrap_or_else(|| p.field.model.hurst()), d));
        if let Some(r) = &p.rect {
            out.extend(r.violation("params.rect", d));
        }
        let radii = p.radii();
        if radii.len() < 5 || radii.iter().any(|r| !(*r > 0.0)) || radii.windows(2).any(|w| w[1] <= w[0]) {
            out.push(Violation::error("params.radii", "need at least five increasing positive radii"));
        }
        if let Err(e) = quadrature_registry().get(&p.rule) {
            out.push(Violation::error("params.rule", e.to_string()));
        }
        if p.directions == 0 {
            out.push(Violation::error("params.directions", "must be positive"));
        }
        if !(p.m >= 1.0) {
            out.push(Violation::error("params.m", "moment order must be at least 1"));
        }
        out
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), CliError> {
        let p: Params = params(&ctx.config)?;
        let n = ctx.config.samples_or(DEFAULT_SAMPLES);
        let seed = ctx.seed();
        let rect = ctx.stage("setup", || rect_or_domain(&p.rect, &p.field))?;
        let rule = ctx.stage("setup", || quadrature_registry().get(&p.rule).map(|c| c()))?;
        let zeta = p.zeta.clone().unwrap_or_else(|| p.field.model.hurst());
        let target = decay_target(p.notion, &zeta);
        let radii = p.radii();
        let opts = DecayOptions { m: p.m, directions: p.directions, seed, ..DecayOptions::default() };
        let sampler = ctx.stage("factorise", || p.field.sampler())?;
        let paths = PathEnsemble::new(sampler.clone(), seed, n);
        let fit = ctx.stage("decay", || moment_decay_fit(&paths, &rect, &radii, rule.as_ref(), target, &opts))?;
        let control = if p.control {
            let path = ctx.stage("control", || plateau_ramp_path(sampler.grid(), p.control_slope))?;
            Some(ctx.stage("control", || {
                moment_decay_fit(&FixedPath(path), &rect, &radii, rule.as_ref(), 0.0, &opts)
            })?)
        } else {
            None
        };
        ctx.write_csv("decay.csv", |w| {
            writeln!(w, "source,radius,moment")?;
            for (label, f) in [("field", Some(&fit)), ("control", control.as_ref())] {
                if let Some(f) = f {
                    for (r, v) in f.abscissae.iter().zip(&f.moments[0]) {
                        writeln!(w, "{label},{r},{v}")?;
                    }
                }
            }
            Ok(())
        })?;
        ctx.write_json("decay_fit.json", &DecayReport { field: &fit, control: control.as_ref() })?;
        ctx.check(
            "decay_exponent",
            fit.exponent[0] >= p.min_exponent,
            format!(
                "exponent {:.4} ± {:.4} (target {target}), required ≥ {}",
                fit.exponent[0], fit.stderr[0], p.min_exponent
            ),
        );
        if let Some(c) = &control {
            ctx.check(
                "control_exponent",
                c.exponent[0] <= p.control_max_exponent,
                format!("control exponent {:.4}, required ≤ {}", c.exponent[0], p.control_max_exponent),
            );
        }
        Ok(())
    }
}
