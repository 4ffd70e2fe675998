use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sheetsew_core::algebra::IndexSet;
use sheetsew_core::fields::FieldKind;
use sheetsew_core::occupation::node_measure_transform;
use sheetsew_core::sewing::{
    extrapolated_limit, estimate_rate, law_registry, multilevel_sums, ExponentialGerm, PathEnsemble, SewingOptions,
};
use sheetsew_core::stats::{line_fit, mean, std_error};

use super::{params, parse_params, rect_or_domain, Experiment, FieldSpec, RectSpec};
use crate::config::{ExperimentConfig, Violation};
use crate::error::CliError;
use crate::manifest::RunContext;

/// Multilevel Riemann sums of the conditional exponential germ, their
/// Cauchy differences and rate, and the sewn limit against direct
/// quadrature of `∫ exp(i⟨z, W_r⟩) dr` on the sampled path.
pub struct Sew;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    #[serde(default = "default_field")]
    field: FieldSpec,
    #[serde(default = "default_law")]
    law: String,
    /// Conditioning level of the `grid` law.
    #[serde(default = "law_level")]
    law_level: u32,
    #[serde(default = "default_z")]
    z: Vec<f64>,
    /// Midpoint nodes per axis for the germ's `r`-integral.
    #[serde(default = "resolution")]
    resolution: usize,
    #[serde(default = "max_level")]
    max_level: u32,
    /// Cauchy differences `‖P_n − P_{n−1}‖` enter the monotonicity check
    /// and the rate fit from this finer level `n` on.
    #[serde(default = "first_level")]
    first_level: u32,
    /// Sewn axes; all axes when absent.
    #[serde(default)]
    theta: Option<Vec<usize>>,
    #[serde(default = "two")]
    m: f64,
    #[serde(default)]
    rect: Option<RectSpec>,
    #[serde(default = "max_slope")]
    max_slope: f64,
    #[serde(default = "two")]
    agreement_sigmas: f64,
    /// Replace the finest sum by its geometric extrapolation.
    #[serde(default)]
    extrapolate: bool,
}

fn default_field() -> FieldSpec {
    FieldSpec::brownian_sheet(7)
}

fn default_law() -> String {
    "brownian-sheet".into()
}

fn law_level() -> u32 {
    4
}

fn default_z() -> Vec<f64> {
    vec![5.0]
}

fn resolution() -> usize {
    2
}

fn max_level() -> u32 {
    6
}

fn first_level() -> u32 {
    1
}

fn two() -> f64 {
    2.0
}

fn max_slope() -> f64 {
    -0.5
}

const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Serialize)]
struct RateSummary {
    slope: f64,
    slope_stderr: f64,
    fitted_levels: Vec<u32>,
    full_slope: f64,
}

#[derive(Debug, Serialize)]
struct Agreement {
    mean_re: f64,
    mean_im: f64,
    stderr_re: f64,
    stderr_im: f64,
    sigmas: f64,
    extrapolated: bool,
}

impl Params {
    fn theta(&self) -> sheetsew_core::Result<IndexSet> {
        let d = self.field.model.dim;
        match &self.theta {
            None => Ok(IndexSet::full(d)),
            Some(axes) => IndexSet::from_axes(d, axes),
        }
    }
}

impl Experiment for Sew {
    fn name(&self) -> &'static str {
        "sew"
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
        let model = &p.field.model;
        if p.z.len() != model.components {
            out.push(Violation::error("params.z", format!("needs {} entries, one per component", model.components)));
        }
        if p.resolution == 0 {
            out.push(Violation::error("params.resolution", "must be positive"));
        }
        if p.max_level > p.field.level {
            out.push(Violation::error("params.max_level", "cell corners must be sample nodes: max_level ≤ field.level"));
        }
        if p.first_level == 0 || p.first_level + 2 > p.max_level {
            out.push(Violation::error("params.first_level", "need first_level ≥ 1 and three differences up to max_level"));
        }
        if !(p.m >= 1.0) {
            out.push(Violation::error("params.m", "moment order must be at least 1"));
        }
        match law_registry().get(&p.law) {
            Err(e) => out.push(Violation::error("params.law", e.to_string())),
            Ok(_) if p.law == "brownian-sheet" && model.kind != FieldKind::BrownianSheet => {
                out.push(Violation::error("params.law", "the closed-form law needs a Brownian sheet"))
            }
            Ok(_) => {}
        }
        if let Err(e) = p.theta() {
            out.push(Violation::error("params.theta", e.to_string()));
        }
        if let Some(r) = &p.rect {
            out.extend(r.violation("params.rect", model.dim));
        }
        out
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), CliError> {
        let p: Params = params(&ctx.config)?;
        let n = ctx.config.samples_or(DEFAULT_SAMPLES);
        let seed = ctx.seed();
        let theta = ctx.stage("setup", || p.theta())?;
        let rect = ctx.stage("setup", || rect_or_domain(&p.rect, &p.field))?;
        let sampler = ctx.stage("factorise", || p.field.sampler())?;
        let paths = PathEnsemble::new(sampler, seed, n);
        let law = ctx.stage("law", || law_registry().get(&p.law).and_then(|c| c(&p.field.model, p.law_level)))?;
        let germ = ctx.stage("germ", || ExponentialGerm::new(Arc::from(law), paths.clone(), p.z.clone(), p.resolution))?;
        let opts = SewingOptions { m: p.m, ..SewingOptions::default() };
        let result = ctx.stage("multilevel", || multilevel_sums(&germ, &rect, theta, p.max_level, &opts))?;
        ctx.write_csv("cauchy.csv", |w| result.write_csv(w))?;

        // Differences labelled by their finer level.
        let considered: Vec<(u32, f64)> = result
            .levels
            .iter()
            .skip(1)
            .zip(&result.cauchy_lm)
            .filter(|(l, _)| **l >= p.first_level)
            .map(|(l, c)| (*l, c.value))
            .collect();
        let monotone = considered.windows(2).all(|w| w[1].1 < w[0].1);
        let listed: Vec<String> = considered.iter().map(|(l, v)| format!("{l}:{v:.4e}")).collect();
        ctx.check("cauchy_monotone", monotone, listed.join(" "));

        let full = ctx.stage("rate", || estimate_rate(&result))?;
        let (x, y): (Vec<f64>, Vec<f64>) =
            considered.iter().filter(|(_, v)| *v > 0.0).map(|(l, v)| (*l as f64, v.log2())).unzip();
        let fit = ctx.stage("rate", || line_fit(&x, &y))?;
        let summary = RateSummary {
            slope: fit.slope,
            slope_stderr: fit.slope_stderr,
            fitted_levels: x.iter().map(|l| *l as u32).collect(),
            full_slope: full.slope,
        };
        ctx.write_json("rate.json", &summary)?;
        ctx.check(
            "cauchy_rate",
            fit.slope <= p.max_slope,
            format!("slope {:.3} ± {:.3} per level, required ≤ {}", fit.slope, fit.slope_stderr, p.max_slope),
        );

        let sewn = if p.extrapolate {
            ctx.stage("extrapolate", || extrapolated_limit(&result, &full))?
        } else {
            result.limit_estimate.clone()
        };
        let z = vec![p.z.clone()];
        let direct = ctx.stage("direct", || {
            (0..n)
                .into_par_iter()
                .map(|k| Ok(node_measure_transform(&paths.path(k)?, &rect, &z)?[0]))
                .collect::<sheetsew_core::Result<Vec<_>>>()
        })?;
        ctx.write_csv("sewing.csv", |w| {
            writeln!(w, "sample,sewn_re,sewn_im,direct_re,direct_im")?;
            for (k, (a, b)) in sewn.iter().zip(&direct).enumerate() {
                writeln!(w, "{k},{},{},{},{}", a.re, a.im, b.re, b.im)?;
            }
            Ok(())
        })?;
        let re: Vec<f64> = sewn.iter().zip(&direct).map(|(a, b)| a.re - b.re).collect();
        let im: Vec<f64> = sewn.iter().zip(&direct).map(|(a, b)| a.im - b.im).collect();
        let agreement = Agreement {
            mean_re: mean(&re),
            mean_im: mean(&im),
            stderr_re: std_error(&re),
            stderr_im: std_error(&im),
            sigmas: p.agreement_sigmas,
            extrapolated: p.extrapolate,
        };
        let gap = agreement.mean_re.hypot(agreement.mean_im);
        let se = agreement.stderr_re.hypot(agreement.stderr_im);
        ctx.write_json("agreement.json", &agreement)?;
        ctx.check(
            "sewn_matches_direct",
            gap <= p.agreement_sigmas * se,
            format!("|mean(sewn − direct)| = {gap:.3e}, standard error {se:.3e}"),
        );
        Ok(())
    }
}
