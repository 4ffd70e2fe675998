use std::io::Write;

use rayon::prelude::*;
use serde::Deserialize;
use sheetsew_core::conditioning::LndNotion;
use sheetsew_core::occupation::{
    holder_time_fit, local_time_density, occupation_integral, quadrature_registry, HolderOptions, LocalTimeOptions,
};
use sheetsew_core::sewing::PathEnsemble;

use super::occupation::{default_rule, multiplicative};
use super::{alpha_warning, params, parse_params, rect_or_domain, zeta_violations, Experiment, FieldSpec, RectSpec};
use crate::config::{ExperimentConfig, Violation};
use crate::error::CliError;
use crate::manifest::RunContext;

/// Local-time histograms with mass and occupation-times-formula checks, and
/// the time-Hölder fit of `□L` in a Bessel potential space.
pub struct LocalTime;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    #[serde(default = "default_field")]
    field: FieldSpec,
    #[serde(default)]
    rect: Option<RectSpec>,
    #[serde(default = "bins")]
    bins: usize,
    #[serde(default)]
    mollifier: Option<f64>,
    #[serde(default)]
    window: Option<Vec<[f64; 2]>>,
    #[serde(default = "max_clipping")]
    max_clipping: f64,
    /// Paths whose local time is estimated and checked.
    #[serde(default = "density_samples")]
    density_samples: usize,
    /// Test function `exp(−|x − c|²/s)` of the occupation-times check.
    #[serde(default = "test_center")]
    test_center: f64,
    #[serde(default = "test_scale")]
    test_scale: f64,
    #[serde(default = "mass_tolerance")]
    mass_tolerance: f64,
    #[serde(default = "formula_tolerance")]
    formula_tolerance: f64,
    #[serde(default = "multiplicative")]
    notion: LndNotion,
    #[serde(default)]
    zeta: Option<Vec<f64>>,
    #[serde(default)]
    holder: Option<HolderSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HolderSpec {
    alpha: f64,
    #[serde(default = "gaps")]
    gaps: Vec<f64>,
    #[serde(default = "default_rule")]
    rule: String,
    #[serde(default)]
    base: Option<Vec<f64>>,
    #[serde(default)]
    fixed_gap: Option<f64>,
    #[serde(default)]
    radius: Option<f64>,
    #[serde(default)]
    radial_steps: Option<usize>,
    #[serde(default)]
    m: Option<f64>,
    /// Extrapolate the spectral tail and fail above this share; by default
    /// the norm is band-limited to `radius`.
    #[serde(default)]
    max_tail: Option<f64>,
    /// Every axis band must reach this exponent.
    #[serde(default = "min_gamma")]
    min_gamma: f64,
}

fn default_field() -> FieldSpec {
    FieldSpec::brownian_sheet(6)
}

fn bins() -> usize {
    256
}

fn max_clipping() -> f64 {
    0.01
}

fn density_samples() -> usize {
    8
}

fn test_center() -> f64 {
    0.2
}

fn test_scale() -> f64 {
    0.5
}

fn mass_tolerance() -> f64 {
    1e-3
}

fn formula_tolerance() -> f64 {
    0.02
}

fn gaps() -> Vec<f64> {
    [2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0].iter().map(|k| k / 64.0).collect()
}

fn min_gamma() -> f64 {
    0.5
}

const DEFAULT_SAMPLES: usize = 400;

impl HolderSpec {
    fn options(&self) -> HolderOptions {
        let d = HolderOptions::default();
        HolderOptions {
            m: self.m.unwrap_or(d.m),
            base: self.base.clone().unwrap_or(d.base),
            fixed_gap: self.fixed_gap.unwrap_or(d.fixed_gap),
            radius: self.radius.unwrap_or(d.radius),
            radial_steps: self.radial_steps.unwrap_or(d.radial_steps),
            max_tail: self.max_tail,
            ..d
        }
    }
}

impl Experiment for LocalTime {
    fn name(&self) -> &'static str {
        "localtime"
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
        let zeta = p.zeta.clone().unwrap_or_else(|| model.hurst());
        out.extend(zeta_violations("params.zeta", &zeta, model.dim));
        if let Some(r) = &p.rect {
            out.extend(r.violation("params.rect", model.dim));
        }
        if p.bins == 0 {
            out.push(Violation::error("params.bins", "must be positive"));
        }
        if p.density_samples == 0 || p.density_samples > config.samples_or(DEFAULT_SAMPLES) {
            out.push(Violation::error("params.density_samples", "must lie in 1..=samples"));
        }
        if !(p.test_scale > 0.0) {
            out.push(Violation::error("params.test_scale", "must be positive"));
        }
        if let Some(h) = &p.holder {
            if let Err(e) = quadrature_registry().get(&h.rule) {
                out.push(Violation::error("params.holder.rule", e.to_string()));
            }
            if h.gaps.len() < 5 || h.gaps.iter().any(|g| !(*g > 0.0)) {
                out.push(Violation::error("params.holder.gaps", "need at least five positive gaps"));
            }
            if model.dim != h.options().base.len() {
                out.push(Violation::error("params.holder.base", format!("needs {} coordinates", model.dim)));
            }
            out.extend(alpha_warning("params.holder.alpha", h.alpha, p.notion, &zeta, model.components));
        }
        out
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), CliError> {
        let p: Params = params(&ctx.config)?;
        let n = ctx.config.samples_or(DEFAULT_SAMPLES);
        let seed = ctx.seed();
        let rect = ctx.stage("setup", || rect_or_domain(&p.rect, &p.field))?;
        let sampler = ctx.stage("factorise", || p.field.sampler())?;
        let opts = LocalTimeOptions { bins: p.bins, mollifier: p.mollifier, window: p.window.clone(), max_clipping: p.max_clipping };
        let f = |x: &[f64]| (-x.iter().map(|v| (v - p.test_center).powi(2)).sum::<f64>() / p.test_scale).exp();
        let estimates = ctx.stage("local-time", || {
            (0..p.density_samples as u64)
                .into_par_iter()
                .map(|k| {
                    let path = sampler.sample(seed, k)?;
                    let lt = local_time_density(&path, &rect, &opts)?;
                    let rhs = occupation_integral(&path, &rect, f)?;
                    Ok((lt, rhs))
                })
                .collect::<sheetsew_core::Result<Vec<_>>>()
        })?;
        ctx.write_csv("local_time.csv", |w| estimates[0].0.write_csv(w))?;
        let vol = rect.volume();
        let mut worst_mass: f64 = 0.0;
        let mut worst_formula: f64 = 0.0;
        ctx.write_csv("local_time_checks.csv", |w| {
            writeln!(w, "sample,mass,volume,clipped,formula_lhs,formula_rhs")?;
            for (k, (lt, rhs)) in estimates.iter().enumerate() {
                let lhs = lt.integrate(f);
                worst_mass = worst_mass.max((lt.mass() - vol).abs() / vol);
                worst_formula = worst_formula.max((lhs - rhs).abs() / rhs.abs());
                writeln!(w, "{k},{},{vol},{},{lhs},{rhs}", lt.mass(), lt.clipped_fraction)?;
            }
            Ok(())
        })?;
        ctx.check(
            "mass_conservation",
            worst_mass <= p.mass_tolerance,
            format!("worst relative mass error {worst_mass:.2e} (limit {:e})", p.mass_tolerance),
        );
        ctx.check(
            "occupation_formula",
            worst_formula <= p.formula_tolerance,
            format!("worst relative error {worst_formula:.2e} (limit {})", p.formula_tolerance),
        );

        if let Some(h) = &p.holder {
            let rule = ctx.stage("holder", || quadrature_registry().get(&h.rule).map(|c| c()))?;
            let paths = PathEnsemble::new(sampler.clone(), seed, n);
            let hopts = h.options();
            let fit = ctx.stage("holder", || holder_time_fit(&paths, h.alpha, &h.gaps, rule.as_ref(), &hopts))?;
            ctx.write_csv("holder.csv", |w| {
                writeln!(w, "axis,gap,moment")?;
                for (axis, mom) in fit.moments.iter().enumerate() {
                    for (g, v) in fit.abscissae.iter().zip(mom) {
                        writeln!(w, "{axis},{g},{v}")?;
                    }
                }
                Ok(())
            })?;
            ctx.write_json("holder_fit.json", &fit)?;
            let bands: Vec<String> = fit
                .exponent
                .iter()
                .zip(&fit.band)
                .map(|(e, b)| format!("{e:.3} [{:.3}, {:.3}]", b[0], b[1]))
                .collect();
            ctx.check(
                "holder_exponent",
                fit.reaches(h.min_gamma),
                format!("γ̂ per axis {}, band must reach {}", bands.join(", "), h.min_gamma),
            );
        }
        Ok(())
    }
}
