//! Experiments by subcommand name. Each parses its own `params` object and
//! reports parameter problems as field-level violations before running.

use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sheetsew_core::algebra::{Point, Rect};
use sheetsew_core::conditioning::LndNotion;
use sheetsew_core::fields::{sampler_registry, FieldModel, FieldSampler, SampleGrid, SamplerOptions};
use sheetsew_core::occupation::alpha_bound;
use sheetsew_core::registry::Registry;

use crate::config::{ExperimentConfig, Violation};
use crate::error::CliError;
use crate::manifest::RunContext;

mod bdg;
mod localtime;
mod lnd;
mod occupation;
mod sample;
mod selftest;
mod sew;
mod solve;

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn validate(&self, config: &ExperimentConfig) -> Vec<Violation>;
    fn run(&self, ctx: &mut RunContext) -> Result<(), CliError>;
}

pub type ExperimentCtor = fn() -> Box<dyn Experiment>;

pub fn experiment_registry() -> Registry<ExperimentCtor> {
    let mut reg: Registry<ExperimentCtor> = Registry::new("experiment");
    reg.register("algebra-selftest", || Box::new(selftest::AlgebraSelftest))
        .register("sample", || Box::new(sample::Sample))
        .register("lnd", || Box::new(lnd::Lnd))
        .register("sew", || Box::new(sew::Sew))
        .register("bdg", || Box::new(bdg::Bdg))
        .register("occupation", || Box::new(occupation::Occupation))
        .register("localtime", || Box::new(localtime::LocalTime))
        .register("solve", || Box::new(solve::Solve));
    reg
}

/// Parses `params`, treating `null` as an empty object.
pub(crate) fn parse_params<T: DeserializeOwned>(config: &ExperimentConfig) -> Result<T, Violation> {
    let value = match &config.params {
        serde_json::Value::Null => serde_json::json!({}),
        v => v.clone(),
    };
    serde_json::from_value(value).map_err(|e| Violation::error("params", e.to_string()))
}

/// Parses for `run`, after `validate` has already accepted the params.
pub(crate) fn params<T: DeserializeOwned>(config: &ExperimentConfig) -> Result<T, CliError> {
    parse_params(config).map_err(|v| CliError::Validation(vec![v]))
}

/// A sheet sampled on the dyadic grid of `[0, t_max]^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct FieldSpec {
    pub model: FieldModel,
    pub level: u32,
    #[serde(default = "one")]
    pub t_max: f64,
    #[serde(default = "exact")]
    pub sampler: String,
    #[serde(default)]
    pub dense_limit: Option<usize>,
    #[serde(default)]
    pub kronecker_limit: Option<usize>,
}

pub(crate) fn one() -> f64 {
    1.0
}

fn exact() -> String {
    "exact".into()
}

const MAX_LEVEL: u32 = 12;

impl FieldSpec {
    pub fn brownian_sheet(level: u32) -> Self {
        Self {
            model: FieldModel::brownian_sheet(2),
            level,
            t_max: 1.0,
            sampler: exact(),
            dense_limit: None,
            kronecker_limit: None,
        }
    }

    pub fn options(&self) -> SamplerOptions {
        let mut o = SamplerOptions::default();
        if let Some(l) = self.dense_limit {
            o.dense_limit = l;
        }
        if let Some(l) = self.kronecker_limit {
            o.kronecker_limit = l;
        }
        o
    }

    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut out: Vec<Violation> = self
            .model
            .violations()
            .into_iter()
            .map(|m| Violation::error(format!("{prefix}.model"), m))
            .collect();
        if self.level > MAX_LEVEL {
            out.push(Violation::error(format!("{prefix}.level"), format!("must be at most {MAX_LEVEL}")));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            out.push(Violation::error(format!("{prefix}.t_max"), "must be positive and finite"));
        }
        if let Err(e) = sampler_registry().get(&self.sampler) {
            out.push(Violation::error(format!("{prefix}.sampler"), e.to_string()));
            return out;
        }
        if !out.is_empty() || self.model.dim == 0 {
            return out;
        }
        let opts = self.options();
        let limit = match self.sampler.as_str() {
            "dense" => opts.dense_limit,
            "exact" if !self.model.is_separable() => opts.dense_limit,
            _ => opts.kronecker_limit,
        };
        let side = (1usize << self.level.min(MAX_LEVEL)) + 1;
        let points = side.checked_pow(self.model.dim as u32).unwrap_or(usize::MAX);
        if points > limit {
            out.push(Violation::error(
                format!("{prefix}.level"),
                format!("grid of {points} points exceeds the {} sampler limit of {limit}", self.sampler),
            ));
        }
        out
    }

    pub fn grid(&self) -> sheetsew_core::Result<SampleGrid> {
        SampleGrid::dyadic(self.model.dim, self.level, self.t_max)
    }

    pub fn sampler(&self) -> sheetsew_core::Result<Arc<dyn FieldSampler>> {
        let ctor = sampler_registry().get(&self.sampler)?;
        Ok(Arc::from(ctor(&self.model, &self.grid()?, &self.options())?))
    }

    pub fn domain(&self) -> sheetsew_core::Result<Rect> {
        Rect::new(Point::zeros(self.model.dim), Point::new(&vec![self.t_max; self.model.dim])?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RectSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl RectSpec {
    pub fn rect(&self) -> sheetsew_core::Result<Rect> {
        Rect::from_coords(&self.lo, &self.hi)
    }

    pub fn violation(&self, field: &str, dim: usize) -> Option<Violation> {
        if self.lo.len() != dim || self.hi.len() != dim {
            return Some(Violation::error(field, format!("corners must have {dim} coordinates")));
        }
        self.rect().err().map(|e| Violation::error(field, e.to_string()))
    }
}

/// Rect from an optional spec, defaulting to the whole sampled domain.
pub(crate) fn rect_or_domain(spec: &Option<RectSpec>, field: &FieldSpec) -> sheetsew_core::Result<Rect> {
    match spec {
        Some(r) => r.rect(),
        None => field.domain(),
    }
}

/// Warns when a Bessel index sits at or above the admissible range for the
/// declared LND exponents.
pub(crate) fn alpha_warning(field: &str, alpha: f64, notion: LndNotion, zeta: &[f64], n: usize) -> Option<Violation> {
    let bound = alpha_bound(notion, zeta, n);
    if alpha < bound {
        return None;
    }
    let rule = match notion {
        LndNotion::Multiplicative => "α < 1/(2 max ζ_i) − n/2",
        _ => "α < Σ 1/(2ζ_i) − n/2",
    };
    Some(Violation::warning(field, format!("α = {alpha} violates {rule} = {bound} for ζ = {zeta:?}, n = {n}")))
}

pub(crate) fn zeta_violations(field: &str, zeta: &[f64], dim: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    if zeta.len() != dim {
        out.push(Violation::error(field, format!("expected {dim} entries, got {}", zeta.len())));
    }
    if zeta.iter().any(|z| !(*z > 0.0 && *z < 1.0)) {
        out.push(Violation::error(field, "ζ_i ∈ (0,1) required"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_subcommand_is_registered() {
        let reg = experiment_registry();
        for name in ["algebra-selftest", "sample", "lnd", "sew", "bdg", "occupation", "localtime", "solve"] {
            assert_eq!(reg.get(name).unwrap()().name(), name);
        }
    }

    #[test]
    fn grid_above_sampler_limit_is_a_violation() {
        let spec = FieldSpec { level: 8, ..FieldSpec::brownian_sheet(8) };
        let v = spec.violations("field");
        assert!(v.iter().any(|v| v.field == "field.level" && v.message.contains("limit")), "{v:?}");
        assert!(FieldSpec::brownian_sheet(7).violations("field").is_empty());
        let dense = FieldSpec { sampler: "dense".into(), ..FieldSpec::brownian_sheet(6) };
        assert!(!dense.violations("field").is_empty());
    }

    #[test]
    fn alpha_warning_cites_the_additive_bound() {
        let w = alpha_warning("alpha", 2.0, LndNotion::Additive, &[0.5, 0.5], 1).unwrap();
        assert!(w.message.contains("α < Σ 1/(2ζ_i) − n/2"), "{}", w.message);
        assert!(!w.is_error());
        assert!(alpha_warning("alpha", 0.3, LndNotion::Additive, &[0.5, 0.5], 1).is_none());
    }
}
