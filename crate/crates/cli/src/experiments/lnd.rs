use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sheetsew_core::algebra::{Point, Rect};
use sheetsew_core::conditioning::{
    boundary_deterministic_falsifier, check_lnd, fbs_variance_lower_bound, strong_past_variance, LndNotion, LndOptions,
    StrongPastApprox,
};
use sheetsew_core::fields::{FieldKind, FieldModel};
use sheetsew_core::rng;

use super::{params, parse_params, zeta_violations, Experiment, RectSpec};
use crate::config::{ExperimentConfig, Violation};
use crate::error::CliError;
use crate::manifest::RunContext;

/// LND constant estimate, optional pairwise comparison of grid conditional
/// variances against a reference, and the boundary falsifier.
pub struct Lnd;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    model: FieldModel,
    #[serde(default = "multiplicative")]
    notion: LndNotion,
    /// Defaults to the model's Hurst indices.
    #[serde(default)]
    zeta: Option<Vec<f64>>,
    #[serde(default)]
    domain: Option<RectSpec>,
    #[serde(default = "level")]
    level: u32,
    #[serde(default = "epsilon_fraction")]
    epsilon_fraction: f64,
    #[serde(default = "yes")]
    sweep: bool,
    /// Required lower/upper bounds on `c_hat`; with neither, `c_hat > 0`.
    #[serde(default)]
    c_hat_min: Option<f64>,
    #[serde(default)]
    c_hat_max: Option<f64>,
    #[serde(default)]
    pairs: Option<PairsSpec>,
    #[serde(default)]
    falsifier: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairsSpec {
    count: usize,
    /// Smallest per-axis gap `t_i − s_i`.
    #[serde(default)]
    min_gap: f64,
    reference: Reference,
    #[serde(default)]
    tolerance: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Reference {
    /// Brownian sheet: `Var(W_t | F_s) = Π t_i − Π s_i`; relative tolerance.
    ClosedForm,
    /// Two-parameter fBs: variance ≥ normalised explicit bound − tolerance.
    FbsBound,
}

fn multiplicative() -> LndNotion {
    LndNotion::Multiplicative
}

fn level() -> u32 {
    5
}

fn epsilon_fraction() -> f64 {
    0.1
}

fn yes() -> bool {
    true
}

const DEFAULT_TRIALS: usize = 200;
const PAIR_STREAM: u64 = 11;

impl Params {
    fn zeta(&self) -> Vec<f64> {
        self.zeta.clone().unwrap_or_else(|| self.model.hurst())
    }

    fn domain(&self) -> sheetsew_core::Result<Rect> {
        match &self.domain {
            Some(r) => r.rect(),
            None => Ok(Rect::unit(self.model.dim)),
        }
    }
}

impl Experiment for Lnd {
    fn name(&self) -> &'static str {
        "lnd"
    }

    fn validate(&self, config: &ExperimentConfig) -> Vec<Violation> {
        let p: Params = match parse_params(config) {
            Ok(p) => p,
            Err(v) => return vec![v],
        };
        let mut out: Vec<Violation> = p.model.violations().into_iter().map(|m| Violation::error("params.model", m)).collect();
        if !out.is_empty() {
            return out;
        }
        let d = p.model.dim;
        out.extend(zeta_violations("params.zeta", &p.zeta(), d));
        if let Some(r) = &p.domain {
            out.extend(r.violation("params.domain", d));
        }
        if p.level > 10 {
            out.push(Violation::error("params.level", "must be at most 10"));
        }
        if let Some(pairs) = &p.pairs {
            if pairs.count == 0 {
                out.push(Violation::error("params.pairs.count", "must be positive"));
            }
            let domain_gap = p.domain().map(|r| (0..d).map(|i| r.gap(i)).fold(f64::INFINITY, f64::min)).unwrap_or(0.0);
            if !(pairs.min_gap >= 0.0 && pairs.min_gap < domain_gap) {
                out.push(Violation::error("params.pairs.min_gap", "must lie in [0, smallest domain side)"));
            }
            match pairs.reference {
                Reference::ClosedForm if p.model.kind != FieldKind::BrownianSheet => out.push(Violation::error(
                    "params.pairs.reference",
                    "the closed form holds for the Brownian sheet only",
                )),
                Reference::FbsBound if d != 2 || matches!(p.model.kind, FieldKind::BoundaryAugmented { .. }) => {
                    out.push(Violation::error(
                        "params.pairs.reference",
                        "the explicit bound needs a two-parameter fractional Brownian sheet",
                    ))
                }
                _ => {}
            }
        }
        out
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), CliError> {
        let p: Params = params(&ctx.config)?;
        let trials = ctx.config.samples_or(DEFAULT_TRIALS);
        let seed = ctx.seed();
        let zeta = p.zeta();
        let domain = ctx.stage("domain", || p.domain())?;
        let opts = LndOptions { level: p.level, epsilon_fraction: p.epsilon_fraction, seed, sweep: p.sweep };
        let report = ctx.stage("lnd", || check_lnd(&p.model, p.notion, &zeta, &domain, trials, &opts))?;
        ctx.write_json("lnd_report.json", &report)?;
        let c = report.c_hat;
        match (p.c_hat_min, p.c_hat_max) {
            (None, None) => ctx.check("c_hat_positive", c > 0.0, format!("c_hat = {c:e}")),
            (lo, hi) => {
                if let Some(lo) = lo {
                    ctx.check("c_hat_min", c >= lo, format!("c_hat = {c:e}, required ≥ {lo:e}"));
                }
                if let Some(hi) = hi {
                    ctx.check("c_hat_max", c <= hi, format!("c_hat = {c:e}, required ≤ {hi:e}"));
                }
            }
        }

        if let Some(spec) = &p.pairs {
            let pairs = random_pairs(&domain, spec.count, spec.min_gap, seed);
            let rows = ctx.stage("pairs", || {
                pairs
                    .par_iter()
                    .map(|(s, t)| {
                        let v = strong_past_variance(&p.model, t, &StrongPastApprox::new(*s, p.level))?;
                        let r = match spec.reference {
                            Reference::ClosedForm => {
                                t.coords().iter().product::<f64>() - s.coords().iter().product::<f64>()
                            }
                            Reference::FbsBound => fbs_variance_lower_bound(&p.model, s, t)?,
                        };
                        Ok((v, r))
                    })
                    .collect::<sheetsew_core::Result<Vec<(f64, f64)>>>()
            })?;
            let d = domain.dim();
            ctx.write_csv("pairs.csv", |w| {
                let s_cols: Vec<String> = (1..=d).map(|i| format!("s{i}")).collect();
                let t_cols: Vec<String> = (1..=d).map(|i| format!("t{i}")).collect();
                writeln!(w, "pair,{},{},variance,reference", s_cols.join(","), t_cols.join(","))?;
                for (k, ((s, t), (v, r))) in pairs.iter().zip(&rows).enumerate() {
                    writeln!(w, "{k},{},{},{v},{r}", join(s), join(t))?;
                }
                Ok(())
            })?;
            match spec.reference {
                Reference::ClosedForm => {
                    let tol = spec.tolerance.unwrap_or(0.01);
                    let worst = rows.iter().map(|(v, r)| (v - r).abs() / r.abs()).fold(0.0, f64::max);
                    ctx.check(
                        "strong_past_closed_form",
                        worst <= tol,
                        format!("worst relative error {worst:e} over {} pairs (tolerance {tol})", rows.len()),
                    );
                }
                Reference::FbsBound => {
                    let tol = spec.tolerance.unwrap_or(1e-6);
                    let worst = rows.iter().map(|(v, r)| v - r).fold(f64::INFINITY, f64::min);
                    ctx.check(
                        "fbs_lower_bound",
                        worst >= -tol,
                        format!("min(variance − bound) = {worst:e} over {} pairs (tolerance {tol:e})", rows.len()),
                    );
                }
            }
        }

        if p.falsifier {
            let t_max = (0..p.model.dim).map(|i| domain.hi()[i]).fold(f64::INFINITY, f64::min);
            let outcome = ctx.stage("falsifier", || boundary_deterministic_falsifier(&p.model, &zeta, t_max))?;
            ctx.write_json("falsifier.json", &outcome)?;
        }
        Ok(())
    }
}

/// Uniform pairs `s ≤ t` in `domain` with every gap at least `min_gap`.
fn random_pairs(domain: &Rect, count: usize, min_gap: f64, seed: u64) -> Vec<(Point, Point)> {
    let mut g = rng::aux_stream(seed, PAIR_STREAM);
    let d = domain.dim();
    (0..count)
        .map(|_| {
            let mut s = *domain.lo();
            let mut t = *domain.lo();
            for i in 0..d {
                let (lo, gap) = (domain.lo()[i], domain.gap(i));
                loop {
                    let a = lo + g.random::<f64>() * gap;
                    let b = lo + g.random::<f64>() * gap;
                    if (a - b).abs() >= min_gap {
                        s.set(i, a.min(b));
                        t.set(i, a.max(b));
                        break;
                    }
                }
            }
            (s, t)
        })
        .collect()
}

fn join(p: &Point) -> String {
    p.coords().iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
