use std::io::Write;

use serde::Deserialize;
use sheetsew_core::conditioning::LndNotion;
use sheetsew_core::fields::{FieldSample, SampleGrid};
use sheetsew_core::young::{
    averaged_field, check_regularization_condition, goursat_series, richardson, scheme_registry, solve_direct_picard,
    solve_picard, FieldRoute, GoursatBoundary, NonlinearitySpec, PathSolution, PicardOptions, SpatialGrid,
    YoungScheme,
};

use super::{params, parse_params, Experiment, FieldSpec};
use crate::config::{ExperimentConfig, Violation};
use crate::error::CliError;
use crate::manifest::RunContext;

/// `y_t = x₀ + ∫_0^t b(y_r + w_r) dr` by Picard iteration on the nonlinear
/// Young integral, with optional checks against direct Picard on the fine
/// path grid, the linear Goursat series, and the regularisation condition.
pub struct Solve;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    #[serde(default)]
    b: Option<NonlinearitySpec>,
    #[serde(default = "default_field")]
    field: FieldSpec,
    /// Which ensemble member drives the equation.
    #[serde(default)]
    sample: u64,
    /// Dyadic level of the solution grid.
    #[serde(default = "level")]
    level: u32,
    #[serde(default = "default_x")]
    x: SpatialGrid,
    #[serde(default = "convolution")]
    route: FieldRoute,
    #[serde(default = "default_scheme")]
    scheme: String,
    #[serde(default = "bins")]
    bins: usize,
    #[serde(default = "one")]
    x0: f64,
    #[serde(default)]
    picard: PicardOptions,
    #[serde(default)]
    reference: Option<ReferenceSpec>,
    #[serde(default)]
    series: Option<SeriesSpec>,
    #[serde(default)]
    condition: Option<ConditionSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReferenceSpec {
    /// Relative to the sup of `|y − x₀|` on the reference solution.
    #[serde(default = "reference_tolerance")]
    tolerance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesSpec {
    lambda: f64,
    #[serde(default = "half")]
    x0: f64,
    /// Coarse level; the fine solve is one level up and the two are
    /// Richardson-combined.
    #[serde(default = "level")]
    level: u32,
    #[serde(default = "series_tolerance")]
    tolerance: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionSpec {
    rho: f64,
    zeta: Vec<f64>,
    #[serde(default = "one_usize")]
    n: usize,
    notion: LndNotion,
    /// Expected verdict, checked when given.
    #[serde(default)]
    expect: Option<bool>,
}

fn default_field() -> FieldSpec {
    FieldSpec::brownian_sheet(7)
}

fn level() -> u32 {
    6
}

fn default_x() -> SpatialGrid {
    SpatialGrid { lo: -4.0, hi: 6.0, points: 513 }
}

fn convolution() -> FieldRoute {
    FieldRoute::Convolution
}

fn default_scheme() -> String {
    "trapezoid".into()
}

fn bins() -> usize {
    256
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

fn half() -> f64 {
    0.5
}

fn reference_tolerance() -> f64 {
    0.02
}

fn series_tolerance() -> f64 {
    1e-6
}

impl Experiment for Solve {
    fn name(&self) -> &'static str {
        "solve"
    }

    fn validate(&self, config: &ExperimentConfig) -> Vec<Violation> {
        let p: Params = match parse_params(config) {
            Ok(p) => p,
            Err(v) => return vec![v],
        };
        let mut out = Vec::new();
        if p.b.is_none() && p.series.is_none() && p.condition.is_none() {
            out.push(Violation::error("params", "nothing to do: give b, series or condition"));
        }
        if let Some(b) = &p.b {
            out.extend(p.field.violations("params.field"));
            let model = &p.field.model;
            if model.dim != 2 || model.components != 1 {
                out.push(Violation::error("params.field.model", "the solver needs a scalar two-parameter sheet"));
            }
            if let Err(e) = b.validate() {
                out.push(Violation::error("params.b", e.to_string()));
            }
            if p.level > p.field.level {
                out.push(Violation::error("params.level", "solution nodes must be path nodes: level ≤ field.level"));
            }
            if let Err(e) = SpatialGrid::new(p.x.lo, p.x.hi, p.x.points) {
                out.push(Violation::error("params.x", e.to_string()));
            }
            if let Err(e) = scheme_registry().get(&p.scheme) {
                out.push(Violation::error("params.scheme", e.to_string()));
            }
            if p.bins == 0 {
                out.push(Violation::error("params.bins", "must be positive"));
            }
        }
        if let Some(s) = &p.series {
            if s.level == 0 || s.level > 10 {
                out.push(Violation::error("params.series.level", "must lie in 1..=10"));
            }
        }
        if let Some(c) = &p.condition {
            if let Err(e) = check_regularization_condition(c.rho, &c.zeta, c.n, c.notion) {
                out.push(Violation::error("params.condition", e.to_string()));
            }
        }
        out
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), CliError> {
        let p: Params = params(&ctx.config)?;
        let seed = ctx.seed();
        if let Some(b) = &p.b {
            let scheme = ctx.stage("setup", || scheme_registry().get(&p.scheme))?;
            let x = ctx.stage("setup", || SpatialGrid::new(p.x.lo, p.x.hi, p.x.points))?;
            let sampler = ctx.stage("factorise", || p.field.sampler())?;
            let w = ctx.stage("sample", || sampler.sample(seed, p.sample))?;
            let field = ctx.stage("averaged-field", || averaged_field(b, &w, p.level, x, p.route, p.bins))?;
            let xi = GoursatBoundary::constant(p.x0, field.side(), field.side());
            let sol = ctx.stage("picard", || solve_picard(&xi, &field, scheme, &p.picard))?;
            ctx.write_csv("solution.csv", |w| sol.write_csv(w))?;
            write_log(ctx, "picard_log.csv", &sol)?;
            if let Some(r) = &p.reference {
                let side = sampler.grid().shape()[0];
                let fine_xi = GoursatBoundary::constant(p.x0, side, side);
                let direct = ctx.stage("direct-picard", || solve_direct_picard(&fine_xi, &w, b, &p.picard))?;
                let stride = (side - 1) / (field.side() - 1);
                let mut diff: f64 = 0.0;
                let mut scale: f64 = 0.0;
                for i in 0..field.side() {
                    for j in 0..field.side() {
                        let d = direct.at(stride * i, stride * j);
                        diff = diff.max((sol.at(i, j) - d).abs());
                        scale = scale.max((d - p.x0).abs());
                    }
                }
                ctx.write_csv("direct_solution.csv", |w| direct.write_csv(w))?;
                ctx.write_csv("reference_comparison.csv", |w| {
                    writeln!(w, "max_difference,scale,relative")?;
                    writeln!(w, "{diff},{scale},{}", diff / scale)
                })?;
                ctx.check(
                    "young_matches_direct",
                    diff <= r.tolerance * scale,
                    format!("sup difference {diff:.3e} vs scale {scale:.3e} (relative {:.3e}, limit {})", diff / scale, r.tolerance),
                );
            }
        }

        if let Some(s) = &p.series {
            let extrapolated = ctx.stage("series", || linear_goursat(s))?;
            let mut worst: f64 = 0.0;
            ctx.write_csv("series.csv", |w| {
                writeln!(w, "t1,t2,solution,series")?;
                for (i, t1) in extrapolated.t_axes[0].iter().enumerate() {
                    for (j, t2) in extrapolated.t_axes[1].iter().enumerate() {
                        let exact = goursat_series(s.lambda, s.x0, *t1, *t2);
                        worst = worst.max((extrapolated.at(i, j) - exact).abs());
                        writeln!(w, "{t1},{t2},{},{exact}", extrapolated.at(i, j))?;
                    }
                }
                Ok(())
            })?;
            ctx.check(
                "goursat_series",
                worst <= s.tolerance,
                format!("sup error {worst:.3e} (limit {:e})", s.tolerance),
            );
        }

        if let Some(c) = &p.condition {
            let verdict = ctx.stage("condition", || check_regularization_condition(c.rho, &c.zeta, c.n, c.notion))?;
            ctx.write_json("condition.json", &verdict)?;
            if let Some(expect) = c.expect {
                ctx.check(
                    "regularization_condition",
                    verdict.satisfied == expect,
                    format!("{}: margin {} (expected satisfied = {expect})", verdict.binding, verdict.margin),
                );
            }
        }
        Ok(())
    }
}

/// `y = x₀ + λ∫∫y` with zero noise, solved at two levels and extrapolated.
fn linear_goursat(s: &SeriesSpec) -> sheetsew_core::Result<PathSolution> {
    let b = NonlinearitySpec::Linear { lambda: s.lambda };
    // b is linear, so any x-grid covering the solution interpolates exactly.
    let bound = goursat_series(s.lambda.abs(), s.x0.abs(), 1.0, 1.0) + 1.0;
    let x = SpatialGrid::new(-bound, bound, 17)?;
    let opts = PicardOptions { tol: 1e-14, max_iter: 200 };
    let solve = |level: u32| -> sheetsew_core::Result<PathSolution> {
        let zero = FieldSample::from_fn(SampleGrid::dyadic(2, level, 1.0)?, 1, |_| vec![0.0])?;
        let f = averaged_field(&b, &zero, level, x, FieldRoute::Direct, 16)?;
        let xi = GoursatBoundary::constant(s.x0, f.side(), f.side());
        solve_picard(&xi, &f, YoungScheme::Trapezoid, &opts)
    };
    richardson(&solve(s.level)?, &solve(s.level + 1)?)
}

fn write_log(ctx: &mut RunContext, name: &str, sol: &PathSolution) -> Result<(), CliError> {
    ctx.write_csv(name, |w| {
        writeln!(w, "iteration,update")?;
        for (k, u) in sol.log.iter().enumerate() {
            writeln!(w, "{k},{u}")?;
        }
        Ok(())
    })
}
