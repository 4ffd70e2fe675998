use std::io::Write;

use serde::Deserialize;
use sheetsew_core::sewing::{bdg_arrays, bdg_check, BdgArray, BdgCheck};

use super::{params, parse_params, Experiment};
use crate::config::{ExperimentConfig, Violation};
use crate::error::CliError;
use crate::manifest::RunContext;

/// Monte Carlo BDG ratio `‖ΣZ‖_m / (Σ‖Z‖_m²)^{1/2}` for Brownian-sheet
/// martingale-difference arrays and a biased control, over doubling grids.
pub struct Bdg;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Params {
    #[serde(default = "four")]
    m: f64,
    #[serde(default = "sizes")]
    sizes: Vec<usize>,
    /// Bias of the control arrays in units of `√|cell|`.
    #[serde(default = "one")]
    control_bias: f64,
    /// Largest relative change of the ratio between consecutive sizes.
    #[serde(default = "stability")]
    stability: f64,
    /// Smallest growth of the control ratio from first to last size.
    #[serde(default = "growth")]
    control_growth: f64,
}

fn four() -> f64 {
    4.0
}

fn one() -> f64 {
    1.0
}

fn sizes() -> Vec<usize> {
    vec![4, 8, 16]
}

fn stability() -> f64 {
    0.15
}

fn growth() -> f64 {
    2.0
}

const DEFAULT_SAMPLES: usize = 2000;
const CONTROL_SEED_OFFSET: u64 = 0x5eed;

impl Experiment for Bdg {
    fn name(&self) -> &'static str {
        "bdg"
    }

    fn validate(&self, config: &ExperimentConfig) -> Vec<Violation> {
        let p: Params = match parse_params(config) {
            Ok(p) => p,
            Err(v) => return vec![v],
        };
        let mut out = Vec::new();
        if !(p.m >= 2.0) {
            out.push(Violation::error("params.m", "moment order must be at least 2"));
        }
        if p.sizes.len() < 2 || p.sizes.iter().any(|s| *s == 0 || *s > 256) {
            out.push(Violation::error("params.sizes", "need at least two sizes in 1..=256"));
        }
        if config.samples_or(DEFAULT_SAMPLES) < 20 {
            out.push(Violation::error("samples", "the jackknife needs at least 20 arrays"));
        }
        out
    }

    fn run(&self, ctx: &mut RunContext) -> Result<(), CliError> {
        let p: Params = params(&ctx.config)?;
        let n = ctx.config.samples_or(DEFAULT_SAMPLES);
        let seed = ctx.seed();
        let mut rows: Vec<(&str, usize, BdgCheck)> = Vec::new();
        for (label, kind, s) in [
            ("weighted", BdgArray::WeightedIncrement, seed),
            ("biased", BdgArray::Biased { c: p.control_bias }, seed.wrapping_add(CONTROL_SEED_OFFSET)),
        ] {
            for &size in &p.sizes {
                let check = ctx.stage(&format!("{label}-{size}"), || bdg_check(&bdg_arrays(kind, size, n, s)?, p.m))?;
                rows.push((label, size, check));
            }
        }
        ctx.write_csv("bdg.csv", |w| {
            writeln!(w, "array,cells_per_axis,lhs,lhs_stderr,rhs,rhs_stderr,ratio,ratio_stderr")?;
            for (label, size, c) in &rows {
                writeln!(
                    w,
                    "{label},{size},{},{},{},{},{},{}",
                    c.lhs.value, c.lhs.stderr, c.rhs.value, c.rhs.stderr, c.ratio.value, c.ratio.stderr
                )?;
            }
            Ok(())
        })?;
        let warnings: Vec<String> = rows.iter().filter_map(|(l, s, c)| c.warning.as_ref().map(|w| format!("{l}-{s}: {w}"))).collect();
        if !warnings.is_empty() {
            ctx.write_json("bdg_warnings.json", &warnings)?;
        }
        let ratios = |label: &str| -> Vec<f64> { rows.iter().filter(|r| r.0 == label).map(|r| r.2.ratio.value).collect() };
        let weighted = ratios("weighted");
        let worst = weighted.windows(2).map(|w| (w[1] / w[0] - 1.0).abs()).fold(0.0, f64::max);
        ctx.check(
            "ratio_stable",
            worst <= p.stability,
            format!("ratios {weighted:.3?}, largest relative step {worst:.3} (limit {})", p.stability),
        );
        let control = ratios("biased");
        let growth = control.last().unwrap() / control[0];
        ctx.check(
            "control_ratio_grows",
            growth >= p.control_growth,
            format!("control ratios {control:.3?}, growth {growth:.2}× (required ≥ {}×)", p.control_growth),
        );
        Ok(())
    }
}
