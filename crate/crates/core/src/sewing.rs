//! Multilevel Riemann sums of stochastic germs, convergence rates, BDG
//! checks and the conditional exponential germ.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{
    delta_apply, dyadic_partition, riemann_sum, Germ, GridPartition, IndexSet, Point, Rect,
};
use crate::conditioning::{conditional_moments, tensor_conditional_moments, ConditioningProblem, StrongPastApprox};
use crate::error::{Error, Result};
use crate::fields::{FieldKind, FieldModel, FieldSample, FieldSampler, PathSource, SampleGrid};
use crate::linalg::lstsq;
use crate::registry::Registry;
use crate::rng;
use crate::stats::{group_jackknife, lm_norm, mean, Estimate, LineFit};

pub type DynGerm<'a> = Box<dyn Germ<Complex64> + Send + Sync + 'a>;

/// Declared regularity of a germ, when known.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct GermMeta {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    /// `Ξ_{s,t} = 0` whenever `[s,t]` is degenerate along some axis.
    pub increment_type: bool,
    pub deterministic: bool,
}

/// A germ together with the ensemble of sample contexts it is evaluated on.
/// Realisations are built lazily, one sample at a time.
pub trait StochasticGerm: Sync {
    fn meta(&self) -> GermMeta;
    fn ensemble_size(&self) -> usize;
    fn realize(&self, sample: usize) -> Result<DynGerm<'_>>;
}

/// A deterministic real germ viewed as a one-member ensemble.
pub struct DeterministicGerm<F> {
    f: F,
    meta: GermMeta,
}

impl<F> DeterministicGerm<F>
where
    F: Fn(&Point, &Point) -> f64 + Send + Sync,
{
    pub fn new(f: F, beta: Option<f64>, increment_type: bool) -> Self {
        Self { f, meta: GermMeta { beta, increment_type, deterministic: true, ..GermMeta::default() } }
    }
}

impl<F> StochasticGerm for DeterministicGerm<F>
where
    F: Fn(&Point, &Point) -> f64 + Send + Sync,
{
    fn meta(&self) -> GermMeta {
        self.meta
    }
    fn ensemble_size(&self) -> usize {
        1
    }
    fn realize(&self, _sample: usize) -> Result<DynGerm<'_>> {
        Ok(Box::new(move |s: &Point, t: &Point| Complex64::new((self.f)(s, t), 0.0)))
    }
}

/// Sample paths drawn on demand from a prepared sampler.
#[derive(Clone)]
pub struct PathEnsemble {
    sampler: Arc<dyn FieldSampler>,
    seed: u64,
    size: usize,
}

impl PathEnsemble {
    pub fn new(sampler: Arc<dyn FieldSampler>, seed: u64, size: usize) -> Self {
        Self { sampler, seed, size }
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn grid(&self) -> &SampleGrid {
        self.sampler.grid()
    }

    pub fn model(&self) -> &FieldModel {
        self.sampler.model()
    }

    pub fn path(&self, k: usize) -> Result<FieldSample> {
        self.sampler.sample(self.seed, k as u64)
    }
}

impl PathSource for PathEnsemble {
    fn len(&self) -> usize {
        self.size
    }
    fn path(&self, k: usize) -> Result<FieldSample> {
        self.sampler.sample(self.seed, k as u64)
    }
}

/// Law of `W_r` given the strong past `F_s` for `r ≥ s`: per-component
/// conditional means and the common conditional variance.
pub trait ConditionalLaw: Send + Sync {
    fn name(&self) -> &'static str;
    fn moments(&self, path: &FieldSample, s: &Point, r: &Point) -> Result<(Vec<f64>, f64)>;
}

fn node_of(grid: &SampleGrid, p: &Point) -> Result<usize> {
    let mut idx = Vec::with_capacity(p.dim());
    for i in 0..p.dim() {
        idx.push(grid.node_index(i, p[i]).ok_or_else(|| {
            Error::OutsideBox(format!("{p:?} is not a node of the sample grid"))
        })?);
    }
    Ok(grid.linear_index(&idx))
}

/// Closed form for the Brownian sheet: mean `W_s`, variance `Π r_i − Π s_i`.
pub struct BrownianSheetLaw;

impl ConditionalLaw for BrownianSheetLaw {
    fn name(&self) -> &'static str {
        "brownian-sheet"
    }
    fn moments(&self, path: &FieldSample, s: &Point, r: &Point) -> Result<(Vec<f64>, f64)> {
        let var = r.coords().iter().product::<f64>() - s.coords().iter().product::<f64>();
        if s.coords().iter().product::<f64>() == 0.0 {
            return Ok((vec![0.0; path.components], var.max(0.0)));
        }
        let k = node_of(&path.grid, s)?;
        Ok((path.vector_at(k), var.max(0.0)))
    }
}

type MomentKey = (Vec<u64>, Vec<u64>);

/// Conditioning on the field over the dyadic grid of `[0, s]` at `level`.
/// Weights depend only on `(s, r)`, so they are cached and shared by all
/// samples.
pub struct GridConditionedLaw {
    model: FieldModel,
    level: u32,
    cache: Mutex<HashMap<MomentKey, Arc<(Vec<Point>, Vec<f64>, f64)>>>,
}

impl GridConditionedLaw {
    pub fn new(model: FieldModel, level: u32) -> Self {
        Self { model, level, cache: Mutex::new(HashMap::new()) }
    }

    fn weights(&self, s: &Point, r: &Point) -> Result<Arc<(Vec<Point>, Vec<f64>, f64)>> {
        let key = (
            s.coords().iter().map(|x| x.to_bits()).collect(),
            r.coords().iter().map(|x| x.to_bits()).collect(),
        );
        if let Some(hit) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(hit.clone());
        }
        let approx = StrongPastApprox::new(*s, self.level);
        let points = approx.points();
        let moments = if self.model.is_separable() {
            tensor_conditional_moments(&self.model, r, &approx.axes())?
        } else {
            conditional_moments(&ConditioningProblem::new(self.model.clone(), *r, points.clone())?)?
        };
        let entry = Arc::new((points, moments.weights, moments.variance));
        self.cache.lock().expect("cache lock").insert(key, entry.clone());
        Ok(entry)
    }
}

impl ConditionalLaw for GridConditionedLaw {
    fn name(&self) -> &'static str {
        "grid"
    }
    fn moments(&self, path: &FieldSample, s: &Point, r: &Point) -> Result<(Vec<f64>, f64)> {
        let entry = self.weights(s, r)?;
        let (points, weights, var) = (&entry.0, &entry.1, entry.2);
        let mut mean = vec![0.0; path.components];
        for (p, w) in points.iter().zip(weights) {
            if *w == 0.0 {
                continue;
            }
            let k = node_of(&path.grid, p)?;
            for (c, m) in mean.iter_mut().enumerate() {
                *m += w * path.component(c)[k];
            }
        }
        Ok((mean, var))
    }
}

pub type LawCtor = fn(&FieldModel, u32) -> Result<Box<dyn ConditionalLaw>>;

/// Conditional laws by name: `brownian-sheet` (closed form) and `grid`
/// (dyadic-grid conditioning at a level).
pub fn law_registry() -> Registry<LawCtor> {
    let mut reg: Registry<LawCtor> = Registry::new("conditional law");
    reg.register("brownian-sheet", |m, _| {
        if !matches!(m.kind, FieldKind::BrownianSheet) {
            return Err(Error::InvalidParameter("closed-form law needs a Brownian sheet".into()));
        }
        Ok(Box::new(BrownianSheetLaw))
    })
    .register("grid", |m, level| Ok(Box::new(GridConditionedLaw::new(m.clone(), level))));
    reg
}

/// `A_{s,t}(z) = ∫_s^t exp(i⟨z, μ_r⟩ − ½|z|² σ²_r) dr`, with `(μ_r, σ²_r)` the
/// conditional law of `W_r` given `F_s`, integrated by a tensor midpoint rule
/// with `resolution` nodes per axis.
pub struct ExponentialGerm {
    law: Arc<dyn ConditionalLaw>,
    paths: PathEnsemble,
    z: Vec<f64>,
    resolution: usize,
}

impl ExponentialGerm {
    pub fn new(law: Arc<dyn ConditionalLaw>, paths: PathEnsemble, z: Vec<f64>, resolution: usize) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidParameter("quadrature resolution must be positive".into()));
        }
        if z.len() != paths.model().components {
            return Err(Error::DimensionMismatch { expected: paths.model().components, got: z.len() });
        }
        Ok(Self { law, paths, z, resolution })
    }

    pub fn paths(&self) -> &PathEnsemble {
        &self.paths
    }

    /// Evaluates the germ on one path.
    pub fn eval_on(&self, path: &FieldSample, s: &Point, t: &Point) -> Result<Complex64> {
        let d = s.dim();
        let vol: f64 = (0..d).map(|i| t[i] - s[i]).product();
        if vol == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let z2: f64 = self.z.iter().map(|v| v * v).sum();
        let n = self.resolution;
        let total = n.pow(d as u32);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut r = *s;
        for k in 0..total {
            let mut rem = k;
            for i in (0..d).rev() {
                let j = rem % n;
                rem /= n;
                r.set(i, s[i] + (t[i] - s[i]) * (j as f64 + 0.5) / n as f64);
            }
            let (mu, var) = self.law.moments(path, s, &r)?;
            let phase: f64 = mu.iter().zip(&self.z).map(|(m, z)| m * z).sum();
            acc += Complex64::from_polar((-0.5 * z2 * var).exp(), phase);
        }
        Ok(acc * (vol / total as f64))
    }
}

struct PathGerm<'a> {
    germ: &'a ExponentialGerm,
    path: FieldSample,
}

impl Germ<Complex64> for PathGerm<'_> {
    fn eval(&self, s: &Point, t: &Point) -> Complex64 {
        self.germ.eval_on(&self.path, s, t).unwrap_or_else(|e| panic!("exponential germ: {e}"))
    }
}

impl StochasticGerm for ExponentialGerm {
    fn meta(&self) -> GermMeta {
        let h = self.paths.model().hurst();
        let zmax = h.iter().cloned().fold(0.0, f64::max);
        // Exponent bookkeeping of the occupation bound with θ just below
        // 1/(2 max ζ): β = 1 − θ ζ_max ≈ ½ is the borderline value.
        GermMeta {
            alpha: Some(1.0),
            beta: Some(1.0 - 0.5 * zmax / zmax.max(0.5)),
            gamma: None,
            increment_type: true,
            deterministic: false,
        }
    }
    fn ensemble_size(&self) -> usize {
        self.paths.len()
    }
    fn realize(&self, sample: usize) -> Result<DynGerm<'_>> {
        Ok(Box::new(PathGerm { germ: self, path: self.paths.path(sample)? }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SewingOptions {
    pub m: f64,
    /// Largest admissible number of cells at the finest level.
    pub cell_limit: usize,
}

impl Default for SewingOptions {
    fn default() -> Self {
        Self { m: 2.0, cell_limit: 1 << 20 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SewingResult {
    pub theta: IndexSet,
    pub levels: Vec<u32>,
    /// `sums[k][j]`: sample `k` at `levels[j]`.
    #[serde(skip)]
    pub sums: Vec<Vec<Complex64>>,
    /// `‖P_{n} − P_{n+1}‖_m` for consecutive levels.
    pub cauchy_lm: Vec<Estimate>,
    #[serde(skip)]
    pub limit_estimate: Vec<Complex64>,
    pub m: f64,
}

impl SewingResult {
    pub fn limit_abs_mean(&self) -> f64 {
        mean(&self.limit_estimate.iter().map(|c| c.norm()).collect::<Vec<_>>())
    }
}

fn levels_vec(dim: usize, theta: IndexSet, n: u32) -> Vec<u32> {
    (0..dim).map(|i| if theta.contains(i) { n } else { 0 }).collect()
}

/// Riemann sums over the uniform dyadic partitions with levels `n·θ`,
/// `n = 0..=max_level`, for every ensemble member.
pub fn multilevel_sums(
    germ: &dyn StochasticGerm,
    rect: &Rect,
    theta: IndexSet,
    max_level: u32,
    opts: &SewingOptions,
) -> Result<SewingResult> {
    let n_samples = germ.ensemble_size();
    if n_samples == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let cells = 1usize.checked_shl(max_level * theta.len() as u32).unwrap_or(usize::MAX);
    if cells > opts.cell_limit {
        return Err(Error::GridTooLarge { points: cells, limit: opts.cell_limit });
    }
    let partitions = (0..=max_level)
        .map(|n| dyadic_partition(rect, &levels_vec(rect.dim(), theta, n), theta))
        .collect::<Result<Vec<_>>>()?;
    let sums = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let g = germ.realize(k)?;
            Ok(partitions.iter().map(|p| riemann_sum(&*g, p)).collect())
        })
        .collect::<Result<Vec<Vec<Complex64>>>>()?;
    finish_sewing(theta, (0..=max_level).collect(), sums, opts.m)
}

fn finish_sewing(theta: IndexSet, levels: Vec<u32>, sums: Vec<Vec<Complex64>>, m: f64) -> Result<SewingResult> {
    let cauchy_lm = if sums.len() < 2 {
        // A single (deterministic) member: exact differences, no error bar.
        (1..levels.len())
            .map(|j| Estimate { value: (sums[0][j] - sums[0][j - 1]).norm(), stderr: 0.0 })
            .collect()
    } else {
        (1..levels.len())
            .map(|j| lm_norm(&sums.iter().map(|s| (s[j] - s[j - 1]).norm()).collect::<Vec<_>>(), m))
            .collect::<Result<Vec<_>>>()?
    };
    let limit_estimate = sums.iter().map(|s| *s.last().unwrap()).collect();
    Ok(SewingResult { theta, levels, sums, cauchy_lm, limit_estimate, m })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RateEstimate {
    /// Slope of `log₂ cauchy_lm` per level; `+∞` when every difference is 0.
    pub slope: f64,
    pub slope_stderr: f64,
    pub levels_used: usize,
}

impl RateEstimate {
    pub fn is_exact(&self) -> bool {
        self.slope == f64::INFINITY
    }
}

/// Least-squares slope of `log₂ ‖P_n − P_{n+1}‖_m` against `n`.
pub fn estimate_rate(result: &SewingResult) -> Result<RateEstimate> {
    estimate_rate_from(&result.levels, &result.cauchy_lm, &result.sums)
}

fn estimate_rate_from(levels: &[u32], cauchy: &[Estimate], sums: &[Vec<Complex64>]) -> Result<RateEstimate> {
    let scale = 1.0 + mean(&sums.iter().map(|s| s[0].norm()).collect::<Vec<_>>());
    let pts: Vec<(f64, f64)> = cauchy
        .iter()
        .zip(levels)
        .filter(|(c, _)| c.value > 1e-12 * scale)
        .map(|(c, &l)| (l as f64, c.value.log2()))
        .collect();
    if pts.is_empty() {
        return Ok(RateEstimate { slope: f64::INFINITY, slope_stderr: 0.0, levels_used: 0 });
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientResolution(format!(
            "rate fit needs three nonzero Cauchy differences, found {}",
            pts.len()
        )));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let fit: LineFit = crate::stats::line_fit(&x, &y)?;
    Ok(RateEstimate { slope: fit.slope, slope_stderr: fit.slope_stderr, levels_used: x.len() })
}

/// Theoretical slope per uniform level: `−|θ|(β−½)` for stochastic germs and
/// `−|θ|(β−1)` for deterministic ones. `None` when β is undeclared.
pub fn rate_target(meta: &GermMeta, theta: IndexSet) -> Option<f64> {
    let beta = meta.beta?;
    let shift = if meta.deterministic { 1.0 } else { 0.5 };
    Some(-(theta.len() as f64) * (beta - shift))
}

/// Geometric extrapolation of each sample's limit from the last two levels
/// and a fitted rate: `P_N + (P_N − P_{N−1}) r/(1 − r)`, `r = 2^{slope}`.
/// Off unless requested, since extrapolation can hide non-convergence.
pub fn extrapolated_limit(result: &SewingResult, rate: &RateEstimate) -> Result<Vec<Complex64>> {
    if result.levels.len() < 2 {
        return Err(Error::InsufficientResolution("extrapolation needs two levels".into()));
    }
    if rate.is_exact() {
        return Ok(result.limit_estimate.clone());
    }
    if !(rate.slope < 0.0) {
        return Err(Error::Numerical(format!("non-contracting rate {} cannot be extrapolated", rate.slope)));
    }
    let r = rate.slope.exp2();
    let n = result.levels.len();
    Ok(result.sums.iter().map(|s| s[n - 1] + (s[n - 1] - s[n - 2]) * (r / (1.0 - r))).collect())
}

/// Whether a fitted slope honours [`rate_target`] up to a relative tolerance.
pub fn rate_consistent(rate: &RateEstimate, target: f64, tolerance: f64) -> bool {
    rate.slope <= target * (1.0 - tolerance)
}

impl SewingResult {
    /// CSV rows `level,cauchy_lm,stderr`, indexed by the finer level.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "level,cauchy_lm,stderr")?;
        for (l, c) in self.levels.iter().skip(1).zip(&self.cauchy_lm) {
            writeln!(w, "{l},{},{}", c.value, c.stderr)?;
        }
        Ok(())
    }
}

/// `‖P^{(j)} − P^{dyadic}_{reference}‖_m` for each partition `j`, plus the
/// dyadic error at the same mesh for comparison.
#[derive(Clone, Debug, Serialize)]
pub struct PartitionDistance {
    pub mesh: f64,
    pub distance: Estimate,
    pub dyadic_distance: Estimate,
}

pub fn every_partition_convergence(
    germ: &dyn StochasticGerm,
    rect: &Rect,
    theta: IndexSet,
    partitions: &[GridPartition],
    reference_level: u32,
    m: f64,
) -> Result<Vec<PartitionDistance>> {
    if germ.ensemble_size() == 0 {
        return Err(Error::EmptyEnsemble);
    }
    if partitions.windows(2).any(|w| w[1].mesh() >= w[0].mesh()) {
        return Err(Error::Precondition("partition meshes must be strictly decreasing".into()));
    }
    for p in partitions {
        if p.bounding_rect() != *rect || p.active() != theta {
            return Err(Error::InvalidPartition("partition does not match the sewing box and θ".into()));
        }
    }
    let reference = dyadic_partition(rect, &levels_vec(rect.dim(), theta, reference_level), theta)?;
    let extent = theta.iter().map(|i| rect.gap(i)).fold(0.0, f64::max);
    let dyadic: Vec<GridPartition> = partitions
        .iter()
        .map(|p| {
            let n = (extent / p.mesh()).log2().round().max(0.0) as u32;
            dyadic_partition(rect, &levels_vec(rect.dim(), theta, n), theta)
        })
        .collect::<Result<_>>()?;
    let rows = (0..germ.ensemble_size())
        .into_par_iter()
        .map(|k| {
            let g = germ.realize(k)?;
            let limit = riemann_sum(&*g, &reference);
            let a: Vec<f64> = partitions.iter().map(|p| (riemann_sum(&*g, p) - limit).norm()).collect();
            let b: Vec<f64> = dyadic.iter().map(|p| (riemann_sum(&*g, p) - limit).norm()).collect();
            Ok((a, b))
        })
        .collect::<Result<Vec<_>>>()?;
    let lm = |v: Vec<f64>| -> Result<Estimate> {
        if v.len() < 2 {
            Ok(Estimate { value: v[0], stderr: 0.0 })
        } else {
            lm_norm(&v, m)
        }
    };
    partitions
        .iter()
        .enumerate()
        .map(|(j, p)| {
            Ok(PartitionDistance {
                mesh: p.mesh(),
                distance: lm(rows.iter().map(|r| r.0[j]).collect())?,
                dyadic_distance: lm(rows.iter().map(|r| r.1[j]).collect())?,
            })
        })
        .collect()
}

/// Seeded non-dyadic grid-like partitions of `rect` along `theta`: nodes are
/// a random subset of the level-`base_level` dyadic nodes whose largest gap
/// is exactly `extent_i · 2^{−k}` for each requested `k`.
pub fn random_partitions(rect: &Rect, theta: IndexSet, base_level: u32, ks: &[u32], seed: u64) -> Result<Vec<GridPartition>> {
    let mut rng = rng::aux_stream(seed, 7);
    ks.iter()
        .map(|&k| {
            if k > base_level {
                return Err(Error::InvalidParameter(format!("mesh level {k} exceeds base level {base_level}")));
            }
            let max_step = 1usize << (base_level - k);
            let n = 1usize << base_level;
            let axes = (0..rect.dim())
                .map(|i| {
                    let (lo, hi) = (rect.lo()[i], rect.hi()[i]);
                    if !theta.contains(i) || lo == hi {
                        return vec![lo, hi];
                    }
                    let mut nodes = vec![0usize];
                    let mut first = true;
                    while *nodes.last().unwrap() < n {
                        let step = if first { max_step } else { rng.random_range(1..=max_step) };
                        first = false;
                        nodes.push((nodes.last().unwrap() + step).min(n));
                    }
                    nodes.iter().map(|&j| if j == n { hi } else { lo + (hi - lo) * j as f64 / n as f64 }).collect()
                })
                .collect();
            GridPartition::new(axes, theta)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct TowerCheck {
    /// `L₂` norm of the fitted conditional expectation.
    pub fitted_norm: f64,
    /// Expected fitted norm under the null of zero conditional expectation.
    pub null_scale: f64,
    pub features: usize,
    pub samples: usize,
    /// Root mean square of the δ-values themselves.
    pub response_scale: f64,
}

impl TowerCheck {
    pub fn vanishes(&self) -> bool {
        self.fitted_norm <= 3.0 * self.null_scale
    }
}

/// Estimates `‖E^η_s[δ^θ_u Ξ_{s,t}]‖₂` by regressing the δ-values on
/// `[1, cos⟨z, W_r⟩, sin⟨z, W_r⟩]` over grid nodes `r` of the path with
/// `r_i ≤ s_i` for `i ∈ η`. With a correct germ the fit only captures noise.
pub fn verify_tower_vanishing(
    germ: &dyn StochasticGerm,
    paths: &PathEnsemble,
    z: &[f64],
    rect: &Rect,
    theta: IndexSet,
    eta: IndexSet,
    u: &Point,
) -> Result<TowerCheck> {
    if eta.is_empty() {
        return Err(Error::Precondition("η must be nonempty".into()));
    }
    if !eta.is_subset(&theta) {
        return Err(Error::Precondition("η must be a subset of θ".into()));
    }
    if germ.ensemble_size() != paths.len() {
        return Err(Error::DimensionMismatch { expected: paths.len(), got: germ.ensemble_size() });
    }
    let grid = paths.grid();
    let s = rect.lo();
    let nodes: Vec<usize> = (0..grid.len())
        .filter(|&k| {
            let p = grid.point(k);
            eta.iter().all(|i| p[i] <= s[i]) && p.coords().iter().all(|&c| c > 0.0)
        })
        .collect();
    let n = paths.len();
    let p = 1 + 2 * nodes.len();
    if n <= 2 * p {
        return Err(Error::Precondition(format!("ensemble of {n} too small for {p} regression features")));
    }
    let rows = (0..n)
        .into_par_iter()
        .map(|k| {
            let g = germ.realize(k)?;
            let y = delta_apply(&*g, u, theta, rect)?;
            let path = paths.path(k)?;
            let mut feat = Vec::with_capacity(p);
            feat.push(1.0);
            for &node in &nodes {
                let w = path.vector_at(node);
                let phase: f64 = w.iter().zip(z).map(|(a, b)| a * b).sum();
                feat.push(phase.cos());
                feat.push(phase.sin());
            }
            Ok((y, feat))
        })
        .collect::<Result<Vec<_>>>()?;
    let x = DMatrix::from_fn(n, p, |i, j| rows[i].1[j]);
    let mut fitted_sq = 0.0;
    let mut resid_sq = 0.0;
    let mut resp_sq = 0.0;
    for part in 0..2 {
        let y = DVector::from_fn(n, |i, _| if part == 0 { rows[i].0.re } else { rows[i].0.im });
        let beta = lstsq(&x, &y, 1e-10)?;
        let fit = &x * beta;
        fitted_sq += fit.norm_squared();
        resid_sq += (&y - &fit).norm_squared();
        resp_sq += y.norm_squared();
    }
    let nf = n as f64;
    let sigma2 = resid_sq / (nf - p as f64);
    Ok(TowerCheck {
        fitted_norm: (fitted_sq / nf).sqrt(),
        null_scale: (sigma2 * p as f64 / nf).sqrt(),
        features: p,
        samples: n,
        response_scale: (resp_sq / nf).sqrt(),
    })
}

/// Adapter turning a per-path germ function into a [`StochasticGerm`].
pub struct PathGermFamily<F> {
    paths: PathEnsemble,
    f: F,
    meta: GermMeta,
}

impl<F> PathGermFamily<F>
where
    F: Fn(&FieldSample, &Point, &Point) -> Complex64 + Send + Sync,
{
    pub fn new(paths: PathEnsemble, f: F, meta: GermMeta) -> Self {
        Self { paths, f, meta }
    }
}

impl<F> StochasticGerm for PathGermFamily<F>
where
    F: Fn(&FieldSample, &Point, &Point) -> Complex64 + Send + Sync,
{
    fn meta(&self) -> GermMeta {
        self.meta
    }
    fn ensemble_size(&self) -> usize {
        self.paths.len()
    }
    fn realize(&self, sample: usize) -> Result<DynGerm<'_>> {
        let path = self.paths.path(sample)?;
        Ok(Box::new(move |s: &Point, t: &Point| (self.f)(&path, s, t)))
    }
}

/// `Ξ_{s,t} = vol([s,t]) · exp(i⟨z, W_s⟩)`: a germ whose δ has nonzero
/// conditional expectation, used as a negative control.
pub fn frozen_phase_germ(paths: PathEnsemble, z: Vec<f64>) -> impl StochasticGerm {
    PathGermFamily::new(
        paths,
        move |path: &FieldSample, s: &Point, t: &Point| {
            let vol: f64 = (0..s.dim()).map(|i| t[i] - s[i]).product();
            let k = node_of(&path.grid, s).expect("germ evaluated at a grid node");
            let phase: f64 = path.vector_at(k).iter().zip(&z).map(|(a, b)| a * b).sum();
            Complex64::from_polar(vol, phase)
        },
        GermMeta { increment_type: true, ..GermMeta::default() },
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct BdgCheck {
    pub m: f64,
    pub cells: usize,
    pub ensemble: usize,
    /// `‖Σ_k Z_k‖_m`.
    pub lhs: Estimate,
    /// `(Σ_k ‖Z_k‖_m²)^{1/2}`.
    pub rhs: Estimate,
    pub ratio: Estimate,
    pub warning: Option<String>,
}

fn bdg_sides(arrays: &[Vec<f64>], m: f64, excluded: std::ops::Range<usize>) -> (f64, f64) {
    let kept = arrays.len() - excluded.len();
    let cells = arrays[0].len();
    let mut lhs = 0.0;
    let mut col = vec![0.0; cells];
    for (j, a) in arrays.iter().enumerate() {
        if excluded.contains(&j) {
            continue;
        }
        lhs += a.iter().sum::<f64>().abs().powf(m);
        for (c, v) in col.iter_mut().zip(a) {
            *c += v.abs().powf(m);
        }
    }
    let lhs = (lhs / kept as f64).powf(1.0 / m);
    let rhs = col.iter().map(|c| (c / kept as f64).powf(2.0 / m)).sum::<f64>().sqrt();
    (lhs, rhs)
}

/// Monte Carlo estimate of both sides of `‖Σ Z_k‖_m ≲ (Σ ‖Z_k‖_m²)^{1/2}`
/// from an ensemble of arrays (`arrays[sample][cell]`), with delete-group
/// jackknife errors.
pub fn bdg_check(arrays: &[Vec<f64>], m: f64) -> Result<BdgCheck> {
    if !(m >= 2.0) {
        return Err(Error::InvalidParameter(format!("moment order m = {m} must be at least 2")));
    }
    if arrays.len() < 20 {
        return Err(Error::EmptyEnsemble);
    }
    let cells = arrays[0].len();
    if cells == 0 || arrays.iter().any(|a| a.len() != cells) {
        return Err(Error::InvalidParameter("arrays must share a nonzero cell count".into()));
    }
    let n = arrays.len();
    let groups = 20;
    let lhs = group_jackknife(n, groups, |ex| Ok(bdg_sides(arrays, m, ex).0))?;
    let rhs = group_jackknife(n, groups, |ex| Ok(bdg_sides(arrays, m, ex).1))?;
    let ratio = group_jackknife(n, groups, |ex| {
        let (l, r) = bdg_sides(arrays, m, ex);
        Ok(l / r)
    })?;
    // Heavy tails of |ΣZ|^m make small ensembles unreliable.
    let sums: Vec<f64> = arrays.iter().map(|a| a.iter().sum::<f64>().abs().powf(m)).collect();
    let mu = mean(&sums);
    let rel_se = crate::stats::std_error(&sums) / mu.max(f64::MIN_POSITIVE);
    let warning = (rel_se > 0.1).then(|| {
        format!("ensemble of {n} is small for m = {m}: relative error of the m-th moment is {rel_se:.2}")
    });
    Ok(BdgCheck { m, cells, ensemble: n, lhs, rhs, ratio, warning })
}

/// How the BDG test arrays are built from a Brownian sheet path on an
/// `N × N` cell grid of `[0,1]²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum BdgArray {
    /// `Z_k = □W_k · cos(W_{lo_k})`: marginal martingale differences.
    WeightedIncrement,
    /// `Z_k = □W_k + c·√|cell|`: nonzero conditional means.
    Biased { c: f64 },
}

/// Ensemble of `arrays[sample][cell]` for [`bdg_check`].
pub fn bdg_arrays(kind: BdgArray, cells_per_axis: usize, ensemble: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let grid = SampleGrid::uniform(2, cells_per_axis, 1.0)?;
    let model = FieldModel::brownian_sheet(2);
    let sampler = crate::fields::KroneckerSampler::new(&model, &grid, &Default::default())?;
    let n = cells_per_axis;
    let h = 1.0 / n as f64;
    (0..ensemble)
        .into_par_iter()
        .map(|k| {
            let path = sampler.sample(seed, k as u64)?;
            let w = |i: usize, j: usize| path.value(0, &[i, j]);
            let mut z = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let inc = w(i + 1, j + 1) - w(i, j + 1) - w(i + 1, j) + w(i, j);
                    z.push(match kind {
                        BdgArray::WeightedIncrement => inc * w(i, j).cos(),
                        BdgArray::Biased { c } => inc + c * h,
                    });
                }
            }
            Ok(z)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::IncrementGerm;
    use crate::fields::{sampler_registry, SamplerOptions};
    use approx::assert_relative_eq;

    fn unit2() -> Rect {
        Rect::unit(2)
    }

    #[test]
    fn additive_germ_has_exact_limit() {
        let f = |x: &Point| (2.0 * x[0]).sin() * x[1].exp();
        let inc = IncrementGerm::new(f);
        let germ = DeterministicGerm::new(move |s: &Point, t: &Point| inc.eval(s, t), None, true);
        let res = multilevel_sums(&germ, &unit2(), IndexSet::full(2), 5, &SewingOptions::default()).unwrap();
        let exact = (2f64.sin() - 0.0) * (1f64.exp() - 1.0);
        for c in &res.cauchy_lm {
            assert!(c.value < 1e-12);
        }
        assert_relative_eq!(res.limit_estimate[0].re, exact, epsilon = 1e-12);
        assert!(estimate_rate(&res).unwrap().is_exact());
    }

    #[test]
    fn power_germ_decay() {
        let beta = 1.2;
        let germ = DeterministicGerm::new(
            move |s: &Point, t: &Point| ((t[0] - s[0]) * (t[1] - s[1])).powf(beta),
            Some(beta),
            true,
        );
        let res = multilevel_sums(&germ, &unit2(), IndexSet::full(2), 6, &SewingOptions::default()).unwrap();
        for (j, s) in res.sums[0].iter().enumerate() {
            assert_relative_eq!(s.re, 2f64.powf(-2.0 * j as f64 * (beta - 1.0)), max_relative = 1e-12);
        }
        let rate = estimate_rate(&res).unwrap();
        assert_relative_eq!(rate.slope, -0.4, epsilon = 1e-10);
    }

    #[test]
    fn extrapolation_recovers_geometric_limit() {
        let beta = 1.5;
        let germ = DeterministicGerm::new(move |s: &Point, t: &Point| (t[0] - s[0]).powf(beta) + (t[0] - s[0]), Some(beta), false);
        let rect = Rect::unit(1);
        let res = multilevel_sums(&germ, &rect, IndexSet::full(1), 6, &SewingOptions::default()).unwrap();
        let rate = estimate_rate(&res).unwrap();
        assert_relative_eq!(rate.slope, -0.5, epsilon = 1e-10);
        let lim = extrapolated_limit(&res, &rate).unwrap();
        assert_relative_eq!(lim[0].re, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn empty_theta_returns_germ_itself() {
        let germ = DeterministicGerm::new(|s: &Point, t: &Point| (t[0] - s[0]).powi(3) + t[1], None, false);
        let rect = Rect::from_coords(&[0.1, 0.2], &[0.7, 0.9]).unwrap();
        let res = multilevel_sums(&germ, &rect, IndexSet::empty(2), 3, &SewingOptions::default()).unwrap();
        assert_eq!(res.limit_estimate[0].re, 0.6f64.powi(3) + 0.9);
    }

    fn bs_paths(level: u32, n: usize, seed: u64) -> PathEnsemble {
        let grid = SampleGrid::dyadic(2, level, 1.0).unwrap();
        let model = FieldModel::brownian_sheet(2);
        let sampler = sampler_registry().get("exact").unwrap()(&model, &grid, &SamplerOptions::default()).unwrap();
        PathEnsemble::new(Arc::from(sampler), seed, n)
    }

    #[test]
    fn exponential_germ_at_zero_frequency_is_volume() {
        let germ = ExponentialGerm::new(Arc::new(BrownianSheetLaw), bs_paths(2, 2, 1), vec![0.0], 3).unwrap();
        let g = germ.realize(0).unwrap();
        let rect = Rect::from_coords(&[0.25, 0.5], &[0.75, 1.0]).unwrap();
        assert_relative_eq!(g.eval_rect(&rect).re, 0.25, epsilon = 1e-15);
        assert_eq!(g.eval_rect(&rect).im, 0.0);
    }

    #[test]
    fn exponential_germ_from_origin_self_converges() {
        let paths = bs_paths(1, 1, 1);
        let t = Point::new(&[1.0, 0.5]).unwrap();
        let s = Point::zeros(2);
        let z = 3.0;
        let coarse = ExponentialGerm::new(Arc::new(BrownianSheetLaw), paths.clone(), vec![z], 16).unwrap();
        let fine = ExponentialGerm::new(Arc::new(BrownianSheetLaw), paths.clone(), vec![z], 256).unwrap();
        let path = paths.path(0).unwrap();
        let a = coarse.eval_on(&path, &s, &t).unwrap();
        let b = fine.eval_on(&path, &s, &t).unwrap();
        assert!((a - b).norm() < 1e-3);
        assert!(b.im.abs() < 1e-15);
        assert!(b.norm() <= 0.5);
    }

    #[test]
    fn grid_law_matches_closed_form_for_brownian_sheet() {
        let paths = bs_paths(3, 1, 4);
        let path = paths.path(0).unwrap();
        let law = GridConditionedLaw::new(FieldModel::brownian_sheet(2), 1);
        let s = Point::new(&[0.5, 0.25]).unwrap();
        let r = Point::new(&[0.75, 0.625]).unwrap();
        let (m1, v1) = law.moments(&path, &s, &r).unwrap();
        let (m2, v2) = BrownianSheetLaw.moments(&path, &s, &r).unwrap();
        assert_relative_eq!(v1, v2, epsilon = 1e-9);
        assert_relative_eq!(m1[0], m2[0], epsilon = 1e-8);
    }

    #[test]
    fn tower_vanishing_and_control() {
        let paths = bs_paths(3, 3000, 17);
        let rect = Rect::from_coords(&[0.25, 0.25], &[0.75, 0.75]).unwrap();
        let u = Point::new(&[0.5, 0.5]).unwrap();
        let full = IndexSet::full(2);
        let first = IndexSet::singleton(2, 0);
        let z = vec![4.0];
        let germ = ExponentialGerm::new(Arc::new(BrownianSheetLaw), paths.clone(), z.clone(), 4).unwrap();
        for (theta, eta) in [(full, full), (full, first), (first, first)] {
            let check = verify_tower_vanishing(&germ, &paths, &z, &rect, theta, eta, &u).unwrap();
            assert!(check.vanishes(), "{check:?}");
        }
        let control = frozen_phase_germ(paths.clone(), z.clone());
        let bad = verify_tower_vanishing(&control, &paths, &z, &rect, first, first, &u).unwrap();
        assert!(!bad.vanishes(), "{bad:?}");
        assert!(verify_tower_vanishing(&germ, &paths, &z, &rect, full, IndexSet::empty(2), &u).is_err());
    }

    #[test]
    fn bdg_iid_ratio_near_one() {
        let arrays: Vec<Vec<f64>> = (0..4000)
            .map(|k| rng::normals(&mut rng::stream(5, k, 0), 16))
            .collect();
        let check = bdg_check(&arrays, 2.0).unwrap();
        assert!((check.ratio.value - 1.0).abs() < 3.0 * check.ratio.stderr + 0.01, "{check:?}");
        assert!(bdg_check(&arrays, 1.5).is_err());
    }

    #[test]
    fn random_partitions_have_requested_mesh() {
        let parts = random_partitions(&unit2(), IndexSet::full(2), 6, &[2, 3, 4], 3).unwrap();
        for (p, k) in parts.iter().zip([2, 3, 4]) {
            assert_relative_eq!(p.mesh(), 2f64.powi(-k), epsilon = 1e-15);
        }
    }
}
