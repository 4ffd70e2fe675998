//! Finite Gaussian conditioning and local non-determinism checks.
//!
//! Conditional variances of a Gaussian field only depend on covariances, so
//! nothing here ever looks at sample values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{Point, Rect};
use crate::error::{Error, Result};
use crate::fields::{fbm_covariance, kappa_squared_1d, FieldKind, FieldModel};
use crate::linalg::{kronecker_apply, PseudoInverse};
use crate::rng;

/// Relative eigenvalue cutoff of the pseudo-inverse.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ConditioningProblem {
    pub model: FieldModel,
    pub target: Point,
    pub observed: Vec<Point>,
}

impl ConditioningProblem {
    /// Validates dimensions and nonnegativity and drops duplicate
    /// observation points (first occurrence kept).
    pub fn new(model: FieldModel, target: Point, observed: Vec<Point>) -> Result<Self> {
        model.validate()?;
        for p in std::iter::once(&target).chain(&observed) {
            if p.dim() != model.dim {
                return Err(Error::DimensionMismatch { expected: model.dim, got: p.dim() });
            }
            if !p.is_nonnegative() {
                return Err(Error::Domain(format!("negative coordinate in {p:?}")));
            }
        }
        let mut unique: Vec<Point> = Vec::with_capacity(observed.len());
        for p in observed {
            if !unique.contains(&p) {
                unique.push(p);
            }
        }
        Ok(Self { model, target, observed: unique })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionalMoments {
    /// `C⁺ r`: the conditional mean is `Σ_k weights_k W_{t^k}`.
    pub weights: Vec<f64>,
    pub variance: f64,
}

fn clamp_variance(var: f64, prior: f64) -> Result<f64> {
    if var >= 0.0 {
        Ok(var)
    } else if var >= -1e-10 * prior.max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("conditional variance {var:e} is negative beyond rounding")))
    }
}

/// `Var(W_u | W_{t¹}, …, W_{t^m}) = R(u,u) − rᵀC⁺r` and the weights `C⁺r`.
pub fn conditional_moments(problem: &ConditioningProblem) -> Result<ConditionalMoments> {
    let model = &problem.model;
    let u = problem.target.coords();
    let prior = model.covariance_unchecked(u, u);
    let m = problem.observed.len();
    if m == 0 {
        return Ok(ConditionalMoments { weights: Vec::new(), variance: prior });
    }
    let obs: Vec<&[f64]> = problem.observed.iter().map(Point::coords).collect();
    let c = DMatrix::from_fn(m, m, |i, j| model.covariance_unchecked(obs[i], obs[j]));
    let r = DVector::from_fn(m, |i, _| model.covariance_unchecked(u, obs[i]));
    let w = PseudoInverse::new(c, PINV_CUTOFF).solve(&r);
    let explained = r.dot(&w);
    Ok(ConditionalMoments { weights: w.iter().cloned().collect(), variance: clamp_variance(prior - explained, prior)? })
}

/// Conditioning of a separable model on a full tensor grid of observation
/// points. Eigenpairs of the per-axis covariance matrices give the
/// pseudo-inverse of their Kronecker product directly; the result equals
/// the dense computation with the same relative cutoff.
pub fn tensor_conditional_moments(model: &FieldModel, target: &Point, axes: &[Vec<f64>]) -> Result<ConditionalMoments> {
    if !model.is_separable() {
        return Err(Error::InvalidParameter(format!("{} covariance does not factorise", model.name())));
    }
    if axes.len() != model.dim || target.dim() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: axes.len() });
    }
    let u = target.coords();
    let prior = model.covariance_unchecked(u, u);
    let mut eigvals = Vec::with_capacity(axes.len());
    let mut eigvecs = Vec::with_capacity(axes.len());
    let mut projections = Vec::with_capacity(axes.len());
    let mut lambda_max = 1.0;
    for (i, nodes) in axes.iter().enumerate() {
        let n = nodes.len();
        let cov = DMatrix::from_fn(n, n, |a, b| ordered_axis_cov(model, i, nodes[a], nodes[b]));
        let r = DVector::from_fn(n, |a, _| ordered_axis_cov(model, i, u[i], nodes[a]));
        let eig = cov.symmetric_eigen();
        projections.push(eig.eigenvectors.tr_mul(&r));
        lambda_max *= eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        eigvals.push(eig.eigenvalues);
        eigvecs.push(eig.eigenvectors);
    }
    let cutoff = PINV_CUTOFF * lambda_max;
    let shape: Vec<usize> = axes.iter().map(Vec::len).collect();
    let total: usize = shape.iter().product();
    let mut coeff = vec![0.0; total];
    let mut explained = 0.0;
    let mut idx = vec![0usize; shape.len()];
    for slot in coeff.iter_mut() {
        let (mut lam, mut proj) = (1.0, 1.0);
        for (i, &j) in idx.iter().enumerate() {
            lam *= eigvals[i][j];
            proj *= projections[i][j];
        }
        if lam > cutoff {
            *slot = proj / lam;
            explained += proj * proj / lam;
        }
        for k in (0..shape.len()).rev() {
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    let scale = model.separable_scale();
    let weights = kronecker_apply(&eigvecs, &coeff);
    Ok(ConditionalMoments { weights, variance: clamp_variance(prior - scale * explained, prior)? })
}

fn ordered_axis_cov(model: &FieldModel, axis: usize, a: f64, b: f64) -> f64 {
    if a <= b {
        model.axis_covariance(axis, a, b)
    } else {
        model.axis_covariance(axis, b, a)
    }
}

/// Finite approximation of the strong past `F_s`: the field observed on the
/// dyadic grid of `[origin, s]` at the given level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrongPastApprox {
    pub s: Point,
    pub level: u32,
    pub origin: Point,
}

impl StrongPastApprox {
    pub fn new(s: Point, level: u32) -> Self {
        let origin = Point::zeros(s.dim());
        Self { s, level, origin }
    }

    pub fn with_origin(s: Point, level: u32, origin: Point) -> Result<Self> {
        if !origin.le(&s) {
            return Err(Error::Precondition(format!("origin {origin:?} is not below {s:?}")));
        }
        Ok(Self { s, level, origin })
    }

    /// Per-axis node lists of the observation grid.
    pub fn axes(&self) -> Vec<Vec<f64>> {
        let n = 1usize << self.level;
        (0..self.s.dim())
            .map(|i| {
                let (lo, hi) = (self.origin[i], self.s[i]);
                if lo == hi {
                    return vec![lo];
                }
                let mut v: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
                v[n] = hi;
                v
            })
            .collect()
    }

    pub fn points(&self) -> Vec<Point> {
        let axes = self.axes();
        let total: usize = axes.iter().map(Vec::len).product();
        (0..total)
            .map(|mut k| {
                let mut c = vec![0.0; axes.len()];
                for i in (0..axes.len()).rev() {
                    c[i] = axes[i][k % axes[i].len()];
                    k /= axes[i].len();
                }
                Point::new(&c).expect("finite grid")
            })
            .collect()
    }
}

/// `Var(W_t | W on the dyadic grid of [origin, s])`.
pub fn strong_past_variance(model: &FieldModel, t: &Point, approx: &StrongPastApprox) -> Result<f64> {
    model.validate()?;
    if t.dim() != model.dim || approx.s.dim() != model.dim || approx.origin.dim() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: t.dim() });
    }
    if !approx.s.le(t) {
        return Err(Error::Precondition(format!("t {t:?} is not above s {:?}", approx.s)));
    }
    if !approx.origin.is_nonnegative() || !approx.origin.le(&approx.s) {
        return Err(Error::Precondition("origin must satisfy 0 ≤ origin ≤ s".into()));
    }
    let axes = approx.axes();
    if model.is_separable() {
        return Ok(tensor_conditional_moments(model, t, &axes)?.variance);
    }
    if let FieldKind::BoundaryAugmented { boundary_hurst, interior_hurst, boundary_weights, interior_weight } = &model.kind {
        if approx.origin.coords().iter().all(|&o| o == 0.0) {
            return boundary_augmented_variance(
                model.dim,
                boundary_hurst,
                interior_hurst,
                boundary_weights.as_deref(),
                *interior_weight,
                t,
                &axes,
            );
        }
    }
    let problem = ConditioningProblem::new(model.clone(), *t, approx.points())?;
    Ok(conditional_moments(&problem)?.variance)
}

/// When the grid contains the coordinate axes, observing the augmented field
/// on it is the same as observing each boundary fBm on its axis nodes and
/// the interior sheet on the tensor grid, and these are independent.
fn boundary_augmented_variance(
    dim: usize,
    boundary_hurst: &[f64],
    interior_hurst: &[f64],
    weights: Option<&[f64]>,
    interior_weight: f64,
    t: &Point,
    axes: &[Vec<f64>],
) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..dim {
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        let fbm = FieldModel::fbs(&[boundary_hurst[i]])?;
        let v = tensor_conditional_moments(&fbm, &Point::new(&[t[i]])?, &[axes[i].clone()])?.variance;
        total += w * v;
    }
    if interior_weight > 0.0 {
        let sheet = FieldModel::fbs(interior_hurst)?;
        total += interior_weight * tensor_conditional_moments(&sheet, t, axes)?.variance;
    }
    Ok(total)
}

/// The bracket `(t₁−s₁)^{2H₁}(t₂−s₂)^{2H₂} + (t₁−s₁)^{2H₁}(t₂^{2H₂}−(t₂−s₂)^{2H₂})
/// + (t₂−s₂)^{2H₂}(t₁^{2H₁}−(t₁−s₁)^{2H₁})`.
pub fn fbs_lower_bound_bracket(hurst: &[f64], s: &Point, t: &Point) -> Result<f64> {
    if hurst.len() != 2 || s.dim() != 2 || t.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: hurst.len().max(s.dim()).max(t.dim()) });
    }
    if !s.le(t) || !s.is_nonnegative() {
        return Err(Error::Precondition(format!("need 0 ≤ s ≤ t, got {s:?}, {t:?}")));
    }
    let gap = |i: usize| (t[i] - s[i]).powf(2.0 * hurst[i]);
    let full = |i: usize| t[i].powf(2.0 * hurst[i]);
    Ok(gap(0) * gap(1) + gap(0) * (full(1) - gap(1)) + gap(1) * (full(0) - gap(0)))
}

/// Constant `c` such that `Var(W_t | F_s) ≥ c · bracket` for the model's
/// fractional Brownian sheet: `Π_j 1/(2H_j κ_j²)`, times `2^d` when
/// unnormalised. Equals 1 for the normalised sheet at `H = (½, ½)`.
pub fn fbs_bound_constant(model: &FieldModel) -> Result<f64> {
    let (hurst, normalized) = match &model.kind {
        FieldKind::FractionalBrownianSheet { hurst, normalized } => (hurst.clone(), *normalized),
        FieldKind::BrownianSheet => (vec![0.5; model.dim], true),
        FieldKind::BoundaryAugmented { .. } => {
            return Err(Error::InvalidParameter("the explicit bound applies to fractional Brownian sheets".into()))
        }
    };
    let mut c = 1.0;
    for &h in &hurst {
        c /= 2.0 * h * kappa_squared_1d(h, 40)?;
    }
    if !normalized {
        c *= 2f64.powi(model.dim as i32);
    }
    Ok(c)
}

/// Normalised explicit lower bound `c · bracket` for a two-parameter sheet.
pub fn fbs_variance_lower_bound(model: &FieldModel, s: &Point, t: &Point) -> Result<f64> {
    Ok(fbs_bound_constant(model)? * fbs_lower_bound_bracket(&model.hurst(), s, t)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LndNotion {
    Sectorial,
    Strong,
    Additive,
    Multiplicative,
}

impl LndNotion {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sectorial" => Ok(Self::Sectorial),
            "strong" => Ok(Self::Strong),
            "additive" => Ok(Self::Additive),
            "multiplicative" => Ok(Self::Multiplicative),
            other => Err(Error::InvalidParameter(format!("unknown LND notion '{other}'"))),
        }
    }

    /// Comparison function of the notion at per-axis gaps.
    pub fn comparison(&self, zeta: &[f64], gaps: &[f64]) -> f64 {
        match self {
            Self::Additive | Self::Sectorial => gaps.iter().zip(zeta).map(|(g, z)| g.powf(2.0 * z)).sum(),
            Self::Multiplicative => gaps.iter().zip(zeta).map(|(g, z)| g.powf(2.0 * z)).product(),
            Self::Strong => gaps.iter().zip(zeta).map(|(g, z)| g.powf(*z)).sum::<f64>().powi(2),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LndOptions {
    pub level: u32,
    /// Offset of the sectorial domain as a fraction of the domain extent.
    pub epsilon_fraction: f64,
    pub seed: u64,
    /// Include the deterministic near-degenerate sweep.
    pub sweep: bool,
}

impl Default for LndOptions {
    fn default() -> Self {
        Self { level: 5, epsilon_fraction: 0.1, seed: 0, sweep: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LndReport {
    pub notion: LndNotion,
    pub zeta: Vec<f64>,
    pub c_hat: f64,
    pub worst_pair: Option<(Point, Point)>,
    pub pairs_tested: usize,
    pub pairs_skipped: usize,
    pub level: u32,
    pub epsilon: f64,
}

/// Pairs `s ≤ t` near degeneracy: `s` on a lattice including the domain's
/// lower faces, one gap tiny and the others spread over the domain.
fn sweep_pairs(domain: &Rect) -> Vec<(Point, Point)> {
    let d = domain.dim();
    let extent = (0..d).map(|i| domain.gap(i)).fold(0.0, f64::max);
    let tiny = 1e-4 * extent;
    let fractions = [0.0, 0.25, 0.5, 0.75];
    let gaps = [tiny, 0.05 * extent, 0.25 * extent, 0.5 * extent];
    let mut out = Vec::new();
    let lattice_size = fractions.len().pow(d as u32);
    for k in 0..lattice_size {
        let mut s = *domain.lo();
        let mut rem = k;
        for i in 0..d {
            s.set(i, domain.lo()[i] + fractions[rem % fractions.len()] * domain.gap(i));
            rem /= fractions.len();
        }
        for axis in 0..d {
            for &g in &gaps {
                let mut t = s;
                for i in 0..d {
                    let step = if i == axis { tiny } else { g };
                    t.set(i, (s[i] + step).min(domain.hi()[i]));
                }
                out.push((s, t));
            }
        }
    }
    out
}

/// Estimates the LND constant `c` of `notion` by minimising
/// `Var(W_t | grid past of s) / comparison(t − s)` over random and
/// near-degenerate pairs in `domain`.
pub fn check_lnd(
    model: &FieldModel,
    notion: LndNotion,
    zeta: &[f64],
    domain: &Rect,
    trials: usize,
    opts: &LndOptions,
) -> Result<LndReport> {
    model.validate()?;
    if zeta.len() != model.dim || domain.dim() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: zeta.len() });
    }
    if zeta.iter().any(|z| !(*z > 0.0 && *z < 1.0)) {
        return Err(Error::InvalidParameter("zeta entries must lie in (0, 1)".into()));
    }
    if !domain.lo().is_nonnegative() {
        return Err(Error::Domain("LND domain must lie in the nonnegative orthant".into()));
    }
    let extent = (0..model.dim).map(|i| domain.gap(i)).fold(0.0, f64::max);
    if extent == 0.0 {
        return Err(Error::InvalidRect("empty LND domain".into()));
    }
    let (epsilon, work, origin) = if notion == LndNotion::Sectorial {
        let eps = opts.epsilon_fraction * extent;
        let lo = Point::new(&domain.lo().coords().iter().map(|x| x + eps).collect::<Vec<_>>())?;
        if !lo.le(domain.hi()) {
            return Err(Error::InvalidRect("ε offset leaves an empty domain".into()));
        }
        (eps, Rect::new(lo, *domain.hi())?, lo)
    } else {
        (0.0, *domain, Point::zeros(model.dim))
    };
    let mut pairs = Vec::with_capacity(trials);
    let mut rng = rng::aux_stream(opts.seed, 1);
    for _ in 0..trials {
        let mut s = *work.lo();
        let mut t = *work.lo();
        for i in 0..model.dim {
            let a = work.lo()[i] + rng.random::<f64>() * work.gap(i);
            let b = work.lo()[i] + rng.random::<f64>() * work.gap(i);
            s.set(i, a.min(b));
            t.set(i, a.max(b));
        }
        pairs.push((s, t));
    }
    if opts.sweep {
        pairs.extend(sweep_pairs(&work));
    }
    let results: Vec<Result<Option<f64>>> = pairs
        .par_iter()
        .map(|(s, t)| {
            let gaps: Vec<f64> = (0..model.dim).map(|i| t[i] - s[i]).collect();
            let cmp = notion.comparison(zeta, &gaps);
            if cmp <= 0.0 {
                return Ok(None);
            }
            let approx = StrongPastApprox::with_origin(*s, opts.level, origin)?;
            Ok(Some(strong_past_variance(model, t, &approx)? / cmp))
        })
        .collect();
    let mut c_hat = f64::INFINITY;
    let mut worst = None;
    let (mut tested, mut skipped) = (0, 0);
    for (pair, res) in pairs.iter().zip(results) {
        match res? {
            None => skipped += 1,
            Some(ratio) => {
                tested += 1;
                if ratio < c_hat {
                    c_hat = ratio;
                    worst = Some(*pair);
                }
            }
        }
    }
    if tested == 0 {
        return Err(Error::Precondition("every pair had a zero comparison function".into()));
    }
    Ok(LndReport {
        notion,
        zeta: zeta.to_vec(),
        c_hat,
        worst_pair: worst,
        pairs_tested: tested,
        pairs_skipped: skipped,
        level: opts.level,
        epsilon,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum FalsifierOutcome {
    /// `t` has zero variance given the trivial past while the additive
    /// comparison at `t` is positive.
    Witness { point: Point, variance: f64, comparison: f64 },
    NoWitness { reason: String },
}

/// Witness against additive LND for fields vanishing on the axes: the point
/// `t = (T/2, 0, …, 0)` relative to `s = 0`.
pub fn boundary_deterministic_falsifier(model: &FieldModel, zeta: &[f64], t_max: f64) -> Result<FalsifierOutcome> {
    model.validate()?;
    if zeta.len() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: zeta.len() });
    }
    if !model.has_deterministic_boundary() {
        return Ok(FalsifierOutcome::NoWitness {
            reason: format!("{} has a stochastic boundary", model.name()),
        });
    }
    let mut coords = vec![0.0; model.dim];
    coords[0] = 0.5 * t_max;
    let t = Point::new(&coords)?;
    let origin = Point::zeros(model.dim);
    let variance = strong_past_variance(model, &t, &StrongPastApprox::new(origin, 0))?;
    let comparison = LndNotion::Additive.comparison(zeta, &coords);
    if variance == 0.0 && comparison > 0.0 {
        Ok(FalsifierOutcome::Witness { point: t, variance, comparison })
    } else {
        Ok(FalsifierOutcome::NoWitness { reason: format!("variance {variance} at {t:?}") })
    }
}

/// Variance of one-parameter fBm at `t` given its values on `[0, s]` sampled
/// at `2^level` equal steps; used as an oracle for the augmented model.
pub fn fbm_grid_conditional_variance(hurst: f64, s: f64, t: f64, level: u32) -> Result<f64> {
    let model = FieldModel::fbs(&[hurst])?;
    strong_past_variance(&model, &Point::new(&[t])?, &StrongPastApprox::new(Point::new(&[s])?, level))
}

#[allow(dead_code)]
fn fbm_prior(hurst: f64, t: f64) -> f64 {
    fbm_covariance(hurst, t, t)
}
