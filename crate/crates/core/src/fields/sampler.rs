//! Exact and moving-average samplers.

use nalgebra::DMatrix;

use super::kernel::{g_kernel_cell_average, kappa_squared_1d, truncated_kernel_mass};
use super::{FieldModel, FieldSample, SampleGrid};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_psd, kronecker_apply};
use crate::registry::Registry;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct MovingAverageOptions {
    /// Lower integration cutoff (negative) replacing `−∞`.
    pub cutoff: f64,
    /// White-noise cells per grid interval on `[0, T]`.
    pub refine: usize,
    /// Width ratio of consecutive cells below zero.
    pub growth: f64,
    /// For `H < ½`: number of geometric halvings of the last cell of every
    /// grid interval, where the kernel is singular.
    pub grade: u32,
    /// Minimal accepted ratio of discretised to exact (truncated) kernel mass.
    pub min_mass: f64,
    pub kappa_resolution: u32,
}

impl Default for MovingAverageOptions {
    fn default() -> Self {
        Self { cutoff: -1000.0, refine: 8, growth: 1.1, grade: 12, min_mass: 0.99, kappa_resolution: 40 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerOptions {
    pub dense_limit: usize,
    pub kronecker_limit: usize,
    /// Relative pivot tolerance of the semidefinite Cholesky factorisation.
    pub psd_tol: f64,
    pub moving_average: MovingAverageOptions,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            dense_limit: 4096,
            kronecker_limit: 1 << 16,
            psd_tol: 1e-10,
            moving_average: MovingAverageOptions::default(),
        }
    }
}

/// A prepared sampler: factorisations are done once at construction, after
/// which samples for distinct indices can be drawn concurrently.
pub trait FieldSampler: Send + Sync {
    fn name(&self) -> &'static str;
    fn model(&self) -> &FieldModel;
    fn grid(&self) -> &SampleGrid;
    /// Number of standard normals consumed per component.
    fn noise_len(&self) -> usize;
    /// Maps one component's standard normals to field values on the grid.
    fn apply(&self, normals: &[f64]) -> Vec<f64>;

    fn truncation_deficit(&self) -> Option<f64> {
        None
    }

    fn sample(&self, seed: u64, sample: u64) -> Result<FieldSample> {
        let model = self.model();
        let n = self.grid().len();
        let mut values = Vec::with_capacity(n * model.components);
        for c in 0..model.components {
            let z = rng::normals(&mut rng::stream(seed, sample, c as u64), self.noise_len());
            values.extend(self.apply(&z));
        }
        Ok(FieldSample {
            grid: self.grid().clone(),
            components: model.components,
            values,
            seed,
            sample,
            description: model.describe(),
            truncation_deficit: self.truncation_deficit(),
        })
    }
}

pub type SamplerCtor = fn(&FieldModel, &SampleGrid, &SamplerOptions) -> Result<Box<dyn FieldSampler>>;

/// Samplers by name: `dense`, `kronecker`, `moving-average`, and `exact`
/// (Kronecker when the covariance factorises, dense otherwise).
pub fn sampler_registry() -> Registry<SamplerCtor> {
    let mut reg: Registry<SamplerCtor> = Registry::new("sampler");
    reg.register("exact", |m, g, o| exact_sampler(m, g, o))
        .register("dense", |m, g, o| Ok(Box::new(DenseSampler::new(m, g, o)?)))
        .register("kronecker", |m, g, o| Ok(Box::new(KroneckerSampler::new(m, g, o)?)))
        .register("moving-average", |m, g, o| Ok(Box::new(MovingAverageSampler::new(m, g, o)?)));
    reg
}

fn exact_sampler(model: &FieldModel, grid: &SampleGrid, opts: &SamplerOptions) -> Result<Box<dyn FieldSampler>> {
    if model.is_separable() {
        Ok(Box::new(KroneckerSampler::new(model, grid, opts)?))
    } else {
        Ok(Box::new(DenseSampler::new(model, grid, opts)?))
    }
}

/// One exact draw; prefer constructing a sampler once for ensembles.
pub fn sample_exact(model: &FieldModel, grid: &SampleGrid, seed: u64, sample: u64) -> Result<FieldSample> {
    exact_sampler(model, grid, &SamplerOptions::default())?.sample(seed, sample)
}

fn check_grid(model: &FieldModel, grid: &SampleGrid, limit: usize) -> Result<()> {
    model.validate()?;
    if grid.dim() != model.dim {
        return Err(Error::DimensionMismatch { expected: model.dim, got: grid.dim() });
    }
    if grid.len() > limit {
        return Err(Error::GridTooLarge { points: grid.len(), limit });
    }
    Ok(())
}

pub struct DenseSampler {
    model: FieldModel,
    grid: SampleGrid,
    factor: DMatrix<f64>,
}

impl DenseSampler {
    pub fn new(model: &FieldModel, grid: &SampleGrid, opts: &SamplerOptions) -> Result<Self> {
        check_grid(model, grid, opts.dense_limit)?;
        let pts = grid.points();
        let n = pts.len();
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = model.covariance_unchecked(pts[i].coords(), pts[j].coords());
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        let factor = cholesky_psd(&cov, opts.psd_tol)?;
        Ok(Self { model: model.clone(), grid: grid.clone(), factor })
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }
}

impl FieldSampler for DenseSampler {
    fn name(&self) -> &'static str {
        "dense"
    }
    fn model(&self) -> &FieldModel {
        &self.model
    }
    fn grid(&self) -> &SampleGrid {
        &self.grid
    }
    fn noise_len(&self) -> usize {
        self.grid.len()
    }
    fn apply(&self, normals: &[f64]) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.factor.row(i);
            *o = (0..=i).map(|j| row[j] * normals[j]).sum();
        }
        out
    }
}

/// Uses `chol(A ⊗ B) = chol(A) ⊗ chol(B)`; only per-axis factors are formed.
pub struct KroneckerSampler {
    model: FieldModel,
    grid: SampleGrid,
    factors: Vec<DMatrix<f64>>,
}

impl KroneckerSampler {
    pub fn new(model: &FieldModel, grid: &SampleGrid, opts: &SamplerOptions) -> Result<Self> {
        check_grid(model, grid, opts.kronecker_limit)?;
        if !model.is_separable() {
            return Err(Error::InvalidParameter(format!(
                "{} covariance does not factorise across axes",
                model.name()
            )));
        }
        let mut factors = Vec::with_capacity(model.dim);
        for (axis, nodes) in grid.axes().iter().enumerate() {
            let m = nodes.len();
            let cov = DMatrix::from_fn(m, m, |i, j| {
                let (a, b) = if nodes[i] <= nodes[j] { (nodes[i], nodes[j]) } else { (nodes[j], nodes[i]) };
                model.axis_covariance(axis, a, b)
            });
            factors.push(cholesky_psd(&cov, opts.psd_tol)?);
        }
        factors[0] *= model.separable_scale().sqrt();
        Ok(Self { model: model.clone(), grid: grid.clone(), factors })
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }
}

impl FieldSampler for KroneckerSampler {
    fn name(&self) -> &'static str {
        "kronecker"
    }
    fn model(&self) -> &FieldModel {
        &self.model
    }
    fn grid(&self) -> &SampleGrid {
        &self.grid
    }
    fn noise_len(&self) -> usize {
        self.grid.len()
    }
    fn apply(&self, normals: &[f64]) -> Vec<f64> {
        kronecker_apply(&self.factors, normals)
    }
}

/// Discretised moving-average representation
/// `W_t = κ^{−1} ∫ Π_i g_{H_i}(s_i, t_i) dW_s`, truncated below at a cutoff.
///
/// Each axis carries white-noise cells: `refine` cells per grid interval on
/// `[0, T]` and geometrically growing cells from `0` down to the cutoff. Each
/// cell weight is the exact cell average of the kernel, which stays accurate
/// next to the `H < ½` singularities where midpoint values lose mass.
pub struct MovingAverageSampler {
    model: FieldModel,
    grid: SampleGrid,
    kernels: Vec<DMatrix<f64>>,
    truncation_deficit: f64,
    min_mass_ratio: f64,
}

fn noise_cells(nodes: &[f64], opts: &MovingAverageOptions, graded: bool) -> Vec<(f64, f64)> {
    let grade = if graded { opts.grade } else { 0 };
    let mut bps = vec![0.0];
    for &x in nodes.iter().filter(|&&x| x > 0.0) {
        let prev = *bps.last().unwrap();
        let width = (x - prev) / opts.refine as f64;
        for k in 1..opts.refine {
            bps.push(prev + width * k as f64);
        }
        for j in 1..=grade {
            bps.push(x - width * 0.5f64.powi(j as i32));
        }
        bps.push(x);
    }
    let first = if bps.len() > 1 { bps[1] - bps[0] } else { 1.0 / opts.refine as f64 };
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut hi = 0.0;
    let mut width = first * 0.5f64.powi(grade as i32);
    while hi > opts.cutoff {
        let lo = (hi - width).max(opts.cutoff);
        cells.push((lo, hi));
        hi = lo;
        width *= opts.growth;
    }
    cells.reverse();
    cells.extend(bps.windows(2).map(|w| (w[0], w[1])));
    cells
}

impl MovingAverageSampler {
    pub fn new(model: &FieldModel, grid: &SampleGrid, opts: &SamplerOptions) -> Result<Self> {
        check_grid(model, grid, opts.kronecker_limit)?;
        let ma = &opts.moving_average;
        if !(ma.cutoff < 0.0 && ma.cutoff.is_finite()) || ma.refine == 0 || !(ma.growth > 1.0) {
            return Err(Error::InvalidParameter(
                "moving average needs a finite negative cutoff, refine ≥ 1 and growth > 1".into(),
            ));
        }
        if !model.is_separable() {
            return Err(Error::InvalidParameter(format!(
                "no moving-average representation for {}",
                model.name()
            )));
        }
        let hurst = model.hurst();
        let mut kernels = Vec::with_capacity(model.dim);
        let mut min_ratio = f64::INFINITY;
        // Per grid node and axis: fraction of the full kernel mass retained.
        let mut kept: Vec<Vec<f64>> = Vec::with_capacity(model.dim);
        let mut kappa_sq = 1.0;
        for (axis, nodes) in grid.axes().iter().enumerate() {
            let h = hurst[axis];
            let k2 = kappa_squared_1d(h, ma.kappa_resolution)?;
            kappa_sq *= k2;
            let cells = noise_cells(nodes, ma, h < 0.5);
            let g = DMatrix::from_fn(nodes.len(), cells.len(), |a, c| {
                let (lo, hi) = cells[c];
                g_kernel_cell_average(h, lo, hi, nodes[a]) * (hi - lo).sqrt()
            });
            let mut axis_kept = Vec::with_capacity(nodes.len());
            for (a, &t) in nodes.iter().enumerate() {
                if t == 0.0 {
                    axis_kept.push(1.0);
                    continue;
                }
                let exact = truncated_kernel_mass(h, t, ma.cutoff, ma.kappa_resolution)?;
                let discrete: f64 = g.row(a).iter().map(|v| v * v).sum();
                min_ratio = min_ratio.min(discrete / exact);
                axis_kept.push(exact / (k2 * t.powf(2.0 * h)));
            }
            kept.push(axis_kept);
            kernels.push(g);
        }
        if min_ratio < ma.min_mass {
            return Err(Error::InsufficientResolution(format!(
                "discretised kernel mass is {:.4} of the exact mass (need {}); increase refine",
                min_ratio, ma.min_mass
            )));
        }
        let deficit = (0..grid.len())
            .map(|k| {
                let idx = grid.multi_index(k);
                1.0 - idx.iter().enumerate().map(|(i, &a)| kept[i][a]).product::<f64>()
            })
            .fold(0.0, f64::max);
        kernels[0] *= (model.separable_scale() / kappa_sq).sqrt();
        Ok(Self {
            model: model.clone(),
            grid: grid.clone(),
            kernels,
            truncation_deficit: deficit,
            min_mass_ratio: min_ratio,
        })
    }

    /// Smallest ratio of discretised to exact kernel mass over grid nodes.
    pub fn min_mass_ratio(&self) -> f64 {
        self.min_mass_ratio
    }

    /// Covariance of the discretised field between two linear grid indices.
    pub fn discrete_covariance(&self, k: usize, l: usize) -> f64 {
        let (a, b) = (self.grid.multi_index(k), self.grid.multi_index(l));
        self.kernels
            .iter()
            .enumerate()
            .map(|(i, g)| g.row(a[i]).dot(&g.row(b[i])))
            .product()
    }
}

impl FieldSampler for MovingAverageSampler {
    fn name(&self) -> &'static str {
        "moving-average"
    }
    fn model(&self) -> &FieldModel {
        &self.model
    }
    fn grid(&self) -> &SampleGrid {
        &self.grid
    }
    fn noise_len(&self) -> usize {
        self.kernels.iter().map(|g| g.ncols()).product()
    }
    fn apply(&self, normals: &[f64]) -> Vec<f64> {
        kronecker_apply(&self.kernels, normals)
    }
    fn truncation_deficit(&self) -> Option<f64> {
        Some(self.truncation_deficit)
    }
}

/// Unbiased empirical covariance of entries `i` and `j` across samples.
pub fn empirical_covariance(samples: &[Vec<f64>], i: usize, j: usize) -> f64 {
    let n = samples.len() as f64;
    let (mi, mj) = (
        samples.iter().map(|s| s[i]).sum::<f64>() / n,
        samples.iter().map(|s| s[j]).sum::<f64>() / n,
    );
    samples.iter().map(|s| (s[i] - mi) * (s[j] - mj)).sum::<f64>() / (n - 1.0)
}
