//! Occupation measures of sample paths: Fourier transforms, moment decay,
//! local-time densities and Bessel-potential norms.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{Point, Rect};
use crate::conditioning::LndNotion;
use crate::error::{Error, Result};
use crate::fields::{FieldSample, PathSource, SampleGrid};
use crate::registry::Registry;
use crate::rng;
use crate::stats::{group_jackknife, line_fit, Estimate};

/// Index ranges `[lo_i, hi_i]` of the grid nodes spanning `rect`.
fn node_block(grid: &SampleGrid, rect: &Rect) -> Result<Vec<(usize, usize)>> {
    if rect.dim() != grid.dim() {
        return Err(Error::DimensionMismatch { expected: grid.dim(), got: rect.dim() });
    }
    (0..rect.dim())
        .map(|i| {
            let find = |x: f64| {
                grid.node_index(i, x)
                    .ok_or_else(|| Error::OutsideBox(format!("{x} is not a node of grid axis {i}")))
            };
            Ok((find(rect.lo()[i])?, find(rect.hi()[i])?))
        })
        .collect()
}

/// Trapezoid weights of the nodes `a[lo..=hi]`.
fn axis_weights(a: &[f64], lo: usize, hi: usize) -> Vec<f64> {
    let mut w = vec![0.0; hi - lo + 1];
    for j in lo..hi {
        let h = 0.5 * (a[j + 1] - a[j]);
        w[j - lo] += h;
        w[j + 1 - lo] += h;
    }
    w
}

/// Nodes of a rect block with their trapezoid weights (zero-weight nodes
/// dropped).
fn weighted_nodes(grid: &SampleGrid, block: &[(usize, usize)]) -> Vec<(usize, f64)> {
    let weights: Vec<Vec<f64>> = block.iter().enumerate().map(|(i, &(lo, hi))| axis_weights(grid.axis(i), lo, hi)).collect();
    let mut out = Vec::new();
    let mut idx: Vec<usize> = block.iter().map(|b| b.0).collect();
    loop {
        let w: f64 = idx.iter().enumerate().map(|(i, &j)| weights[i][j - block[i].0]).product();
        if w != 0.0 {
            out.push((grid.linear_index(&idx), w));
        }
        let mut i = idx.len();
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < block[i].1 {
                idx[i] += 1;
                break;
            }
            idx[i] = block[i].0;
        }
    }
}

fn phase(path: &FieldSample, k: usize, z: &[f64]) -> f64 {
    let n = path.grid.len();
    z.iter().enumerate().map(|(c, zc)| zc * path.values[c * n + k]).sum()
}

/// Quadrature of `∫_rect exp(i⟨z, W_r⟩) dr` from grid values.
pub trait QuadratureRule: Send + Sync {
    fn name(&self) -> &'static str;
    /// Values for each frequency in `zs`.
    fn spectrum(&self, path: &FieldSample, rect: &Rect, zs: &[Vec<f64>]) -> Result<Vec<Complex64>>;
}

/// Tensor trapezoid rule on the grid nodes. Valid while
/// `|z| · (largest oscillation of W over one cell) < 0.5`.
pub struct Trapezoid;

/// Largest Euclidean spread of `W` over the corners of a single cell.
pub fn max_cell_oscillation(path: &FieldSample, rect: &Rect) -> Result<f64> {
    let block = node_block(&path.grid, rect)?;
    let d = block.len();
    let cell_lo: Vec<(usize, usize)> = block.iter().map(|&(lo, hi)| (lo, hi.saturating_sub(1).max(lo))).collect();
    if block.iter().any(|&(lo, hi)| lo == hi) {
        return Ok(0.0);
    }
    let mut worst: f64 = 0.0;
    for (k, _) in weighted_nodes_all(&path.grid, &cell_lo) {
        let base = path.grid.multi_index(k);
        let corners: Vec<Vec<f64>> = (0..1usize << d)
            .map(|mask| {
                let idx: Vec<usize> = (0..d).map(|i| base[i] + ((mask >> i) & 1)).collect();
                path.vector_at(path.grid.linear_index(&idx))
            })
            .collect();
        for a in 0..corners.len() {
            for b in a + 1..corners.len() {
                let dist = corners[a].iter().zip(&corners[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                worst = worst.max(dist);
            }
        }
    }
    Ok(worst)
}

fn weighted_nodes_all(grid: &SampleGrid, block: &[(usize, usize)]) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = block.iter().map(|b| b.0).collect();
    loop {
        out.push((grid.linear_index(&idx), 1.0));
        let mut i = idx.len();
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] < block[i].1 {
                idx[i] += 1;
                break;
            }
            idx[i] = block[i].0;
        }
    }
}

/// Fourier transform of the node masses `Σ_k w_k δ_{W_k}` (trapezoid
/// weights), without any resolution check.
pub fn node_measure_transform(path: &FieldSample, rect: &Rect, zs: &[Vec<f64>]) -> Result<Vec<Complex64>> {
    let block = node_block(&path.grid, rect)?;
    let nodes = weighted_nodes(&path.grid, &block);
    zs.iter()
        .map(|z| {
            check_components(path, z)?;
            Ok(nodes.iter().map(|&(k, w)| Complex64::from_polar(w, phase(path, k, z))).sum())
        })
        .collect()
}

impl QuadratureRule for Trapezoid {
    fn name(&self) -> &'static str {
        "trapezoid"
    }
    fn spectrum(&self, path: &FieldSample, rect: &Rect, zs: &[Vec<f64>]) -> Result<Vec<Complex64>> {
        let zmax = zs.iter().map(|z| z.iter().map(|v| v * v).sum::<f64>().sqrt()).fold(0.0, f64::max);
        if zmax > 0.0 {
            let osc = max_cell_oscillation(path, rect)?;
            if zmax * osc >= 0.5 {
                return Err(Error::InsufficientResolution(format!(
                    "|z|·oscillation = {:.3} ≥ 0.5 for the trapezoid rule; refine the grid or use piecewise-linear",
                    zmax * osc
                )));
            }
        }
        node_measure_transform(path, rect, zs)
    }
}

fn check_components(path: &FieldSample, z: &[f64]) -> Result<()> {
    if z.len() != path.components {
        return Err(Error::DimensionMismatch { expected: path.components, got: z.len() });
    }
    Ok(())
}

/// `(e^{ip} − 1)/(ip)`.
fn phi1(p: f64) -> Complex64 {
    if p.abs() < 1e-4 {
        Complex64::new(1.0 - p * p / 6.0, p / 2.0 - p * p * p / 24.0)
    } else {
        let s = (0.5 * p).sin();
        Complex64::new(-2.0 * s * s, p.sin()) / Complex64::new(0.0, p)
    }
}

/// `∫_0^1 ∫_0^{1−u} exp(i(u x + v y)) dv du`.
fn phi2(x: f64, y: f64) -> Complex64 {
    let spread = x.abs().max(y.abs()).max((x - y).abs());
    if spread < 1e-3 {
        let (a, b) = (Complex64::new(0.0, x), Complex64::new(0.0, y));
        return 0.5 + (a + b) / 6.0 + (a * a + a * b + b * b) / 24.0 + (a * a * a + a * a * b + a * b * b + b * b * b) / 120.0;
    }
    (phi1(y) - phi1(x)) / Complex64::new(0.0, y - x)
}

/// `∫_T exp(i f)` over a triangle of area `area` with vertex values `f`.
fn triangle_integral(area: f64, f: [f64; 3]) -> Complex64 {
    // Put the pair with the largest spread in the divided difference.
    let d01 = (f[0] - f[1]).abs();
    let d02 = (f[0] - f[2]).abs();
    let d12 = (f[1] - f[2]).abs();
    let (a, b, c) = if d12 >= d01 && d12 >= d02 {
        (f[0], f[1], f[2])
    } else if d02 >= d01 {
        (f[1], f[0], f[2])
    } else {
        (f[2], f[0], f[1])
    };
    Complex64::from_polar(2.0 * area, a) * phi2(b - a, c - a)
}

/// Exact integral of `exp(i⟨z, Ŵ⟩)` for the piecewise-linear interpolant `Ŵ`
/// of the grid values: segments for `d = 1`, two triangles per cell for
/// `d = 2`. No resolution restriction on `|z|`.
pub struct PiecewiseLinear;

impl QuadratureRule for PiecewiseLinear {
    fn name(&self) -> &'static str {
        "piecewise-linear"
    }
    fn spectrum(&self, path: &FieldSample, rect: &Rect, zs: &[Vec<f64>]) -> Result<Vec<Complex64>> {
        let block = node_block(&path.grid, rect)?;
        let grid = &path.grid;
        let d = block.len();
        if d > 2 {
            return Err(Error::Precondition("piecewise-linear quadrature supports d ≤ 2".into()));
        }
        if block.iter().any(|&(lo, hi)| lo == hi) {
            return Ok(vec![Complex64::new(0.0, 0.0); zs.len()]);
        }
        zs.iter()
            .map(|z| {
                check_components(path, z)?;
                let mut acc = Complex64::new(0.0, 0.0);
                if d == 1 {
                    let a = grid.axis(0);
                    for j in block[0].0..block[0].1 {
                        let (p0, p1) = (phase(path, j, z), phase(path, j + 1, z));
                        acc += Complex64::from_polar(a[j + 1] - a[j], p0) * phi1(p1 - p0);
                    }
                    return Ok(acc);
                }
                let (a0, a1) = (grid.axis(0), grid.axis(1));
                let n1 = a1.len();
                let ph: Vec<Vec<f64>> = (block[0].0..=block[0].1)
                    .map(|i| (block[1].0..=block[1].1).map(|j| phase(path, i * n1 + j, z)).collect())
                    .collect();
                for i in 0..block[0].1 - block[0].0 {
                    let hx = a0[block[0].0 + i + 1] - a0[block[0].0 + i];
                    for j in 0..block[1].1 - block[1].0 {
                        let hy = a1[block[1].0 + j + 1] - a1[block[1].0 + j];
                        let area = 0.5 * hx * hy;
                        let (f00, f10, f01, f11) = (ph[i][j], ph[i + 1][j], ph[i][j + 1], ph[i + 1][j + 1]);
                        acc += triangle_integral(area, [f00, f10, f11]) + triangle_integral(area, [f00, f01, f11]);
                    }
                }
                Ok(acc)
            })
            .collect()
    }
}

pub type RuleCtor = fn() -> Box<dyn QuadratureRule>;

pub fn quadrature_registry() -> Registry<RuleCtor> {
    let mut reg: Registry<RuleCtor> = Registry::new("quadrature rule");
    reg.register("trapezoid", || Box::new(Trapezoid)).register("piecewise-linear", || Box::new(PiecewiseLinear));
    reg
}

/// `□_rect μ̂(z) = ∫_rect exp(i⟨W_r, z⟩) dr` by the trapezoid rule.
pub fn occupation_fourier(path: &FieldSample, rect: &Rect, z: &[f64]) -> Result<Complex64> {
    Ok(Trapezoid.spectrum(path, rect, &[z.to_vec()])?[0])
}

/// `∫_rect f(W_r) dr` by the trapezoid rule on the grid nodes; the
/// right-hand side of the occupation-times formula.
pub fn occupation_integral<F: Fn(&[f64]) -> f64>(path: &FieldSample, rect: &Rect, f: F) -> Result<f64> {
    let block = node_block(&path.grid, rect)?;
    Ok(weighted_nodes(&path.grid, &block).iter().map(|&(k, w)| w * f(&path.vector_at(k))).sum())
}

/// Frequencies laid out as `radii × directions`, index `r * dirs + j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialLayout {
    pub radii: Vec<f64>,
    pub directions: Vec<Vec<f64>>,
}

impl RadialLayout {
    /// `count` seeded unit directions in `ℝⁿ`. For `n = 1` the single
    /// direction `+1` is used: `|μ̂(−z)| = |μ̂(z)|`, so `−1` adds nothing.
    pub fn new(n: usize, radii: Vec<f64>, count: usize, seed: u64) -> Result<Self> {
        if n == 0 || count == 0 || radii.is_empty() {
            return Err(Error::InvalidParameter("radial layout needs n ≥ 1, directions and radii".into()));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] < 0.0 {
            return Err(Error::InvalidParameter("radii must be nonnegative and increasing".into()));
        }
        let directions = if n == 1 {
            vec![vec![1.0]]
        } else {
            let mut g = rng::aux_stream(seed, 11);
            (0..count)
                .map(|_| {
                    let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut g)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        };
        Ok(Self { radii, directions })
    }

    /// Uniformly spaced radii `0, h, …, radius`.
    pub fn uniform(n: usize, radius: f64, steps: usize, count: usize, seed: u64) -> Result<Self> {
        let radii = (0..=steps).map(|k| radius * k as f64 / steps as f64).collect();
        Self::new(n, radii, count, seed)
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        self.radii
            .iter()
            .flat_map(|r| self.directions.iter().map(move |d| d.iter().map(|x| r * x).collect()))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct OccupationSpectrum {
    pub rect: Rect,
    pub z_points: Vec<Vec<f64>>,
    /// `values[sample][z]`.
    pub values: Vec<Vec<Complex64>>,
    /// Grid intervals per axis of the underlying paths.
    pub resolution: Vec<usize>,
    pub rule: String,
    pub radial: Option<RadialLayout>,
}

impl OccupationSpectrum {
    /// Multiplies every value by `exp(−σ²|z|²/2)`, the transform of a
    /// Gaussian mollifier of scale `σ`.
    pub fn mollified(&self, sigma: f64) -> Self {
        let mut out = self.clone();
        for row in &mut out.values {
            for (v, z) in row.iter_mut().zip(&self.z_points) {
                let z2: f64 = z.iter().map(|x| x * x).sum();
                *v *= (-0.5 * sigma * sigma * z2).exp();
            }
        }
        out
    }

    /// CSV rows `sample,z1..zn,re,im`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.z_points.first().map_or(1, Vec::len);
        let zs: Vec<String> = (1..=n).map(|i| format!("z{i}")).collect();
        writeln!(w, "sample,{},re,im", zs.join(","))?;
        for (k, row) in self.values.iter().enumerate() {
            for (z, v) in self.z_points.iter().zip(row) {
                let zt: Vec<String> = z.iter().map(|x| x.to_string()).collect();
                writeln!(w, "{k},{},{},{}", zt.join(","), v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Spectra of every path of `source` over `rect` at `z_points`.
pub fn occupation_spectrum(
    source: &dyn PathSource,
    rect: &Rect,
    z_points: Vec<Vec<f64>>,
    rule: &dyn QuadratureRule,
) -> Result<OccupationSpectrum> {
    if source.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let first = source.path(0)?;
    let resolution = first.grid.shape().iter().map(|n| n - 1).collect();
    let values = (0..source.len())
        .into_par_iter()
        .map(|k| rule.spectrum(&source.path(k)?, rect, &z_points))
        .collect::<Result<Vec<_>>>()?;
    Ok(OccupationSpectrum { rect: *rect, z_points, values, resolution, rule: rule.name().into(), radial: None })
}

pub fn radial_spectrum(
    source: &dyn PathSource,
    rect: &Rect,
    layout: RadialLayout,
    rule: &dyn QuadratureRule,
) -> Result<OccupationSpectrum> {
    let mut s = occupation_spectrum(source, rect, layout.points(), rule)?;
    s.radial = Some(layout);
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    FourierDecay,
    HolderTime,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityFit {
    pub kind: FitKind,
    /// One exponent for decay fits, one per axis for Hölder fits.
    pub exponent: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `exponent ± 2·stderr`.
    pub band: Vec<[f64; 2]>,
    pub theory_target: f64,
    pub n_samples: usize,
    pub resolution: Vec<usize>,
    pub abscissae: Vec<f64>,
    /// Estimated `L_m` norms per abscissa (per axis for Hölder fits).
    pub moments: Vec<Vec<f64>>,
    pub m: f64,
}

impl RegularityFit {
    /// Upper band edge reaches `threshold` on every axis.
    pub fn reaches(&self, threshold: f64) -> bool {
        self.band.iter().all(|b| b[1] >= threshold)
    }
}

/// Decay exponent of `‖□μ̂(z)‖_m` against `1 + |z|²` implied by the moment
/// bounds: `1/(4 max ζ_i)` (multiplicative) or `Σ 1/(4ζ_i)` (additive).
pub fn decay_target(notion: LndNotion, zeta: &[f64]) -> f64 {
    match notion {
        LndNotion::Multiplicative => 0.25 / zeta.iter().cloned().fold(0.0, f64::max),
        LndNotion::Additive | LndNotion::Sectorial | LndNotion::Strong => zeta.iter().map(|z| 0.25 / z).sum(),
    }
}

/// Upper bound on the Bessel index: `Σ 1/(2ζ_i) − n/2` or `1/(2 max ζ_i) − n/2`.
pub fn alpha_bound(notion: LndNotion, zeta: &[f64], n: usize) -> f64 {
    2.0 * decay_target(notion, zeta) - 0.5 * n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayOptions {
    pub m: f64,
    pub directions: usize,
    pub seed: u64,
    pub groups: usize,
    pub min_ensemble: usize,
    /// Required span of the radii, in decades.
    pub min_decades: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        Self { m: 2.0, directions: 8, seed: 0, groups: 20, min_ensemble: 500, min_decades: 1.5 }
    }
}

fn power_mean(rows: &[Vec<f64>], col: impl Fn(&[f64]) -> f64, m: f64, skip: std::ops::Range<usize>) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (k, r) in rows.iter().enumerate() {
        if !skip.contains(&k) {
            acc += col(r);
            n += 1;
        }
    }
    (acc / n as f64).powf(1.0 / m)
}

/// Fits `‖□_rect μ̂(z)‖_m ≈ C (1+|z|²)^{−e}` over the given radii, averaging
/// `|μ̂|^m` over directions and the ensemble.
pub fn moment_decay_fit(
    source: &dyn PathSource,
    rect: &Rect,
    radii: &[f64],
    rule: &dyn QuadratureRule,
    theory_target: f64,
    opts: &DecayOptions,
) -> Result<RegularityFit> {
    if radii.len() < 5 {
        return Err(Error::Precondition("decay fit needs at least five radii".into()));
    }
    if radii[0] <= 0.0 || (radii[radii.len() - 1] / radii[0]).log10() < opts.min_decades {
        return Err(Error::Precondition(format!("radii must span at least {} decades", opts.min_decades)));
    }
    if !source.is_deterministic() && source.len() < opts.min_ensemble {
        return Err(Error::Precondition(format!("ensemble of {} below the minimum {}", source.len(), opts.min_ensemble)));
    }
    let n = source.path(0)?.components;
    let layout = RadialLayout::new(n, radii.to_vec(), opts.directions, opts.seed)?;
    let dirs = layout.directions.len();
    let spec = radial_spectrum(source, rect, layout, rule)?;
    let m = opts.m;
    // Per sample and radius: direction average of |μ̂|^m.
    let rows: Vec<Vec<f64>> = spec
        .values
        .iter()
        .map(|v| (0..radii.len()).map(|r| v[r * dirs..(r + 1) * dirs].iter().map(|c| c.norm().powf(m)).sum::<f64>() / dirs as f64).collect())
        .collect();
    let vol = rect.volume();
    let x: Vec<f64> = radii.iter().map(|r| (1.0 + r * r).ln()).collect();
    let moments_for = |skip: std::ops::Range<usize>| -> Vec<f64> {
        (0..radii.len()).map(|r| power_mean(&rows, |row| row[r], m, skip.clone())).collect()
    };
    let moments = moments_for(0..0);
    if let Some(r) = moments.iter().position(|&v| v <= 1e-12 * vol) {
        return Err(Error::InsufficientResolution(format!(
            "moment reached the quadrature noise floor at radius {}",
            radii[r]
        )));
    }
    let fit = |mom: &[f64]| -> Result<f64> {
        let y: Vec<f64> = mom.iter().map(|v| v.ln()).collect();
        Ok(-line_fit(&x, &y)?.slope)
    };
    let exponent = fit(&moments)?;
    let stderr = if rows.len() >= opts.groups {
        group_jackknife(rows.len(), opts.groups, |skip| fit(&moments_for(skip)))?.stderr
    } else {
        0.0
    };
    Ok(RegularityFit {
        kind: FitKind::FourierDecay,
        exponent: vec![exponent],
        stderr: vec![stderr],
        band: vec![[exponent - 2.0 * stderr, exponent + 2.0 * stderr]],
        theory_target,
        n_samples: rows.len(),
        resolution: spec.resolution,
        abscissae: radii.to_vec(),
        moments: vec![moments],
        m,
    })
}

/// `W_r = a · max(0, Σ r_i/T_i − 1)`: a deterministic path constant on half
/// the domain, so its occupation measure has an atom and `|μ̂|` does not decay.
pub fn plateau_ramp_path(grid: &SampleGrid, slope: f64) -> Result<FieldSample> {
    let t_max: Vec<f64> = grid.axes().iter().map(|a| *a.last().unwrap()).collect();
    let mut p = FieldSample::from_fn(grid.clone(), 1, |r: &Point| {
        let s: f64 = (0..r.dim()).map(|i| r[i] / t_max[i]).sum();
        vec![slope * (s - 1.0).max(0.0)]
    })?;
    p.description = format!("plateau ramp, slope {slope}");
    Ok(p)
}

/// Density of the occupation measure of `path` over `rect` on a regular
/// spatial grid.
#[derive(Clone, Debug, Serialize)]
pub struct LocalTimeEstimate {
    pub rect: Rect,
    /// `[lo, hi]` per spatial dimension.
    pub window: Vec<[f64; 2]>,
    pub bins: usize,
    /// Row-major over spatial dimensions, `bins^n` entries.
    pub density: Vec<f64>,
    pub mollifier: Option<f64>,
    pub clipped_fraction: f64,
}

impl LocalTimeEstimate {
    pub fn spatial_dim(&self) -> usize {
        self.window.len()
    }

    pub fn bin_width(&self, i: usize) -> f64 {
        (self.window[i][1] - self.window[i][0]) / self.bins as f64
    }

    pub fn bin_volume(&self) -> f64 {
        (0..self.spatial_dim()).map(|i| self.bin_width(i)).product()
    }

    pub fn bin_center(&self, mut k: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.spatial_dim()];
        for i in (0..self.spatial_dim()).rev() {
            let j = k % self.bins;
            k /= self.bins;
            x[i] = self.window[i][0] + (j as f64 + 0.5) * self.bin_width(i);
        }
        x
    }

    pub fn mass(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_volume()
    }

    /// `∫ f(x) L(x) dx` by the midpoint rule on the bins.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.density.iter().enumerate().map(|(k, d)| d * f(&self.bin_center(k))).sum::<f64>() * self.bin_volume()
    }

    /// `‖L‖₂²`.
    pub fn l2_squared(&self) -> f64 {
        self.density.iter().map(|d| d * d).sum::<f64>() * self.bin_volume()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.spatial_dim();
        let xs: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        writeln!(w, "{},density", xs.join(","))?;
        for (k, d) in self.density.iter().enumerate() {
            let c: Vec<String> = self.bin_center(k).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{},{d}", c.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalTimeOptions {
    pub bins: usize,
    /// Gaussian mollifier scale; `None` for the raw histogram.
    pub mollifier: Option<f64>,
    /// Spatial window per dimension; default `[min − 3σ, max + 3σ]` with `σ`
    /// the mollifier scale (half a bin of padding without one).
    pub window: Option<Vec<[f64; 2]>>,
    pub max_clipping: f64,
}

impl Default for LocalTimeOptions {
    fn default() -> Self {
        Self { bins: 256, mollifier: None, window: None, max_clipping: 0.01 }
    }
}

/// Time-weighted histogram of the path values over `rect` (trapezoid node
/// weights), optionally convolved with a Gaussian.
pub fn local_time_density(path: &FieldSample, rect: &Rect, opts: &LocalTimeOptions) -> Result<LocalTimeEstimate> {
    let n = path.components;
    let bins = opts.bins;
    if bins == 0 {
        return Err(Error::InvalidParameter("bins must be positive".into()));
    }
    let total_bins = bins.checked_pow(n as u32).filter(|&b| b <= 1 << 22).ok_or_else(|| {
        Error::InvalidParameter(format!("{bins}^{n} bins is too many"))
    })?;
    if let Some(s) = opts.mollifier {
        if !(s > 0.0) {
            return Err(Error::InvalidParameter("mollifier scale must be positive".into()));
        }
    }
    let block = node_block(&path.grid, rect)?;
    let nodes = weighted_nodes(&path.grid, &block);
    let vol = rect.volume();
    let window = match &opts.window {
        Some(w) => {
            if w.len() != n || w.iter().any(|b| !(b[1] > b[0])) {
                return Err(Error::InvalidParameter("window needs one increasing interval per component".into()));
            }
            w.clone()
        }
        None => (0..n)
            .map(|c| {
                let vals = nodes.iter().map(|&(k, _)| path.component(c)[k]);
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
                let pad = match opts.mollifier {
                    Some(s) => 3.0 * s,
                    None => {
                        let span = (hi - lo).max(1e-9);
                        0.5 * span / (bins as f64 - 1.0).max(1.0)
                    }
                };
                [lo - pad, hi + pad]
            })
            .collect(),
    };
    let widths: Vec<f64> = window.iter().map(|b| (b[1] - b[0]) / bins as f64).collect();
    let bin_vol: f64 = widths.iter().product();
    let mut mass = vec![0.0; total_bins];
    let mut clipped = 0.0;
    for &(k, w) in &nodes {
        let mut lin = 0usize;
        let mut inside = true;
        for c in 0..n {
            let v = path.component(c)[k];
            let j = ((v - window[c][0]) / widths[c]).floor();
            if !(j >= 0.0 && j < bins as f64) {
                // The top edge belongs to the last bin.
                if v == window[c][1] {
                    lin = lin * bins + bins - 1;
                    continue;
                }
                inside = false;
                break;
            }
            lin = lin * bins + j as usize;
        }
        if inside {
            mass[lin] += w;
        } else {
            clipped += w;
        }
    }
    if let Some(sigma) = opts.mollifier {
        for c in 0..n {
            mass = gaussian_smooth_axis(&mass, bins, n, c, sigma / widths[c]);
        }
        let kept: f64 = mass.iter().sum();
        clipped = (vol - kept).max(clipped);
    }
    let fraction = if vol > 0.0 { clipped / vol } else { 0.0 };
    if fraction > opts.max_clipping {
        return Err(Error::WindowClipping { fraction });
    }
    Ok(LocalTimeEstimate {
        rect: *rect,
        window,
        bins,
        density: mass.into_iter().map(|m| m / bin_vol).collect(),
        mollifier: opts.mollifier,
        clipped_fraction: fraction,
    })
}

/// Convolution along spatial axis `axis` with a sampled Gaussian of scale
/// `sigma_bins` (in bins), normalized to unit mass on the infinite lattice.
fn gaussian_smooth_axis(mass: &[f64], bins: usize, n: usize, axis: usize, sigma_bins: f64) -> Vec<f64> {
    let radius = (5.0 * sigma_bins).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|j| (-0.5 * (j as f64 / sigma_bins).powi(2)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let stride = bins.pow((n - 1 - axis) as u32);
    let mut out = vec![0.0; mass.len()];
    for (k, &m) in mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let j = ((k / stride) % bins) as isize;
        for (o, kv) in kernel.iter().enumerate() {
            let t = j + o as isize - radius;
            if t >= 0 && t < bins as isize {
                let target = (k as isize + (t - j) * stride as isize) as usize;
                out[target] += m * kv / norm;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SobolevNorm {
    pub value: f64,
    /// Largest radius covered by the quadrature.
    pub radius: f64,
    /// Share of the squared norm attributed to the extrapolated tail.
    pub tail_fraction: f64,
}

/// Surface measure of the unit sphere in `ℝⁿ` (`2` for `n = 1`).
fn sphere_area(n: usize) -> f64 {
    // Γ(n/2) by recursion from Γ(1) = 1 and Γ(½) = √π.
    let mut g = if n % 2 == 0 { 1.0 } else { PI.sqrt() };
    let mut x = if n % 2 == 0 { 1.0 } else { 0.5 };
    while x < n as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    2.0 * PI.powf(n as f64 / 2.0) / g
}

/// Direction-averaged radial integrand `(1+r²)^α |□μ̂|² |S^{n−1}| r^{n−1}`
/// and its trapezoid integral up to the last radius.
fn radial_integrand(spectrum: &OccupationSpectrum, sample: usize, alpha: f64) -> Result<(Vec<f64>, f64)> {
    let layout = spectrum
        .radial
        .as_ref()
        .ok_or_else(|| Error::Precondition("spectrum lacks a radial layout".into()))?;
    let values = spectrum.values.get(sample).ok_or(Error::EmptyEnsemble)?;
    let n = layout.directions[0].len();
    let dirs = layout.directions.len();
    let radii = &layout.radii;
    if radii.len() < 8 {
        return Err(Error::Precondition("radial quadrature needs at least eight radii".into()));
    }
    let area = sphere_area(n);
    let g: Vec<f64> = radii
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let avg = values[k * dirs..(k + 1) * dirs].iter().map(|c| c.norm_sqr()).sum::<f64>() / dirs as f64;
            (1.0 + r * r).powf(alpha) * avg * area * r.powi(n as i32 - 1)
        })
        .collect();
    let body = radii.windows(2).zip(g.windows(2)).map(|(r, v)| 0.5 * (r[1] - r[0]) * (v[0] + v[1])).sum();
    Ok((g, body))
}

/// The norm of the measure band-limited to the quadrature radius: no tail
/// is added. On coarse grids the per-path spectrum flattens out at the
/// discretisation floor, where a power-law tail fit is meaningless.
pub fn band_limited_norm(spectrum: &OccupationSpectrum, sample: usize, alpha: f64) -> Result<SobolevNorm> {
    let (_, body) = radial_integrand(spectrum, sample, alpha)?;
    let radius = *spectrum.radial.as_ref().expect("checked above").radii.last().unwrap();
    Ok(SobolevNorm { value: body.sqrt(), radius, tail_fraction: 0.0 })
}

/// `(∫ (1+|z|²)^α |□μ̂(z)|² dz)^{1/2}` for one sample by a radial trapezoid
/// rule with direction averaging. The tail beyond the last radius is
/// extrapolated from a power-law fit to the outer quarter of the integrand;
/// a tail above `max_tail` of the total is an error.
pub fn sobolev_norm(spectrum: &OccupationSpectrum, sample: usize, alpha: f64, max_tail: f64) -> Result<SobolevNorm> {
    let (g, body) = radial_integrand(spectrum, sample, alpha)?;
    let radii = &spectrum.radial.as_ref().expect("checked above").radii;
    let r_max = *radii.last().unwrap();
    let outer: Vec<(f64, f64)> = radii
        .iter()
        .zip(&g)
        .skip(radii.len() * 3 / 4)
        .filter(|(r, v)| **r > 0.0 && **v > 0.0)
        .map(|(r, v)| (r.ln(), v.ln()))
        .collect();
    let peak = g.iter().cloned().fold(0.0, f64::max);
    let tail_negligible = g[radii.len() * 3 / 4..].iter().all(|&v| v <= 1e-14 * peak);
    let tail = if tail_negligible || outer.len() < 3 {
        0.0
    } else {
        let (x, y): (Vec<f64>, Vec<f64>) = outer.into_iter().unzip();
        let fit = line_fit(&x, &y)?;
        let p = -fit.slope;
        if p <= 1.0 {
            return Err(Error::TruncationTail { fraction: 1.0, limit: max_tail, suggested_radius: f64::INFINITY });
        }
        let c = fit.intercept.exp();
        let tail = c * r_max.powf(1.0 - p) / (p - 1.0);
        let total = body + tail;
        if tail > max_tail * total {
            // Radius at which the extrapolated tail drops to `max_tail/2`.
            let target = 0.5 * max_tail * total * (p - 1.0) / c;
            let suggested = target.powf(1.0 / (1.0 - p));
            return Err(Error::TruncationTail { fraction: tail / total, limit: max_tail, suggested_radius: suggested });
        }
        tail
    };
    let total = body + tail;
    Ok(SobolevNorm { value: total.sqrt(), radius: r_max, tail_fraction: if total > 0.0 { tail / total } else { 0.0 } })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderOptions {
    pub m: f64,
    /// Lower corner of every rectangle.
    pub base: Vec<f64>,
    /// Gap on the axes not being varied.
    pub fixed_gap: f64,
    pub radius: f64,
    pub radial_steps: usize,
    /// Tail share allowed when extrapolating beyond `radius`; `None` uses
    /// the band-limited norm.
    pub max_tail: Option<f64>,
    pub groups: usize,
}

impl Default for HolderOptions {
    fn default() -> Self {
        Self { m: 2.0, base: vec![0.5, 0.5], fixed_gap: 0.25, radius: 64.0, radial_steps: 256, max_tail: None, groups: 20 }
    }
}

/// Per-axis Hölder exponent of `‖□_{s,t}L‖_{H^α}` in `L_m`: one axis gap runs
/// over `gaps` while the others stay at `fixed_gap`; the slope of
/// `log ‖·‖` against `log gap` is `γ̂_i`.
pub fn holder_time_fit(
    source: &dyn PathSource,
    alpha: f64,
    gaps: &[f64],
    rule: &dyn QuadratureRule,
    opts: &HolderOptions,
) -> Result<RegularityFit> {
    if gaps.len() < 5 {
        return Err(Error::Precondition("Hölder fit needs at least five gaps".into()));
    }
    if source.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let first = source.path(0)?;
    let d = first.grid.dim();
    let n = first.components;
    if opts.base.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: opts.base.len() });
    }
    let layout = RadialLayout::uniform(n, opts.radius, opts.radial_steps, 8, 0)?;
    let mut rects = Vec::new();
    for axis in 0..d {
        for &g in gaps {
            let hi: Vec<f64> = (0..d).map(|i| opts.base[i] + if i == axis { g } else { opts.fixed_gap }).collect();
            rects.push(Rect::from_coords(&opts.base, &hi)?);
        }
    }
    // norms[sample][rect]
    let norms = (0..source.len())
        .into_par_iter()
        .map(|k| {
            let path = source.path(k)?;
            let fixed = crate::fields::FixedPath(path);
            rects
                .iter()
                .map(|r| {
                    let spec = radial_spectrum(&fixed, r, layout.clone(), rule)?;
                    let norm = match opts.max_tail {
                        Some(t) => sobolev_norm(&spec, 0, alpha, t)?,
                        None => band_limited_norm(&spec, 0, alpha)?,
                    };
                    Ok(norm.value)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let m = opts.m;
    let x: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let moments_for = |axis: usize, skip: std::ops::Range<usize>| -> Vec<f64> {
        (0..gaps.len())
            .map(|j| power_mean(&norms, |row| row[axis * gaps.len() + j].powf(m), m, skip.clone()))
            .collect()
    };
    let slope = |mom: &[f64]| -> Result<f64> { Ok(line_fit(&x, &mom.iter().map(|v| v.ln()).collect::<Vec<_>>())?.slope) };
    let mut exponent = Vec::new();
    let mut stderr = Vec::new();
    let mut moments = Vec::new();
    for axis in 0..d {
        let mom = moments_for(axis, 0..0);
        exponent.push(slope(&mom)?);
        let se: Estimate = if norms.len() >= opts.groups {
            group_jackknife(norms.len(), opts.groups, |skip| slope(&moments_for(axis, skip)))?
        } else {
            Estimate { value: 0.0, stderr: 0.0 }
        };
        stderr.push(se.stderr);
        moments.push(mom);
    }
    Ok(RegularityFit {
        kind: FitKind::HolderTime,
        band: exponent.iter().zip(&stderr).map(|(e, s)| [e - 2.0 * s, e + 2.0 * s]).collect(),
        exponent,
        stderr,
        theory_target: 0.5,
        n_samples: norms.len(),
        resolution: first.grid.shape().iter().map(|s| s - 1).collect(),
        abscissae: gaps.to_vec(),
        moments,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{FieldModel, FixedPath, KroneckerSampler, SamplerOptions, FieldSampler};
    use approx::assert_relative_eq;

    fn bs_path(level: u32, seed: u64) -> FieldSample {
        let grid = SampleGrid::dyadic(2, level, 1.0).unwrap();
        let s = KroneckerSampler::new(&FieldModel::brownian_sheet(2), &grid, &SamplerOptions::default()).unwrap();
        s.sample(seed, 0).unwrap()
    }

    #[test]
    fn zero_frequency_is_volume() {
        let path = bs_path(4, 1);
        let rect = Rect::from_coords(&[0.25, 0.125], &[0.75, 1.0]).unwrap();
        for rule in [&Trapezoid as &dyn QuadratureRule, &PiecewiseLinear] {
            let v = rule.spectrum(&path, &rect, &[vec![0.0]]).unwrap()[0];
            assert_relative_eq!(v.re, rect.volume(), epsilon = 1e-12);
            assert!(v.im.abs() < 1e-14);
        }
    }

    #[test]
    fn constant_path_gives_pure_phase() {
        let grid = SampleGrid::dyadic(2, 3, 1.0).unwrap();
        let path = FieldSample::from_fn(grid, 1, |_| vec![0.7]).unwrap();
        let rect = Rect::unit(2);
        for rule in [&Trapezoid as &dyn QuadratureRule, &PiecewiseLinear] {
            let v = rule.spectrum(&path, &rect, &[vec![0.3]]).unwrap()[0];
            let want = Complex64::from_polar(1.0, 0.21);
            assert!((v - want).norm() < 1e-12);
        }
    }

    #[test]
    fn spectrum_is_additive_over_splits() {
        let path = bs_path(5, 2);
        let z = [vec![0.4]];
        let whole = Rect::unit(2);
        let left = Rect::from_coords(&[0.0, 0.0], &[0.375, 1.0]).unwrap();
        let right = Rect::from_coords(&[0.375, 0.0], &[1.0, 1.0]).unwrap();
        for rule in [&Trapezoid as &dyn QuadratureRule, &PiecewiseLinear] {
            let a = rule.spectrum(&path, &whole, &z).unwrap()[0];
            let b = rule.spectrum(&path, &left, &z).unwrap()[0] + rule.spectrum(&path, &right, &z).unwrap()[0];
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn piecewise_linear_matches_fine_quadrature_of_interpolant() {
        // Linear path: the interpolant is exact and the integral is closed form.
        let grid = SampleGrid::dyadic(2, 2, 1.0).unwrap();
        let path = FieldSample::from_fn(grid, 1, |r| vec![2.0 * r[0] + 3.0 * r[1]]).unwrap();
        let z = 5.0;
        let v = PiecewiseLinear.spectrum(&path, &Rect::unit(2), &[vec![z]]).unwrap()[0];
        let f = |a: f64| Complex64::new(a.sin() / a, 2.0 * (0.5 * a).sin().powi(2) / a);
        let want = f(2.0 * z) * f(3.0 * z);
        assert!((v - want).norm() < 1e-13, "{v} vs {want}");
        // Nearly coincident vertex values exercise the series branches.
        let flat = FieldSample::from_fn(SampleGrid::dyadic(2, 2, 1.0).unwrap(), 1, |r| vec![1e-7 * r[0]]).unwrap();
        let w = PiecewiseLinear.spectrum(&flat, &Rect::unit(2), &[vec![1.0]]).unwrap()[0];
        assert!((w - f(1e-7)).norm() < 1e-13, "{w} vs {}", f(1e-7));
    }

    #[test]
    fn trapezoid_rejects_underresolved_frequency() {
        let path = bs_path(3, 3);
        assert!(matches!(
            Trapezoid.spectrum(&path, &Rect::unit(2), &[vec![50.0]]),
            Err(Error::InsufficientResolution(_))
        ));
    }

    #[test]
    fn exact_second_moment_oracle() {
        // E|Σ w_k e^{izW_k}|² = Σ_jk w_j w_k exp(−½z² Var(W_j − W_k)).
        let level = 3;
        let grid = SampleGrid::dyadic(2, level, 1.0).unwrap();
        let model = FieldModel::brownian_sheet(2);
        let rect = Rect::unit(2);
        let z = 1.5;
        let block = node_block(&grid, &rect).unwrap();
        let nodes = weighted_nodes(&grid, &block);
        let mut exact = 0.0;
        for &(j, wj) in &nodes {
            for &(k, wk) in &nodes {
                let (a, b) = (grid.point(j), grid.point(k));
                let v = model.covariance(&a, &a).unwrap() + model.covariance(&b, &b).unwrap()
                    - 2.0 * model.covariance(&a, &b).unwrap();
                exact += wj * wk * (-0.5 * z * z * v).exp();
            }
        }
        let sampler = KroneckerSampler::new(&model, &grid, &SamplerOptions::default()).unwrap();
        let draws: Vec<f64> = (0..20000)
            .map(|k| node_measure_transform(&sampler.sample(9, k).unwrap(), &rect, &[vec![z]]).unwrap()[0].norm_sqr())
            .collect();
        let est = crate::stats::mean(&draws);
        let se = crate::stats::std_error(&draws);
        assert!((est - exact).abs() < 3.0 * se, "{est} vs {exact} ± {se}");
    }

    #[test]
    fn local_time_mass_and_point_mass() {
        let path = bs_path(5, 4);
        let rect = Rect::from_coords(&[0.0, 0.25], &[0.75, 1.0]).unwrap();
        let lt = local_time_density(&path, &rect, &LocalTimeOptions::default()).unwrap();
        assert_relative_eq!(lt.mass(), rect.volume(), max_relative = 1e-12);
        assert!(lt.density.iter().all(|d| *d >= 0.0));
        let smooth = local_time_density(&path, &rect, &LocalTimeOptions { mollifier: Some(0.05), ..Default::default() }).unwrap();
        assert!((smooth.mass() - rect.volume()).abs() < 1e-3 * rect.volume());

        let grid = SampleGrid::dyadic(2, 3, 1.0).unwrap();
        let constant = FieldSample::from_fn(grid, 1, |_| vec![0.35]).unwrap();
        let window = Some(vec![[0.0, 1.0]]);
        let lt = local_time_density(&constant, &Rect::unit(2), &LocalTimeOptions { bins: 10, window, ..Default::default() }).unwrap();
        assert_relative_eq!(lt.density[3] * lt.bin_volume(), 1.0, epsilon = 1e-12);
        assert_eq!(lt.density.iter().filter(|d| **d > 0.0).count(), 1);
    }

    #[test]
    fn local_time_clipping_is_reported() {
        let path = bs_path(4, 5);
        let opts = LocalTimeOptions { window: Some(vec![[0.0, 0.01]]), ..Default::default() };
        assert!(matches!(local_time_density(&path, &Rect::unit(2), &opts), Err(Error::WindowClipping { .. })));
    }

    #[test]
    fn occupation_times_formula() {
        let path = bs_path(6, 6);
        let rect = Rect::unit(2);
        let lt = local_time_density(&path, &rect, &LocalTimeOptions::default()).unwrap();
        let f = |x: f64| (-(x - 0.2).powi(2) / 0.5).exp();
        let lhs = lt.integrate(|x| f(x[0]));
        let rhs = occupation_integral(&path, &rect, |x| f(x[0])).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 0.02);
    }

    fn indicator_spectrum(alpha_radius: f64) -> OccupationSpectrum {
        let layout = RadialLayout::uniform(1, 2.0, 400, 1, 0).unwrap();
        let values = vec![layout
            .radii
            .iter()
            .map(|&r| Complex64::new(if r <= alpha_radius { 1.0 } else { 0.0 }, 0.0))
            .collect()];
        OccupationSpectrum {
            rect: Rect::unit(1),
            z_points: layout.points(),
            values,
            resolution: vec![1],
            rule: "synthetic".into(),
            radial: Some(layout),
        }
    }

    #[test]
    fn sobolev_norm_of_unit_ball_indicator() {
        let s = indicator_spectrum(1.0);
        let v = sobolev_norm(&s, 0, 0.0, 0.05).unwrap();
        assert_relative_eq!(v.value, 2f64.sqrt(), max_relative = 5e-3);
        assert_eq!(v.tail_fraction, 0.0);
        let mut last = 0.0;
        for alpha in [0.0, 0.5, 1.0, 2.0] {
            let v = sobolev_norm(&s, 0, alpha, 0.05).unwrap().value;
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn sobolev_tail_alarm() {
        // |μ̂|² ~ 1/(1+z²) with α = 0.4 leaves a heavy tail at radius 20.
        let layout = RadialLayout::uniform(1, 20.0, 200, 1, 0).unwrap();
        let values = vec![layout.radii.iter().map(|r| Complex64::new((1.0 + r * r).powf(-0.5), 0.0)).collect()];
        let s = OccupationSpectrum {
            rect: Rect::unit(1),
            z_points: layout.points(),
            values,
            resolution: vec![1],
            rule: "synthetic".into(),
            radial: Some(layout),
        };
        match sobolev_norm(&s, 0, 0.4, 0.05) {
            Err(Error::TruncationTail { suggested_radius, .. }) => assert!(suggested_radius > 20.0),
            other => panic!("expected tail alarm, got {other:?}"),
        }
        assert!(sobolev_norm(&s, 0, -0.2, 0.05).is_ok());
        // The band-limited norm is the plain trapezoid sum up to radius 20.
        let b = band_limited_norm(&s, 0, 0.4).unwrap();
        let g = |r: f64| 2.0 * (1.0 + r * r).powf(-0.6);
        let want: f64 = (0..200).map(|k| 0.05 * (g(0.1 * k as f64) + g(0.1 * (k + 1) as f64))).sum();
        assert_relative_eq!(b.value, want.sqrt(), max_relative = 1e-12);
        assert_eq!((b.radius, b.tail_fraction), (20.0, 0.0));
    }

    #[test]
    fn parseval_against_local_time() {
        let path = bs_path(5, 8);
        let rect = Rect::unit(2);
        let sigma = 0.05;
        let lt = local_time_density(&path, &rect, &LocalTimeOptions { bins: 1024, mollifier: Some(sigma), ..Default::default() }).unwrap();
        let layout = RadialLayout::uniform(1, 8.0 / sigma, 1600, 1, 0).unwrap();
        let fixed = FixedPath(path);
        let spec = radial_spectrum(&fixed, &rect, layout, &PiecewiseLinear).unwrap();
        // Trapezoid spectrum = transform of the weighted node masses.
        let trap = OccupationSpectrum {
            values: vec![node_measure_transform(&fixed.0, &rect, &spec.z_points).unwrap()],
            ..spec.clone()
        }
        .mollified(sigma);
        let lhs = sobolev_norm(&trap, 0, 0.0, 0.05).unwrap().value.powi(2);
        let rhs = 2.0 * PI * lt.l2_squared();
        assert_relative_eq!(lhs, rhs, max_relative = 0.05);
    }

    #[test]
    fn decay_targets() {
        assert_relative_eq!(decay_target(LndNotion::Multiplicative, &[0.5, 0.5]), 0.5);
        assert_relative_eq!(decay_target(LndNotion::Additive, &[0.5, 0.5]), 1.0);
        assert_relative_eq!(alpha_bound(LndNotion::Multiplicative, &[0.5, 0.5], 1), 0.5);
    }

    #[test]
    fn plateau_control_has_no_decay() {
        let grid = SampleGrid::dyadic(2, 6, 1.0).unwrap();
        let path = FixedPath(plateau_ramp_path(&grid, 8.0).unwrap());
        let radii: Vec<f64> = (0..8).map(|k| 2.0 * 2f64.powf(5.0 * k as f64 / 7.0)).collect();
        let fit = moment_decay_fit(&path, &Rect::unit(2), &radii, &PiecewiseLinear, 0.5, &DecayOptions::default()).unwrap();
        assert!(fit.exponent[0] <= 0.1, "{fit:?}");
    }
}
