//! Averaged fields `Γ_{s,t}(x) = ∫_s^t b(x + w_r) dr`, the two-parameter
//! nonlinear Young integral and Picard iteration for
//! `y_t = ξ_t + ∫_0^t b(y_r + w_r) dr` on `[0,T]²` with scalar `y`.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::Rect;
use crate::conditioning::LndNotion;
use crate::error::{Error, Result};
use crate::fields::FieldSample;
use crate::registry::Registry;
use crate::rng;
use crate::stats::line_fit;

/// The drift `b: ℝ → ℝ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearitySpec {
    Constant { c: f64 },
    Linear { lambda: f64 },
    Sine { amplitude: f64, frequency: f64 },
    /// `b(x) = Σ_j a_j cos(k_j x) + b_j sin(k_j x)`, a band-limited surrogate
    /// for `b ∈ H^ρ`.
    Fourier { rho: f64, frequencies: Vec<f64>, cos: Vec<f64>, sin: Vec<f64> },
}

impl NonlinearitySpec {
    /// Coefficients of modulus `(1+k²)^{−(2ρ+1)/4}` at `k = j·band/modes`
    /// with seeded random phases.
    pub fn rough_fourier(rho: f64, modes: usize, band: f64, seed: u64) -> Result<Self> {
        if modes < 3 || !(band > 0.0) {
            return Err(Error::InvalidParameter("need at least three modes and a positive band".into()));
        }
        let mut g = rng::aux_stream(seed, 13);
        let mut frequencies = Vec::with_capacity(modes);
        let mut cos = Vec::with_capacity(modes);
        let mut sin = Vec::with_capacity(modes);
        for j in 1..=modes {
            let k = band * j as f64 / modes as f64;
            let amp = (1.0 + k * k).powf(-(2.0 * rho + 1.0) / 4.0);
            let ph: f64 = g.random_range(0.0..std::f64::consts::TAU);
            frequencies.push(k);
            cos.push(amp * ph.cos());
            sin.push(amp * ph.sin());
        }
        Ok(Self::Fourier { rho, frequencies, cos, sin })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Sine { frequency, .. } if !frequency.is_finite() => {
                Err(Error::InvalidParameter("sine frequency must be finite".into()))
            }
            Self::Fourier { rho, frequencies, cos, sin } => {
                if frequencies.len() != cos.len() || cos.len() != sin.len() || frequencies.is_empty() {
                    return Err(Error::InvalidParameter("Fourier table columns must have equal nonzero length".into()));
                }
                if frequencies.len() >= 3 {
                    let x: Vec<f64> = frequencies.iter().map(|k| (1.0 + k * k).ln()).collect();
                    let y: Vec<f64> = cos.iter().zip(sin).map(|(a, b)| a.hypot(*b).max(1e-300).ln()).collect();
                    let slope = line_fit(&x, &y)?.slope;
                    let want = -(2.0 * rho + 1.0) / 4.0;
                    if (slope - want).abs() > 0.15 {
                        return Err(Error::InvalidParameter(format!(
                            "coefficient decay {slope:.3} does not match the declared index ρ = {rho} (expected {want:.3})"
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Constant { c } => *c,
            Self::Linear { lambda } => lambda * x,
            Self::Sine { amplitude, frequency } => amplitude * (frequency * x).sin(),
            Self::Fourier { frequencies, cos, sin, .. } => frequencies
                .iter()
                .zip(cos.iter().zip(sin))
                .map(|(k, (a, b))| a * (k * x).cos() + b * (k * x).sin())
                .sum(),
        }
    }
}

/// Regular grid `lo, lo + h, …, hi` in space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl SpatialGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(hi > lo) || points < 2 {
            return Err(Error::InvalidParameter("spatial grid needs hi > lo and two points".into()));
        }
        Ok(Self { lo, hi, points })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn x(&self, m: usize) -> f64 {
        if m + 1 == self.points {
            self.hi
        } else {
            self.lo + m as f64 * self.step()
        }
    }

    /// Left node and linear weight of the right node for `x`.
    fn locate(&self, x: f64) -> Result<(usize, f64)> {
        if !(x >= self.lo && x <= self.hi) {
            return Err(Error::OutsideBox(format!("y = {x} leaves the spatial grid [{}, {}]", self.lo, self.hi)));
        }
        let u = (x - self.lo) / self.step();
        let m = (u.floor() as usize).min(self.points - 2);
        Ok((m, u - m as f64))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRoute {
    /// `b` convolved with the local-time increment of `−w`; spectral for
    /// Fourier tables.
    Convolution,
    /// Quadrature of `∫ b(x + w_r) dr` over the path nodes.
    Direct,
}

/// `Γ` on the dyadic rects of level `level`, stored as cumulative fields
/// `Γ_{0,t}(x_m)` at every node `t`.
#[derive(Clone, Debug)]
pub struct AveragedField {
    pub route: FieldRoute,
    pub level: u32,
    pub t_axes: [Vec<f64>; 2],
    pub x: SpatialGrid,
    cumulative: Vec<f64>,
}

fn axis_weights(a: &[f64], lo: usize, hi: usize) -> Vec<f64> {
    let mut w = vec![0.0; hi - lo + 1];
    for j in lo..hi {
        let h = 0.5 * (a[j + 1] - a[j]);
        w[j - lo] += h;
        w[j + 1 - lo] += h;
    }
    w
}

/// Path values over one field cell with their trapezoid weights.
fn cell_measure(w: &FieldSample, r0: (usize, usize), r1: (usize, usize)) -> Vec<(f64, f64)> {
    let (a0, a1) = (w.grid.axis(0), w.grid.axis(1));
    let w0 = axis_weights(a0, r0.0, r0.1);
    let w1 = axis_weights(a1, r1.0, r1.1);
    let n1 = a1.len();
    let vals = w.component(0);
    let mut out = Vec::with_capacity(w0.len() * w1.len());
    for (i, wi) in w0.iter().enumerate() {
        for (j, wj) in w1.iter().enumerate() {
            out.push((vals[(r0.0 + i) * n1 + r1.0 + j], wi * wj));
        }
    }
    out
}

/// Builds `Γ` from one path `w` (scalar, `d = 2`) on the level-`level` dyadic
/// rects of the path's box. `bins` sets the local-time resolution of the
/// convolution route.
pub fn averaged_field(
    b: &NonlinearitySpec,
    w: &FieldSample,
    level: u32,
    x: SpatialGrid,
    route: FieldRoute,
    bins: usize,
) -> Result<AveragedField> {
    b.validate()?;
    if w.grid.dim() != 2 || w.components != 1 {
        return Err(Error::Precondition("averaged fields need a scalar path over a two-parameter grid".into()));
    }
    let n = 1usize << level;
    let mut t_axes: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut fine_idx: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for i in 0..2 {
        let a = w.grid.axis(i);
        let (lo, hi) = (a[0], a[a.len() - 1]);
        for k in 0..=n {
            let t = if k == n { hi } else { lo + (hi - lo) * k as f64 / n as f64 };
            let j = w.grid.node_index(i, t).ok_or_else(|| {
                Error::InsufficientResolution(format!("path grid lacks the level-{level} node {t} on axis {i}"))
            })?;
            t_axes[i].push(t);
            fine_idx[i].push(j);
        }
    }
    let nx = x.points;
    // Local-time lattice for −w.
    let (wmin, wmax) = w.component(0).iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), &v| (a.min(v), c.max(v)));
    let span = (wmax - wmin).max(1e-12);
    let dy = span / bins.max(1) as f64;
    let y_lo = -wmax - dy;
    let cells: Vec<Vec<f64>> = (0..n * n)
        .into_par_iter()
        .map(|c| {
            let (i, j) = (c / n, c % n);
            let meas = cell_measure(w, (fine_idx[0][i], fine_idx[0][i + 1]), (fine_idx[1][j], fine_idx[1][j + 1]));
            let mut g = vec![0.0; nx];
            match (route, b) {
                (FieldRoute::Direct, _) => {
                    for (m, gm) in g.iter_mut().enumerate() {
                        let xm = x.x(m);
                        *gm = meas.iter().map(|&(v, wt)| wt * b.eval(xm + v)).sum();
                    }
                }
                (FieldRoute::Convolution, NonlinearitySpec::Fourier { frequencies, cos, sin, .. }) => {
                    // Γ(x) = Re Σ_k (a_k − i b_k) e^{ikx} ℓ̂(k), ℓ̂(k) = Σ wt e^{ikw}.
                    let coef: Vec<Complex64> = frequencies
                        .iter()
                        .zip(cos.iter().zip(sin))
                        .map(|(k, (a, s))| {
                            let lhat: Complex64 = meas.iter().map(|&(v, wt)| Complex64::from_polar(wt, k * v)).sum();
                            Complex64::new(*a, -*s) * lhat
                        })
                        .collect();
                    for (m, gm) in g.iter_mut().enumerate() {
                        let xm = x.x(m);
                        *gm = frequencies.iter().zip(&coef).map(|(k, c)| (c * Complex64::from_polar(1.0, k * xm)).re).sum();
                    }
                }
                (FieldRoute::Convolution, _) => {
                    // Cloud-in-cell deposit of the occupation measure of −w.
                    let mut lt: Vec<(usize, f64)> = Vec::with_capacity(2 * meas.len());
                    for &(v, wt) in &meas {
                        let u = (-v - y_lo) / dy;
                        let l = u.floor();
                        let f = u - l;
                        lt.push((l as usize, wt * (1.0 - f)));
                        lt.push((l as usize + 1, wt * f));
                    }
                    lt.sort_by_key(|e| e.0);
                    lt.dedup_by(|a, b| {
                        if a.0 == b.0 {
                            b.1 += a.1;
                            true
                        } else {
                            false
                        }
                    });
                    for (m, gm) in g.iter_mut().enumerate() {
                        let xm = x.x(m);
                        *gm = lt.iter().map(|&(l, mass)| mass * b.eval(xm - (y_lo + l as f64 * dy))).sum();
                    }
                }
            }
            g
        })
        .collect();
    let side = n + 1;
    let mut cumulative = vec![0.0; side * side * nx];
    for i in 1..side {
        for j in 1..side {
            let cell = &cells[(i - 1) * n + (j - 1)];
            for m in 0..nx {
                let v = cell[m] + cumulative[((i - 1) * side + j) * nx + m] + cumulative[(i * side + j - 1) * nx + m]
                    - cumulative[((i - 1) * side + j - 1) * nx + m];
                cumulative[(i * side + j) * nx + m] = v;
            }
        }
    }
    Ok(AveragedField { route, level, t_axes, x, cumulative })
}

impl AveragedField {
    pub fn side(&self) -> usize {
        self.t_axes[0].len()
    }

    fn cum(&self, i: usize, j: usize, m: usize) -> f64 {
        self.cumulative[(i * self.side() + j) * self.x.points + m]
    }

    /// `Γ` over the node rect `[t(i0,j0), t(i1,j1)]` at `x`, linearly
    /// interpolated in `x`.
    pub fn gamma(&self, i0: usize, j0: usize, i1: usize, j1: usize, x: f64) -> Result<f64> {
        if i0 > i1 || j0 > j1 || i1 >= self.side() || j1 >= self.side() {
            return Err(Error::InvalidRect(format!("node rect ({i0},{j0})–({i1},{j1}) outside the field")));
        }
        let (m, f) = self.x.locate(x)?;
        let at = |m: usize| self.cum(i1, j1, m) - self.cum(i0, j1, m) - self.cum(i1, j0, m) + self.cum(i0, j0, m);
        Ok((1.0 - f) * at(m) + f * at(m + 1))
    }

    /// `Γ` over a time rect whose corners are field nodes.
    pub fn gamma_rect(&self, rect: &Rect, x: f64) -> Result<f64> {
        let (i0, j0, i1, j1) = self.node_rect(rect)?;
        self.gamma(i0, j0, i1, j1, x)
    }

    fn node_rect(&self, rect: &Rect) -> Result<(usize, usize, usize, usize)> {
        if rect.dim() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, got: rect.dim() });
        }
        let find = |axis: usize, t: f64| {
            self.t_axes[axis]
                .iter()
                .position(|&a| a == t)
                .ok_or_else(|| Error::OutsideBox(format!("{t} is not a level-{} node on axis {axis}", self.level)))
        };
        Ok((find(0, rect.lo()[0])?, find(1, rect.lo()[1])?, find(0, rect.hi()[0])?, find(1, rect.hi()[1])?))
    }
}

/// How a cell's contribution `Γ_{u,v}(·)` is evaluated along `y`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YoungScheme {
    /// `Γ_{u,v}(y_u)`.
    LeftPoint,
    /// `¼ Σ_corners Γ_{u,v}(y_c)`; second order for smooth data.
    Trapezoid,
}

pub fn scheme_registry() -> Registry<YoungScheme> {
    let mut reg = Registry::new("Young scheme");
    reg.register("left-point", YoungScheme::LeftPoint).register("trapezoid", YoungScheme::Trapezoid);
    reg
}

fn cell_term(field: &AveragedField, y: &[f64], side: usize, i: usize, j: usize, s: usize, scheme: YoungScheme) -> Result<f64> {
    let (i1, j1) = (i + s, j + s);
    match scheme {
        YoungScheme::LeftPoint => field.gamma(i, j, i1, j1, y[i * side + j]),
        YoungScheme::Trapezoid => {
            let mut acc = 0.0;
            for (a, c) in [(i, j), (i1, j), (i, j1), (i1, j1)] {
                acc += field.gamma(i, j, i1, j1, y[a * side + c])?;
            }
            Ok(0.25 * acc)
        }
    }
}

/// `lim Σ Γ_{u,v}(y_u)` approximated on the level-`level` dyadic cells of
/// `rect`; `y` holds values at every field node (row-major).
pub fn nonlinear_young_integral(field: &AveragedField, y: &[f64], rect: &Rect, level: u32, scheme: YoungScheme) -> Result<f64> {
    let side = field.side();
    if y.len() != side * side {
        return Err(Error::DimensionMismatch { expected: side * side, got: y.len() });
    }
    if level > field.level {
        return Err(Error::InsufficientResolution(format!("level {level} is finer than the field level {}", field.level)));
    }
    let s = 1usize << (field.level - level);
    let (i0, j0, i1, j1) = field.node_rect(rect)?;
    if (i1 - i0) % s != 0 || (j1 - j0) % s != 0 {
        return Err(Error::InvalidPartition(format!("rect is not a union of level-{level} cells")));
    }
    let mut acc = 0.0;
    for i in (i0..i1).step_by(s) {
        for j in (j0..j1).step_by(s) {
            acc += cell_term(field, y, side, i, j, s, scheme)?;
        }
    }
    Ok(acc)
}

/// Boundary data `ξ¹` along `t₂ = 0` and `ξ²` along `t₁ = 0`; the interior
/// extension is `ξ_t = ξ¹(t₁) + ξ²(t₂) − ξ(0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoursatBoundary {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
}

impl GoursatBoundary {
    pub fn new(xi1: Vec<f64>, xi2: Vec<f64>) -> Result<Self> {
        if xi1.is_empty() || xi2.is_empty() {
            return Err(Error::InvalidParameter("boundary data must be nonempty".into()));
        }
        if xi1[0] != xi2[0] {
            return Err(Error::InvalidParameter("ξ¹ and ξ² must agree at the origin".into()));
        }
        Ok(Self { xi1, xi2 })
    }

    pub fn constant(x0: f64, n1: usize, n2: usize) -> Self {
        Self { xi1: vec![x0; n1], xi2: vec![x0; n2] }
    }

    pub fn from_fns(axes: [&[f64]; 2], f1: impl Fn(f64) -> f64, f2: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(axes[0].iter().map(|&t| f1(t)).collect(), axes[1].iter().map(|&t| f2(t)).collect())
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.xi1[i] + self.xi2[j] - self.xi1[0]
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PathSolution {
    pub t_axes: [Vec<f64>; 2],
    /// Row-major over `(t₁, t₂)` nodes.
    pub y: Vec<f64>,
    pub boundary: GoursatBoundary,
    /// Sup-norm updates, one per iteration.
    pub log: Vec<f64>,
    pub converged: bool,
}

impl PathSolution {
    pub fn side(&self) -> [usize; 2] {
        [self.t_axes[0].len(), self.t_axes[1].len()]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.y[i * self.t_axes[1].len() + j]
    }

    /// Value at time node `(t1, t2)`, if it is a node.
    pub fn value_at(&self, t1: f64, t2: f64) -> Option<f64> {
        let i = self.t_axes[0].iter().position(|&t| t == t1)?;
        let j = self.t_axes[1].iter().position(|&t| t == t2)?;
        Some(self.at(i, j))
    }

    /// CSV rows `t1,t2,comp,y`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t1,t2,comp,y")?;
        for (i, t1) in self.t_axes[0].iter().enumerate() {
            for (j, t2) in self.t_axes[1].iter().enumerate() {
                writeln!(w, "{t1},{t2},0,{}", self.at(i, j))?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 200 }
    }
}

/// Jacobi-style Picard loop around `integral(y) → I_t` at every node.
fn picard<F>(boundary: &GoursatBoundary, t_axes: [Vec<f64>; 2], opts: &PicardOptions, integral: F) -> Result<PathSolution>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let (n1, n2) = (t_axes[0].len(), t_axes[1].len());
    if boundary.xi1.len() != n1 || boundary.xi2.len() != n2 {
        return Err(Error::DimensionMismatch { expected: n1 + n2, got: boundary.xi1.len() + boundary.xi2.len() });
    }
    let xi: Vec<f64> = (0..n1 * n2).map(|k| boundary.at(k / n2, k % n2)).collect();
    let mut y = xi.clone();
    let mut log = Vec::new();
    let mut growing = 0;
    for iteration in 1..=opts.max_iter {
        let integ = integral(&y)?;
        let next: Vec<f64> = xi.iter().zip(&integ).map(|(a, b)| a + b).collect();
        let update = next.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if !update.is_finite() {
            return Err(Error::Diverged { iteration, update });
        }
        y = next;
        if let Some(&prev) = log.last() {
            growing = if update > prev { growing + 1 } else { 0 };
        }
        log.push(update);
        if growing >= 3 {
            return Err(Error::Diverged { iteration, update });
        }
        if update < opts.tol {
            return Ok(PathSolution { t_axes, y, boundary: boundary.clone(), log, converged: true });
        }
    }
    let update = *log.last().unwrap_or(&f64::NAN);
    Err(Error::NotConverged { iterations: opts.max_iter, update })
}

/// 2D prefix sums of per-cell contributions `c[i][j]` into node values.
fn prefix_sums(cells: &[f64], n1: usize, n2: usize) -> Vec<f64> {
    let (s1, s2) = (n1 + 1, n2 + 1);
    let mut out = vec![0.0; s1 * s2];
    for i in 1..s1 {
        for j in 1..s2 {
            out[i * s2 + j] = cells[(i - 1) * n2 + j - 1] + out[(i - 1) * s2 + j] + out[i * s2 + j - 1] - out[(i - 1) * s2 + j - 1];
        }
    }
    out
}

/// Solves `y_t = ξ_t + ∫_0^t b(y_r + w_r) dr` in its averaged form
/// `y_t = ξ_t + Σ Γ_{u,v}(y)` on the field's node grid.
pub fn solve_picard(boundary: &GoursatBoundary, field: &AveragedField, scheme: YoungScheme, opts: &PicardOptions) -> Result<PathSolution> {
    let side = field.side();
    let n = side - 1;
    picard(boundary, field.t_axes.clone(), opts, |y| {
        let cells = (0..n * n)
            .into_par_iter()
            .map(|c| cell_term(field, y, side, c / n, c % n, 1, scheme))
            .collect::<Result<Vec<f64>>>()?;
        Ok(prefix_sums(&cells, n, n))
    })
}

/// Reference solver: Picard on the path grid with the pointwise integrand
/// `b(y + w)` and the cell trapezoid rule.
pub fn solve_direct_picard(boundary: &GoursatBoundary, w: &FieldSample, b: &NonlinearitySpec, opts: &PicardOptions) -> Result<PathSolution> {
    if w.grid.dim() != 2 || w.components != 1 {
        return Err(Error::Precondition("direct Picard needs a scalar path over a two-parameter grid".into()));
    }
    let (a0, a1) = (w.grid.axis(0).to_vec(), w.grid.axis(1).to_vec());
    let (n1, n2) = (a0.len() - 1, a1.len() - 1);
    let wv = w.component(0).to_vec();
    picard(boundary, [a0.clone(), a1.clone()], opts, |y| {
        let f: Vec<f64> = y.iter().zip(&wv).map(|(a, c)| b.eval(a + c)).collect();
        let cells: Vec<f64> = (0..n1 * n2)
            .into_par_iter()
            .map(|c| {
                let (i, j) = (c / n2, c % n2);
                let s = n2 + 1;
                let area = (a0[i + 1] - a0[i]) * (a1[j + 1] - a1[j]);
                0.25 * area * (f[i * s + j] + f[(i + 1) * s + j] + f[i * s + j + 1] + f[(i + 1) * s + j + 1])
            })
            .collect();
        Ok(prefix_sums(&cells, n1, n2))
    })
}

/// `x₀ Σ_k (λ t₁ t₂)^k / (k!)²`, the solution of `y = x₀ + λ ∫_0^t y`.
pub fn goursat_series(lambda: f64, x0: f64, t1: f64, t2: f64) -> f64 {
    let a = lambda * t1 * t2;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= a / (k as f64 * k as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    x0 * sum
}

/// `(4·fine − coarse)/3` at the coarse nodes, for second-order schemes on a
/// grid halved once.
pub fn richardson(coarse: &PathSolution, fine: &PathSolution) -> Result<PathSolution> {
    let [c1, c2] = coarse.side();
    let [f1, f2] = fine.side();
    if f1 != 2 * c1 - 1 || f2 != 2 * c2 - 1 {
        return Err(Error::InvalidParameter("fine solution must halve the coarse mesh".into()));
    }
    let mut out = coarse.clone();
    for i in 0..c1 {
        for j in 0..c2 {
            out.y[i * c2 + j] = (4.0 * fine.at(2 * i, 2 * j) - coarse.at(i, j)) / 3.0;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularizationCheck {
    pub satisfied: bool,
    /// Slack of the binding inequality (negative when violated).
    pub margin: f64,
    pub binding: String,
}

/// Corollary form for `d = 2`: `ρ + Σ 1/(2ζ_i) − n/2 > 3` (additive) or
/// `ρ + 1/(2 max ζ_i) − n/2 > 3` (multiplicative).
pub fn check_regularization_condition(rho: f64, zeta: &[f64], n: usize, notion: LndNotion) -> Result<RegularizationCheck> {
    if zeta.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: zeta.len() });
    }
    if zeta.iter().any(|z| !(*z > 0.0)) {
        return Err(Error::InvalidParameter("ζ_i must be positive".into()));
    }
    let half_n = n as f64 / 2.0;
    let (lhs, binding) = match notion {
        LndNotion::Multiplicative => (rho + 1.0 / (2.0 * zeta[0].max(zeta[1])) - half_n, "ρ + 1/(2 max ζ_i) − n/2 > 3"),
        LndNotion::Additive => (rho + 1.0 / (2.0 * zeta[0]) + 1.0 / (2.0 * zeta[1]) - half_n, "ρ + Σ 1/(2ζ_i) − n/2 > 3"),
        other => {
            return Err(Error::InvalidParameter(format!("no regularization corollary for {other:?} LND")));
        }
    };
    let margin = lhs - 3.0;
    Ok(RegularizationCheck { satisfied: margin > 0.0, margin, binding: binding.into() })
}

/// General form: `γ_i (1+η) > 1` on every axis and `ρ + α > 2 + η`.
pub fn check_general_condition(gamma: &[f64], alpha: f64, eta: f64, rho: f64) -> RegularizationCheck {
    let holder = gamma.iter().map(|g| g * (1.0 + eta) - 1.0).fold(f64::INFINITY, f64::min);
    let sobolev = rho + alpha - (2.0 + eta);
    let (margin, binding) = if holder <= sobolev { (holder, "γ(1+η) > 1") } else { (sobolev, "ρ + α > 2 + η") };
    RegularizationCheck { satisfied: margin > 0.0, margin, binding: binding.into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{FieldModel, FieldSampler, KroneckerSampler, SampleGrid, SamplerOptions};
    use approx::assert_relative_eq;

    fn bs_path(level: u32, seed: u64) -> FieldSample {
        let grid = SampleGrid::dyadic(2, level, 1.0).unwrap();
        KroneckerSampler::new(&FieldModel::brownian_sheet(2), &grid, &SamplerOptions::default())
            .unwrap()
            .sample(seed, 0)
            .unwrap()
    }

    fn zero_path(level: u32) -> FieldSample {
        FieldSample::from_fn(SampleGrid::dyadic(2, level, 1.0).unwrap(), 1, |_| vec![0.0]).unwrap()
    }

    #[test]
    fn constant_drift_gives_volume() {
        let w = bs_path(4, 1);
        let x = SpatialGrid::new(-2.0, 2.0, 41).unwrap();
        for route in [FieldRoute::Direct, FieldRoute::Convolution] {
            let f = averaged_field(&NonlinearitySpec::Constant { c: 1.5 }, &w, 3, x, route, 64).unwrap();
            let rect = Rect::from_coords(&[0.25, 0.5], &[0.75, 1.0]).unwrap();
            for xv in [-1.3, 0.0, 1.9] {
                assert_relative_eq!(f.gamma_rect(&rect, xv).unwrap(), 1.5 * 0.25, epsilon = 1e-12);
            }
            assert_eq!(f.gamma(2, 3, 2, 5, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn zero_path_reproduces_drift() {
        let w = zero_path(3);
        let b = NonlinearitySpec::Sine { amplitude: 1.0, frequency: 2.0 };
        let x = SpatialGrid::new(-1.0, 1.0, 2001).unwrap();
        let f = averaged_field(&b, &w, 3, x, FieldRoute::Convolution, 256).unwrap();
        let rect = Rect::from_coords(&[0.0, 0.0], &[0.5, 1.0]).unwrap();
        for xv in [-0.7, 0.1, 0.45] {
            assert_relative_eq!(f.gamma_rect(&rect, xv).unwrap(), 0.5 * b.eval(xv), epsilon = 1e-6);
        }
    }

    #[test]
    fn routes_agree_for_smooth_drift() {
        let w = bs_path(7, 2);
        let x = SpatialGrid::new(-3.0, 3.0, 257).unwrap();
        let b = NonlinearitySpec::Sine { amplitude: 1.0, frequency: 1.5 };
        let direct = averaged_field(&b, &w, 6, x, FieldRoute::Direct, 256).unwrap();
        let conv = averaged_field(&b, &w, 6, x, FieldRoute::Convolution, 256).unwrap();
        let rect = Rect::from_coords(&[0.25, 0.25], &[1.0, 0.75]).unwrap();
        let scale = 0.375;
        for xv in [-2.0, -0.3, 0.8, 2.5] {
            let (a, c) = (direct.gamma_rect(&rect, xv).unwrap(), conv.gamma_rect(&rect, xv).unwrap());
            assert!((a - c).abs() < 0.02 * scale, "{a} vs {c}");
        }
        let rough = NonlinearitySpec::rough_fourier(0.5, 12, 6.0, 3).unwrap();
        let d = averaged_field(&rough, &w, 6, x, FieldRoute::Direct, 256).unwrap();
        let s = averaged_field(&rough, &w, 6, x, FieldRoute::Convolution, 256).unwrap();
        for xv in [-1.0, 0.5] {
            assert_relative_eq!(d.gamma_rect(&rect, xv).unwrap(), s.gamma_rect(&rect, xv).unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn fourier_table_validation() {
        let good = NonlinearitySpec::rough_fourier(1.0, 16, 8.0, 1).unwrap();
        assert!(good.validate().is_ok());
        if let NonlinearitySpec::Fourier { frequencies, cos, sin, .. } = good {
            let bad = NonlinearitySpec::Fourier { rho: 3.0, frequencies, cos, sin };
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn constant_drift_solves_in_one_step() {
        let w = bs_path(4, 3);
        let x = SpatialGrid::new(-5.0, 5.0, 101).unwrap();
        let f = averaged_field(&NonlinearitySpec::Constant { c: 0.7 }, &w, 4, x, FieldRoute::Direct, 64).unwrap();
        let xi = GoursatBoundary::from_fns([&f.t_axes[0], &f.t_axes[1]], |t| 0.1 + t, |t| 0.1 - t * t).unwrap();
        let sol = solve_picard(&xi, &f, YoungScheme::LeftPoint, &PicardOptions::default()).unwrap();
        assert_eq!(sol.log.len(), 2);
        assert!(sol.log[1] < 1e-14);
        for (i, t1) in sol.t_axes[0].iter().enumerate() {
            for (j, t2) in sol.t_axes[1].iter().enumerate() {
                assert_relative_eq!(sol.at(i, j), xi.at(i, j) + 0.7 * t1 * t2, epsilon = 1e-12);
                if i == 0 || j == 0 {
                    assert_eq!(sol.at(i, j), xi.at(i, j));
                }
            }
        }
    }

    #[test]
    fn linear_goursat_matches_series() {
        let lambda = 1.0;
        let x0 = 0.5;
        let x = SpatialGrid::new(0.0, 1.5, 16).unwrap();
        let b = NonlinearitySpec::Linear { lambda };
        let solve = |level: u32| {
            let f = averaged_field(&b, &zero_path(level), level, x, FieldRoute::Direct, 16).unwrap();
            let xi = GoursatBoundary::constant(x0, f.side(), f.side());
            solve_picard(&xi, &f, YoungScheme::Trapezoid, &PicardOptions { tol: 1e-14, max_iter: 100 }).unwrap()
        };
        let extrapolated = richardson(&solve(6), &solve(7)).unwrap();
        let mut worst: f64 = 0.0;
        for (i, t1) in extrapolated.t_axes[0].iter().enumerate() {
            for (j, t2) in extrapolated.t_axes[1].iter().enumerate() {
                worst = worst.max((extrapolated.at(i, j) - goursat_series(lambda, x0, *t1, *t2)).abs());
            }
        }
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn young_matches_direct_picard() {
        let w = bs_path(7, 5);
        let b = NonlinearitySpec::Sine { amplitude: 1.0, frequency: 1.0 };
        let x = SpatialGrid::new(-4.0, 6.0, 513).unwrap();
        let f = averaged_field(&b, &w, 6, x, FieldRoute::Convolution, 256).unwrap();
        let xi = GoursatBoundary::constant(1.0, f.side(), f.side());
        let young = solve_picard(&xi, &f, YoungScheme::Trapezoid, &PicardOptions::default()).unwrap();
        let fine_xi = GoursatBoundary::constant(1.0, 129, 129);
        let direct = solve_direct_picard(&fine_xi, &w, &b, &PicardOptions::default()).unwrap();
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..f.side() {
            for j in 0..f.side() {
                let d = direct.at(2 * i, 2 * j);
                diff = diff.max((young.at(i, j) - d).abs());
                scale = scale.max((d - 1.0).abs());
            }
        }
        assert!(diff < 0.02 * scale, "{diff} vs {scale}");
        // Geometric contraction once small.
        let tail: Vec<f64> = young.log.iter().cloned().filter(|u| *u < 1e-3).collect();
        assert!(tail.windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn refinement_shrinks_young_integral_changes() {
        let w = bs_path(7, 6);
        let b = NonlinearitySpec::Sine { amplitude: 1.0, frequency: 2.0 };
        let x = SpatialGrid::new(-4.0, 4.0, 257).unwrap();
        let f = averaged_field(&b, &w, 6, x, FieldRoute::Direct, 256).unwrap();
        let side = f.side();
        let y: Vec<f64> = (0..side * side).map(|k| 0.5 * ((k / side) as f64 / 64.0) - 0.3 * (k % side) as f64 / 64.0).collect();
        let rect = Rect::unit(2);
        let v: Vec<f64> = (4..=6).map(|l| nonlinear_young_integral(&f, &y, &rect, l, YoungScheme::LeftPoint).unwrap()).collect();
        assert!((v[2] - v[1]).abs() < (v[1] - v[0]).abs());
        // Constant y: partition independent.
        let c = vec![0.2; side * side];
        let a = nonlinear_young_integral(&f, &c, &rect, 2, YoungScheme::LeftPoint).unwrap();
        let d = nonlinear_young_integral(&f, &c, &rect, 6, YoungScheme::LeftPoint).unwrap();
        assert_relative_eq!(a, d, epsilon = 1e-12);
    }

    #[test]
    fn strong_linear_drift_is_flagged_divergent() {
        let x = SpatialGrid::new(-1e6, 1e6, 3).unwrap();
        let b = NonlinearitySpec::Linear { lambda: 400.0 };
        let f = averaged_field(&b, &zero_path(3), 3, x, FieldRoute::Direct, 8).unwrap();
        let xi = GoursatBoundary::constant(1e-3, f.side(), f.side());
        assert!(matches!(
            solve_picard(&xi, &f, YoungScheme::LeftPoint, &PicardOptions::default()),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn regularization_arithmetic() {
        let a = check_regularization_condition(2.0, &[0.25, 0.25], 1, LndNotion::Additive).unwrap();
        assert!(a.satisfied);
        assert_eq!(a.margin, 2.5);
        let m = check_regularization_condition(0.0, &[0.5, 0.5], 1, LndNotion::Multiplicative).unwrap();
        assert!(!m.satisfied);
        assert_eq!(m.margin + 3.0, 0.5);
        let g = check_general_condition(&[0.6, 0.6], 0.71, 0.7, 2.0);
        assert!(g.satisfied);
        assert_relative_eq!(g.margin, 0.01, epsilon = 1e-12);
    }
}
