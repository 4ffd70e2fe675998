//! Covariance models and samplers for Gaussian sheets.

mod kernel;
mod sampler;

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::algebra::{Point, MAX_DIM};
use crate::error::{Error, Result};

pub use kernel::{g_kernel, g_kernel_cell_average, kappa_squared, kappa_squared_1d, kernel_tail_mass, truncated_kernel_mass};
pub use sampler::{
    empirical_covariance, sample_exact, sampler_registry, DenseSampler, FieldSampler, KroneckerSampler, MovingAverageOptions,
    MovingAverageSampler, SamplerCtor, SamplerOptions,
};

/// Covariance family of a sheet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    BrownianSheet,
    FractionalBrownianSheet {
        hurst: Vec<f64>,
        #[serde(default = "default_true")]
        normalized: bool,
    },
    /// `Σ_i w_i B^i(t_i) + w_0 W^{H̃}(t)`: independent one-parameter fBm on
    /// each axis plus an interior fractional Brownian sheet. Weights are
    /// variance multipliers.
    BoundaryAugmented {
        boundary_hurst: Vec<f64>,
        interior_hurst: Vec<f64>,
        #[serde(default)]
        boundary_weights: Option<Vec<f64>>,
        #[serde(default = "default_one")]
        interior_weight: f64,
    },
}

fn default_true() -> bool {
    true
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    #[serde(flatten)]
    pub kind: FieldKind,
    pub dim: usize,
    #[serde(default = "default_components")]
    pub components: usize,
}

fn default_components() -> usize {
    1
}

/// One-parameter normalised fBm covariance `½(a^{2H} + b^{2H} − |a−b|^{2H})`.
pub fn fbm_covariance(hurst: f64, a: f64, b: f64) -> f64 {
    let p = 2.0 * hurst;
    0.5 * (a.powf(p) + b.powf(p) - (a - b).abs().powf(p))
}

impl FieldModel {
    pub fn new(kind: FieldKind, dim: usize, components: usize) -> Result<Self> {
        let model = Self { kind, dim, components };
        model.validate()?;
        Ok(model)
    }

    pub fn brownian_sheet(dim: usize) -> Self {
        Self::new(FieldKind::BrownianSheet, dim, 1).expect("valid dimension")
    }

    pub fn fbs(hurst: &[f64]) -> Result<Self> {
        Self::new(
            FieldKind::FractionalBrownianSheet { hurst: hurst.to_vec(), normalized: true },
            hurst.len(),
            1,
        )
    }

    pub fn with_components(mut self, components: usize) -> Result<Self> {
        self.components = components;
        self.validate()?;
        Ok(self)
    }

    /// Field-level descriptions of every violated precondition.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.dim == 0 || self.dim > MAX_DIM {
            out.push(format!("dim: must lie in 1..={MAX_DIM}, got {}", self.dim));
        }
        if self.components == 0 || self.components as u64 >= crate::rng::MAX_COMPONENTS {
            out.push(format!("components: must be positive and below 65536, got {}", self.components));
        }
        let mut check_h = |name: &str, h: &[f64]| {
            if h.len() != self.dim {
                out.push(format!("{name}: expected {} entries, got {}", self.dim, h.len()));
            }
            for (i, v) in h.iter().enumerate() {
                if !(*v > 0.0 && *v < 1.0) {
                    out.push(format!("{name}[{i}]: H_i ∈ (0,1) required, got {v}"));
                }
            }
        };
        match &self.kind {
            FieldKind::BrownianSheet => {}
            FieldKind::FractionalBrownianSheet { hurst, .. } => check_h("hurst", hurst),
            FieldKind::BoundaryAugmented { boundary_hurst, interior_hurst, boundary_weights, interior_weight } => {
                check_h("boundary_hurst", boundary_hurst);
                check_h("interior_hurst", interior_hurst);
                if let Some(w) = boundary_weights {
                    if w.len() != self.dim {
                        out.push(format!("boundary_weights: expected {} entries, got {}", self.dim, w.len()));
                    }
                    if w.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
                        out.push("boundary_weights: entries must be finite and nonnegative".into());
                    }
                }
                if !(*interior_weight >= 0.0 && interior_weight.is_finite()) {
                    out.push("interior_weight: must be finite and nonnegative".into());
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidParameter(v)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FieldKind::BrownianSheet => "brownian_sheet",
            FieldKind::FractionalBrownianSheet { .. } => "fractional_brownian_sheet",
            FieldKind::BoundaryAugmented { .. } => "boundary_augmented",
        }
    }

    /// Per-axis Hurst indices governing local regularity (the boundary
    /// indices for the augmented model).
    pub fn hurst(&self) -> Vec<f64> {
        match &self.kind {
            FieldKind::BrownianSheet => vec![0.5; self.dim],
            FieldKind::FractionalBrownianSheet { hurst, .. } => hurst.clone(),
            FieldKind::BoundaryAugmented { boundary_hurst, .. } => boundary_hurst.clone(),
        }
    }

    /// Whether every point with some zero coordinate has zero variance.
    pub fn has_deterministic_boundary(&self) -> bool {
        match &self.kind {
            FieldKind::BrownianSheet | FieldKind::FractionalBrownianSheet { .. } => true,
            FieldKind::BoundaryAugmented { boundary_weights, .. } => match boundary_weights {
                None => false,
                Some(w) => w.iter().all(|&x| x == 0.0),
            },
        }
    }

    /// For product-form covariances: `R(s,t) = scale · Π_i axis_covariance(i, s_i, t_i)`.
    pub fn is_separable(&self) -> bool {
        !matches!(self.kind, FieldKind::BoundaryAugmented { .. })
    }

    /// Per-axis factor of a separable covariance; panics for the augmented
    /// model.
    pub fn axis_covariance(&self, axis: usize, a: f64, b: f64) -> f64 {
        match &self.kind {
            FieldKind::BrownianSheet => a.min(b),
            FieldKind::FractionalBrownianSheet { hurst, .. } => fbm_covariance(hurst[axis], a, b),
            FieldKind::BoundaryAugmented { .. } => panic!("boundary-augmented covariance does not factorise"),
        }
    }

    /// Constant in front of the product of per-axis factors.
    pub fn separable_scale(&self) -> f64 {
        match &self.kind {
            FieldKind::FractionalBrownianSheet { normalized: false, .. } => 2f64.powi(self.dim as i32),
            _ => 1.0,
        }
    }

    pub fn covariance(&self, s: &Point, t: &Point) -> Result<f64> {
        for p in [s, t] {
            if p.dim() != self.dim {
                return Err(Error::DimensionMismatch { expected: self.dim, got: p.dim() });
            }
            if !p.is_nonnegative() {
                return Err(Error::Domain(format!("negative coordinate in {p:?}")));
            }
        }
        Ok(self.covariance_unchecked(s.coords(), t.coords()))
    }

    pub(crate) fn covariance_unchecked(&self, s: &[f64], t: &[f64]) -> f64 {
        match &self.kind {
            FieldKind::BoundaryAugmented { boundary_hurst, interior_hurst, boundary_weights, interior_weight } => {
                let mut acc = 0.0;
                for i in 0..self.dim {
                    let w = boundary_weights.as_ref().map_or(1.0, |w| w[i]);
                    acc += w * fbm_covariance(boundary_hurst[i], s[i], t[i]);
                }
                let interior: f64 =
                    (0..self.dim).map(|i| fbm_covariance(interior_hurst[i], s[i], t[i])).product();
                acc + interior_weight * interior
            }
            _ => {
                // Evaluate in a fixed order so that R(s,t) = R(t,s) bit-for-bit.
                let prod: f64 = (0..self.dim)
                    .map(|i| {
                        let (a, b) = if s[i] <= t[i] { (s[i], t[i]) } else { (t[i], s[i]) };
                        self.axis_covariance(i, a, b)
                    })
                    .product();
                self.separable_scale() * prod
            }
        }
    }

    pub(crate) fn describe(&self) -> String {
        let mut out = String::from(self.name());
        match &self.kind {
            FieldKind::BrownianSheet => {}
            FieldKind::FractionalBrownianSheet { hurst, normalized } => {
                let _ = write!(out, ", H={}, normalized={normalized}", fmt_list(hurst));
            }
            FieldKind::BoundaryAugmented { boundary_hurst, interior_hurst, .. } => {
                let _ = write!(out, ", H={}, H_interior={}", fmt_list(boundary_hurst), fmt_list(interior_hurst));
            }
        }
        out
    }
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("({})", items.join(" "))
}

/// Tensor grid of sampling nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    axes: Vec<Vec<f64>>,
}

impl SampleGrid {
    pub fn new(axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() || axes.len() > MAX_DIM {
            return Err(Error::InvalidParameter(format!("grid dimension {} outside 1..={MAX_DIM}", axes.len())));
        }
        for (i, a) in axes.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::InvalidParameter(format!("grid axis {i} is empty")));
            }
            if a.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidParameter(format!("grid axis {i} has negative or non-finite nodes")));
            }
            if a.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidParameter(format!("grid axis {i} is not strictly increasing")));
            }
        }
        Ok(Self { axes })
    }

    /// `{0, T/n, …, T}` on every axis.
    pub fn uniform(dim: usize, intervals: usize, t_max: f64) -> Result<Self> {
        let axis: Vec<f64> = (0..=intervals).map(|k| t_max * k as f64 / intervals as f64).collect();
        Self::new(vec![axis; dim])
    }

    /// Dyadic grid of `[0, t_max]^dim` at the given level.
    pub fn dyadic(dim: usize, level: u32, t_max: f64) -> Result<Self> {
        Self::uniform(dim, 1usize << level, t_max)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> &[f64] {
        &self.axes[i]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major linear index (last axis fastest).
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (&i, a)| acc * a.len() + i)
    }

    pub fn multi_index(&self, mut linear: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for (k, a) in self.axes.iter().enumerate().rev() {
            idx[k] = linear % a.len();
            linear /= a.len();
        }
        idx
    }

    pub fn point(&self, linear: usize) -> Point {
        let idx = self.multi_index(linear);
        let coords: Vec<f64> = idx.iter().zip(&self.axes).map(|(&i, a)| a[i]).collect();
        Point::new(&coords).expect("grid nodes are finite")
    }

    pub fn points(&self) -> Vec<Point> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Position of `x` among the nodes of axis `i`, if it is one.
    pub fn node_index(&self, axis: usize, x: f64) -> Option<usize> {
        let a = &self.axes[axis];
        let pos = a.partition_point(|&v| v < x);
        (pos < a.len() && a[pos] == x).then_some(pos)
    }
}

/// Anything that can hand out sample paths by index.
pub trait PathSource: Sync {
    fn len(&self) -> usize;
    fn path(&self, k: usize) -> Result<FieldSample>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// All members coincide: moment statistics carry no averaging.
    fn is_deterministic(&self) -> bool {
        false
    }
}

/// A single fixed path as a one-member source.
pub struct FixedPath(pub FieldSample);

impl PathSource for FixedPath {
    fn len(&self) -> usize {
        1
    }
    fn path(&self, _k: usize) -> Result<FieldSample> {
        Ok(self.0.clone())
    }
    fn is_deterministic(&self) -> bool {
        true
    }
}

/// A realisation on a [`SampleGrid`]; values are stored component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    pub grid: SampleGrid,
    pub components: usize,
    pub values: Vec<f64>,
    pub seed: u64,
    pub sample: u64,
    /// Human-readable model summary used in exports.
    pub description: String,
    /// Worst relative kernel mass lost to truncation (moving-average route).
    pub truncation_deficit: Option<f64>,
}

impl FieldSample {
    pub fn from_values(grid: SampleGrid, components: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * components {
            return Err(Error::DimensionMismatch { expected: grid.len() * components, got: values.len() });
        }
        Ok(Self {
            grid,
            components,
            values,
            seed: 0,
            sample: 0,
            description: "user".into(),
            truncation_deficit: None,
        })
    }

    /// Deterministic path `t ↦ f(t)` sampled on `grid`.
    pub fn from_fn<F: Fn(&Point) -> Vec<f64>>(grid: SampleGrid, components: usize, f: F) -> Result<Self> {
        let n = grid.len();
        let mut values = vec![0.0; n * components];
        for k in 0..n {
            let v = f(&grid.point(k));
            if v.len() != components {
                return Err(Error::DimensionMismatch { expected: components, got: v.len() });
            }
            for (c, x) in v.into_iter().enumerate() {
                values[c * n + k] = x;
            }
        }
        Self::from_values(grid, components, values)
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn value(&self, c: usize, idx: &[usize]) -> f64 {
        self.values[c * self.grid.len() + self.grid.linear_index(idx)]
    }

    /// `(W^1_t, …, W^n_t)` at linear node `k`.
    pub fn vector_at(&self, k: usize) -> Vec<f64> {
        (0..self.components).map(|c| self.values[c * self.grid.len() + k]).collect()
    }

    /// CSV export: a `#` header line, then `i1,…,id,t1,…,td,comp,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# model={}, seed={}, sample={}", self.description, self.seed, self.sample)?;
        let n = self.grid.len();
        for c in 0..self.components {
            for k in 0..n {
                let idx = self.grid.multi_index(k);
                let mut line = String::new();
                for i in &idx {
                    let _ = write!(line, "{i},");
                }
                for (i, a) in idx.iter().zip(self.grid.axes()) {
                    let _ = write!(line, "{},", a[*i]);
                }
                let _ = write!(line, "{c},{}", self.values[c * n + k]);
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}
