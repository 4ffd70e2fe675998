//! Index sets, projections, rectangular increments and grid-like partitions.
//!
//! Axes are zero-based throughout: an [`IndexSet`] over `d` axes holds
//! members drawn from `0..d`. Boxes are closed, axis-aligned and may be
//! degenerate along any axis.

use std::fmt;
use std::ops::{Add, Index, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest supported parameter dimension; index sets are `u8` bitmasks.
pub const MAX_DIM: usize = 8;

/// Scalar types a germ may return.
pub trait GermValue:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> + Send + Sync
{
    fn zero() -> Self;
    fn magnitude(self) -> f64;
}

impl GermValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl GermValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "dimension must lie in 1..={MAX_DIM}, got {dim}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct IndexSet {
    bits: u8,
    dim: u8,
}

impl IndexSet {
    pub fn empty(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension out of range");
        Self { bits: 0, dim: dim as u8 }
    }

    pub fn full(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension out of range");
        let bits = if dim == 8 { u8::MAX } else { (1u8 << dim) - 1 };
        Self { bits, dim: dim as u8 }
    }

    pub fn singleton(dim: usize, axis: usize) -> Self {
        assert!(axis < dim, "axis {axis} out of range for dimension {dim}");
        Self { bits: 1 << axis, dim: dim as u8 }
    }

    pub fn from_axes(dim: usize, axes: &[usize]) -> Result<Self> {
        check_dim(dim)?;
        let mut bits = 0u8;
        for &a in axes {
            if a >= dim {
                return Err(Error::InvalidIndexSet(format!(
                    "axis {a} outside 0..{dim}"
                )));
            }
            bits |= 1 << a;
        }
        Ok(Self { bits, dim: dim as u8 })
    }

    pub fn from_bits(dim: usize, bits: u8) -> Result<Self> {
        check_dim(dim)?;
        if bits & !Self::full(dim).bits != 0 {
            return Err(Error::InvalidIndexSet(format!(
                "bits {bits:#010b} exceed dimension {dim}"
            )));
        }
        Ok(Self { bits, dim: dim as u8 })
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn contains(&self, axis: usize) -> bool {
        axis < self.dim() && self.bits & (1 << axis) != 0
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn complement(&self) -> Self {
        Self { bits: Self::full(self.dim()).bits & !self.bits, dim: self.dim }
    }

    pub fn union(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self { bits: self.bits | other.bits, dim: self.dim }
    }

    pub fn intersection(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self { bits: self.bits & other.bits, dim: self.dim }
    }

    pub fn difference(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self { bits: self.bits & !other.bits, dim: self.dim }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.bits & !other.bits == 0
    }

    /// Members in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.dim()).filter(move |&i| self.contains(i))
    }

    pub fn axes(&self) -> Vec<usize> {
        self.iter().collect()
    }

    /// All subsets, including the empty set and `self`, in increasing
    /// bitmask order.
    pub fn subsets(&self) -> impl Iterator<Item = IndexSet> {
        let full = self.bits;
        let dim = self.dim;
        // Enumerate submasks of `full` in increasing order.
        let mut next: Option<u8> = Some(0);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full { None } else { Some(((cur | !full).wrapping_add(1)) & full) };
            Some(IndexSet { bits: cur, dim })
        })
    }
}

impl fmt::Debug for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Serialize for IndexSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

/// A point of `[0, T]^d`, stored inline.
#[derive(Clone, Copy)]
pub struct Point {
    dim: u8,
    coords: [f64; MAX_DIM],
}

impl Point {
    pub fn new(coords: &[f64]) -> Result<Self> {
        check_dim(coords.len())?;
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("non-finite coordinate {bad}")));
        }
        let mut c = [0.0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self { dim: coords.len() as u8, coords: c })
    }

    pub fn zeros(dim: usize) -> Self {
        Self::splat(dim, 0.0)
    }

    pub fn splat(dim: usize, value: f64) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension out of range");
        let mut c = [0.0; MAX_DIM];
        c[..dim].fill(value);
        Self { dim: dim as u8, coords: c }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim()]
    }

    /// Copy of `self` with coordinate `axis` replaced.
    pub fn with(mut self, axis: usize, value: f64) -> Self {
        assert!(axis < self.dim());
        self.coords[axis] = value;
        self
    }

    pub fn set(&mut self, axis: usize, value: f64) {
        assert!(axis < self.dim());
        self.coords[axis] = value;
    }

    /// Componentwise partial order.
    pub fn le(&self, other: &Point) -> bool {
        self.dim == other.dim && self.coords().iter().zip(other.coords()).all(|(a, b)| a <= b)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.coords().iter().all(|&c| c >= 0.0)
    }

    pub fn midpoint(&self, other: &Point) -> Point {
        let mut p = *self;
        for i in 0..self.dim() {
            p.coords[i] = 0.5 * (self.coords[i] + other.coords[i]);
        }
        p
    }
}

impl PartialEq for Point {
    fn eq(&self, other: &Self) -> bool {
        self.coords() == other.coords()
    }
}

impl Index<usize> for Point {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coords()[i]
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.coords()).finish()
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.coords())
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let coords = Vec::<f64>::deserialize(deserializer)?;
        Point::new(&coords).map_err(serde::de::Error::custom)
    }
}

/// Closed box `[lo, hi]` with `lo ≤ hi`.
#[derive(Clone, Copy, PartialEq, serde::Serialize)]
pub struct Rect {
    lo: Point,
    hi: Point,
}

impl Rect {
    pub fn new(lo: Point, hi: Point) -> Result<Self> {
        if lo.dim() != hi.dim() {
            return Err(Error::DimensionMismatch { expected: lo.dim(), got: hi.dim() });
        }
        if !lo.le(&hi) {
            return Err(Error::InvalidRect(format!("lo {lo:?} is not below hi {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn from_coords(lo: &[f64], hi: &[f64]) -> Result<Self> {
        Self::new(Point::new(lo)?, Point::new(hi)?)
    }

    /// `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self { lo: Point::zeros(dim), hi: Point::splat(dim, 1.0) }
    }

    pub(crate) fn new_unchecked(lo: Point, hi: Point) -> Self {
        debug_assert!(lo.le(&hi));
        Self { lo, hi }
    }

    pub fn lo(&self) -> &Point {
        &self.lo
    }

    pub fn hi(&self) -> &Point {
        &self.hi
    }

    pub fn dim(&self) -> usize {
        self.lo.dim()
    }

    pub fn gap(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.gap(i)).product()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.lo.le(p) && p.le(&self.hi)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }

    pub fn is_degenerate(&self) -> bool {
        (0..self.dim()).any(|i| self.gap(i) == 0.0)
    }
}

impl fmt::Debug for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:?}, {:?}]", self.lo, self.hi)
    }
}

/// `π^θ_base(target)`: coordinates in `theta` come from `base`, the rest
/// from `target`.
pub fn project(base: &Point, target: &Point, theta: IndexSet) -> Result<Point> {
    if base.dim() != target.dim() {
        return Err(Error::DimensionMismatch { expected: base.dim(), got: target.dim() });
    }
    if theta.dim() != base.dim() {
        return Err(Error::DimensionMismatch { expected: base.dim(), got: theta.dim() });
    }
    Ok(project_unchecked(base, target, theta))
}

fn project_unchecked(base: &Point, target: &Point, theta: IndexSet) -> Point {
    let mut out = *target;
    for i in theta.iter() {
        out.coords[i] = base.coords[i];
    }
    out
}

fn check_rect_theta(rect: &Rect, theta: IndexSet) -> Result<()> {
    if theta.dim() != rect.dim() {
        return Err(Error::DimensionMismatch { expected: rect.dim(), got: theta.dim() });
    }
    Ok(())
}

/// Rectangular increment `□^θ_{s,t} f` as the signed sum over the
/// `2^|θ|` corners `π^η_t s`, `η ⊆ θ`.
pub fn square_increment<V, F>(f: F, rect: &Rect, theta: IndexSet) -> Result<V>
where
    V: GermValue,
    F: Fn(&Point) -> V,
{
    check_rect_theta(rect, theta)?;
    let mut acc = V::zero();
    for eta in theta.subsets() {
        let corner = project_unchecked(&rect.hi, &rect.lo, eta);
        let value = f(&corner);
        if theta.difference(&eta).len() % 2 == 0 {
            acc = acc + value;
        } else {
            acc = acc - value;
        }
    }
    Ok(acc)
}

/// Same increment computed as the operator product `Π_{i∈θ}(π^i_t − Id) f(s)`,
/// applied one axis at a time.
pub fn square_increment_product_form<V, F>(f: F, rect: &Rect, theta: IndexSet) -> Result<V>
where
    V: GermValue,
    F: Fn(&Point) -> V,
{
    fn apply<V: GermValue>(
        f: &dyn Fn(&Point) -> V,
        hi: &Point,
        axes: &[usize],
        x: Point,
    ) -> V {
        match axes.split_first() {
            None => f(&x),
            Some((&i, rest)) => apply(f, hi, rest, x.with(i, hi[i])) - apply(f, hi, rest, x),
        }
    }
    check_rect_theta(rect, theta)?;
    let axes = theta.axes();
    Ok(apply(&f, &rect.hi, &axes, rect.lo))
}

/// A two-parameter quantity `Ξ_{s,t}` evaluated on boxes.
pub trait Germ<V> {
    fn eval(&self, s: &Point, t: &Point) -> V;

    fn eval_rect(&self, rect: &Rect) -> V {
        self.eval(&rect.lo, &rect.hi)
    }
}

impl<V, F> Germ<V> for F
where
    F: Fn(&Point, &Point) -> V,
{
    fn eval(&self, s: &Point, t: &Point) -> V {
        self(s, t)
    }
}

/// The germ `(s, t) ↦ □^{[d]}_{s,t} f`, which is additive.
pub struct IncrementGerm<F> {
    f: F,
}

impl<F> IncrementGerm<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<V: GermValue, F: Fn(&Point) -> V> Germ<V> for IncrementGerm<F> {
    fn eval(&self, s: &Point, t: &Point) -> V {
        let rect = Rect::new_unchecked(*s, *t);
        square_increment(&self.f, &rect, IndexSet::full(s.dim()))
            .expect("dimensions agree by construction")
    }
}

fn check_split_point(rect: &Rect, u: &Point) -> Result<()> {
    if u.dim() != rect.dim() {
        return Err(Error::DimensionMismatch { expected: rect.dim(), got: u.dim() });
    }
    if !rect.contains(u) {
        return Err(Error::OutsideBox(format!("split point {u:?} not in {rect:?}")));
    }
    Ok(())
}

/// `ψ^η_u Ξ_{s,t} = Ξ(π^η_u s, t) + Ξ(s, π^η_u t)`.
pub fn psi_apply<V: GermValue, G: Germ<V> + ?Sized>(
    germ: &G,
    u: &Point,
    eta: IndexSet,
    rect: &Rect,
) -> Result<V> {
    check_split_point(rect, u)?;
    check_rect_theta(rect, eta)?;
    let upper_lo = project_unchecked(u, &rect.lo, eta);
    let lower_hi = project_unchecked(u, &rect.hi, eta);
    Ok(germ.eval(&upper_lo, &rect.hi) + germ.eval(&rect.lo, &lower_hi))
}

/// The `2^|η|` sub-boxes obtained by cutting `rect` at `u` along every axis
/// of `eta`.
pub fn split_cells(rect: &Rect, u: &Point, eta: IndexSet) -> Vec<Rect> {
    let axes = eta.axes();
    let mut cells = Vec::with_capacity(1 << axes.len());
    for choice in 0u32..(1u32 << axes.len()) {
        let mut lo = rect.lo;
        let mut hi = rect.hi;
        for (k, &i) in axes.iter().enumerate() {
            if choice & (1 << k) == 0 {
                hi.coords[i] = u[i];
            } else {
                lo.coords[i] = u[i];
            }
        }
        cells.push(Rect::new_unchecked(lo, hi));
    }
    cells
}

/// Composition `Π_{i∈θ} ψ^i_u`, i.e. the sum of the germ over the `2^|θ|`
/// cells of `rect` cut at `u` along `theta`.
pub fn psi_product_apply<V: GermValue, G: Germ<V> + ?Sized>(
    germ: &G,
    u: &Point,
    theta: IndexSet,
    rect: &Rect,
) -> Result<V> {
    check_split_point(rect, u)?;
    check_rect_theta(rect, theta)?;
    Ok(split_cells(rect, u, theta)
        .iter()
        .fold(V::zero(), |acc, c| acc + germ.eval_rect(c)))
}

/// Signed expansion of `δ^θ_u = Π_{i∈θ}(Id − ψ^i_u)` into `3^|θ|` boxes.
pub fn delta_terms(rect: &Rect, u: &Point, theta: IndexSet) -> Result<Vec<(f64, Rect)>> {
    check_split_point(rect, u)?;
    check_rect_theta(rect, theta)?;
    if theta.is_empty() {
        return Err(Error::Precondition("δ requires a nonempty index set".into()));
    }
    let mut terms = Vec::with_capacity(3usize.pow(theta.len() as u32));
    for eta in theta.subsets() {
        let sign = if eta.len() % 2 == 0 { 1.0 } else { -1.0 };
        terms.extend(split_cells(rect, u, eta).into_iter().map(|c| (sign, c)));
    }
    Ok(terms)
}

/// `δ^θ_u Ξ_{s,t}` through the signed expansion.
pub fn delta_apply<V: GermValue, G: Germ<V> + ?Sized>(
    germ: &G,
    u: &Point,
    theta: IndexSet,
    rect: &Rect,
) -> Result<V> {
    let terms = delta_terms(rect, u, theta)?;
    Ok(terms
        .iter()
        .fold(V::zero(), |acc, (sign, c)| acc + germ.eval_rect(c) * *sign))
}

struct SingleDelta<'a, V> {
    inner: &'a dyn Germ<V>,
    axis: usize,
    split: f64,
}

impl<V: GermValue> Germ<V> for SingleDelta<'_, V> {
    fn eval(&self, s: &Point, t: &Point) -> V {
        let lower_hi = t.with(self.axis, self.split);
        let upper_lo = s.with(self.axis, self.split);
        self.inner.eval(s, t) - self.inner.eval(s, &lower_hi) - self.inner.eval(&upper_lo, t)
    }
}

/// `δ^{i_1}_u ∘ … ∘ δ^{i_k}_u Ξ` applied one axis at a time in the given
/// order, without the joint expansion of [`delta_apply`].
pub fn delta_composed<V: GermValue>(
    germ: &dyn Germ<V>,
    u: &Point,
    order: &[usize],
    rect: &Rect,
) -> Result<V> {
    check_split_point(rect, u)?;
    if order.is_empty() {
        return Err(Error::Precondition("δ requires a nonempty index set".into()));
    }
    fn go<V: GermValue>(g: &dyn Germ<V>, u: &Point, order: &[usize], rect: &Rect) -> V {
        match order.split_last() {
            None => g.eval_rect(rect),
            Some((&axis, rest)) => {
                let wrapped = SingleDelta { inner: g, axis, split: u[axis] };
                go(&wrapped, u, rest, rect)
            }
        }
    }
    if let Some(&bad) = order.iter().find(|&&a| a >= rect.dim()) {
        return Err(Error::InvalidIndexSet(format!("axis {bad} outside 0..{}", rect.dim())));
    }
    Ok(go(germ, u, order, rect))
}

/// Grid-like partition: one breakpoint list per axis, trivial off `active`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPartition {
    axes: Vec<Vec<f64>>,
    active: IndexSet,
}

impl GridPartition {
    pub fn new(axes: Vec<Vec<f64>>, active: IndexSet) -> Result<Self> {
        if axes.len() != active.dim() {
            return Err(Error::DimensionMismatch { expected: active.dim(), got: axes.len() });
        }
        for (i, axis) in axes.iter().enumerate() {
            if axis.len() < 2 {
                return Err(Error::InvalidPartition(format!("axis {i} has fewer than two breakpoints")));
            }
            if axis.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidPartition(format!("axis {i} has non-finite breakpoints")));
            }
            let degenerate = axis.len() == 2 && axis[0] == axis[1];
            if !degenerate && axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidPartition(format!("axis {i} is not strictly increasing")));
            }
            if !active.contains(i) && axis.len() != 2 {
                return Err(Error::InvalidPartition(format!(
                    "inactive axis {i} must hold exactly its two endpoints"
                )));
            }
        }
        Ok(Self { axes, active })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn active(&self) -> IndexSet {
        self.active
    }

    pub fn axis(&self, i: usize) -> &[f64] {
        &self.axes[i]
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn bounding_rect(&self) -> Rect {
        let lo: Vec<f64> = self.axes.iter().map(|a| a[0]).collect();
        let hi: Vec<f64> = self.axes.iter().map(|a| *a.last().unwrap()).collect();
        Rect::new_unchecked(Point::new(&lo).unwrap(), Point::new(&hi).unwrap())
    }

    /// Largest gap over the active axes.
    pub fn mesh(&self) -> f64 {
        self.active
            .iter()
            .flat_map(|i| self.axes[i].windows(2).map(|w| w[1] - w[0]))
            .fold(0.0, f64::max)
    }

    pub fn cell_count(&self) -> usize {
        self.axes.iter().map(|a| a.len() - 1).product()
    }

    /// Cells in row-major order: axis 0 varies slowest.
    pub fn cells(&self) -> impl Iterator<Item = Rect> + '_ {
        let d = self.dim();
        let counts: Vec<usize> = self.axes.iter().map(|a| a.len() - 1).collect();
        let total = self.cell_count();
        let mut idx = vec![0usize; d];
        let mut emitted = 0usize;
        std::iter::from_fn(move || {
            if emitted == total {
                return None;
            }
            let mut lo = Point::zeros(d);
            let mut hi = Point::zeros(d);
            for i in 0..d {
                lo.coords[i] = self.axes[i][idx[i]];
                hi.coords[i] = self.axes[i][idx[i] + 1];
            }
            emitted += 1;
            for i in (0..d).rev() {
                idx[i] += 1;
                if idx[i] < counts[i] {
                    break;
                }
                idx[i] = 0;
            }
            Some(Rect::new_unchecked(lo, hi))
        })
    }
}

/// Level-`levels[i]` dyadic refinement of `rect` along the axes of `theta`.
pub fn dyadic_partition(rect: &Rect, levels: &[u32], theta: IndexSet) -> Result<GridPartition> {
    if levels.len() != rect.dim() {
        return Err(Error::DimensionMismatch { expected: rect.dim(), got: levels.len() });
    }
    check_rect_theta(rect, theta)?;
    let axes = (0..rect.dim())
        .map(|i| {
            let (lo, hi) = (rect.lo[i], rect.hi[i]);
            if !theta.contains(i) || lo == hi {
                return vec![lo, hi];
            }
            let n = 1u64 << levels[i];
            let mut pts: Vec<f64> =
                (0..=n).map(|k| lo + (hi - lo) * (k as f64) / (n as f64)).collect();
            pts[n as usize] = hi;
            pts
        })
        .collect();
    GridPartition::new(axes, theta)
}

/// Restrict `source` to the sub-box `rect`: every breakpoint is clamped into
/// `[s_i, t_i]`, the endpoints are added and duplicates dropped.
pub fn clamp_partition(source: &GridPartition, rect: &Rect) -> Result<GridPartition> {
    if rect.dim() != source.dim() {
        return Err(Error::DimensionMismatch { expected: source.dim(), got: rect.dim() });
    }
    let bbox = source.bounding_rect();
    if !bbox.contains_rect(rect) {
        return Err(Error::OutsideBox(format!("{rect:?} not inside {bbox:?}")));
    }
    let axes = (0..rect.dim())
        .map(|i| {
            let (s, t) = (rect.lo[i], rect.hi[i]);
            if !source.active.contains(i) || s == t {
                return vec![s, t];
            }
            let mut pts: Vec<f64> = source.axes[i]
                .iter()
                .map(|&u| u.clamp(s, t))
                .chain([s, t])
                .collect();
            pts.sort_by(|a, b| a.total_cmp(b));
            pts.dedup();
            pts
        })
        .collect();
    GridPartition::new(axes, source.active)
}

/// Neighbours `(u⁻, u⁺)` of `u`: per axis the largest breakpoint `≤ u_i` and
/// the smallest breakpoint `≥ u_i`.
pub fn neighbors(partition: &GridPartition, u: &Point) -> Result<(Point, Point)> {
    if u.dim() != partition.dim() {
        return Err(Error::DimensionMismatch { expected: partition.dim(), got: u.dim() });
    }
    let bbox = partition.bounding_rect();
    if !bbox.contains(u) {
        return Err(Error::OutsideBox(format!("{u:?} not inside {bbox:?}")));
    }
    let mut lower = *u;
    let mut upper = *u;
    for i in 0..u.dim() {
        let axis = &partition.axes[i];
        let pos = axis.partition_point(|&x| x <= u[i]);
        lower.coords[i] = axis[pos - 1];
        upper.coords[i] = if axis[pos - 1] == u[i] { u[i] } else { axis[pos] };
    }
    Ok((lower, upper))
}

/// `PΞ = Σ_{[u,v]∈P} Ξ_{u,v}`, summed in row-major cell order.
pub fn riemann_sum<V: GermValue, G: Germ<V> + ?Sized>(germ: &G, partition: &GridPartition) -> V {
    partition.cells().fold(V::zero(), |acc, c| acc + germ.eval_rect(&c))
}

/// `m_x(s, t) = Π |t_i − s_i|^{x_i}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Weight {
    pub exponents: Vec<f64>,
}

impl Weight {
    pub fn new(exponents: Vec<f64>) -> Self {
        Self { exponents }
    }

    pub fn eval(&self, rect: &Rect) -> Result<f64> {
        weight_eval(self, rect)
    }
}

pub fn weight_eval(w: &Weight, rect: &Rect) -> Result<f64> {
    if w.exponents.len() != rect.dim() {
        return Err(Error::DimensionMismatch { expected: rect.dim(), got: w.exponents.len() });
    }
    let mut acc = 1.0;
    for (i, &x) in w.exponents.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::Domain(format!("non-finite exponent on axis {i}")));
        }
        if x == 0.0 {
            continue;
        }
        let gap = rect.gap(i);
        if gap == 0.0 && x < 0.0 {
            return Err(Error::Domain(format!("zero gap on axis {i} raised to negative power {x}")));
        }
        acc *= gap.powf(x);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(c: &[f64]) -> Point {
        Point::new(c).unwrap()
    }

    fn r(lo: &[f64], hi: &[f64]) -> Rect {
        Rect::from_coords(lo, hi).unwrap()
    }

    #[test]
    fn index_set_complement_and_subsets() {
        let theta = IndexSet::from_axes(3, &[0, 2]).unwrap();
        assert_eq!(theta.complement().axes(), vec![1]);
        assert_eq!(theta.complement().complement(), theta);
        assert_eq!(theta.union(&theta.complement()), IndexSet::full(3));
        let subs: Vec<u8> = theta.subsets().map(|s| s.bits()).collect();
        assert_eq!(subs, vec![0b000, 0b001, 0b100, 0b101]);
        assert_eq!(IndexSet::full(8).subsets().count(), 256);
        assert!(IndexSet::from_axes(2, &[2]).is_err());
        assert!(IndexSet::from_bits(2, 0b100).is_err());
    }

    #[test]
    fn projection_examples() {
        let base = p(&[1.0, 2.0]);
        let target = p(&[3.0, 4.0]);
        assert_eq!(project(&base, &target, IndexSet::singleton(2, 0)).unwrap(), p(&[1.0, 4.0]));
        assert_eq!(project(&base, &target, IndexSet::empty(2)).unwrap(), target);
        assert_eq!(project(&base, &target, IndexSet::full(2)).unwrap(), base);
        assert!(project(&base, &p(&[1.0]), IndexSet::empty(2)).is_err());
        let once = project(&base, &target, IndexSet::singleton(2, 1)).unwrap();
        let twice = project(&base, &once, IndexSet::singleton(2, 1)).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn square_increment_examples() {
        let full = IndexSet::full(2);
        let c = square_increment(|_: &Point| 3.5, &r(&[0.2, 0.1], &[0.9, 0.7]), full).unwrap();
        assert_eq!(c, 0.0);
        let prod = square_increment(|x: &Point| x[0] * x[1], &Rect::unit(2), full).unwrap();
        assert_eq!(prod, 1.0);
        // 12 − 4 − 3 + 1
        let v = square_increment(|x: &Point| x[0] * x[0] * x[1], &r(&[1.0, 1.0], &[2.0, 3.0]), full)
            .unwrap();
        assert_eq!(v, 6.0);
        let empty = square_increment(|x: &Point| x[0] + 10.0 * x[1], &r(&[1.0, 2.0], &[3.0, 4.0]), IndexSet::empty(2)).unwrap();
        assert_eq!(empty, 21.0);
        let single = square_increment(|x: &Point| x[0] * x[1], &r(&[1.0, 2.0], &[3.0, 4.0]), IndexSet::singleton(2, 0)).unwrap();
        // f(t1, s2) − f(s1, s2)
        assert_eq!(single, 6.0 - 2.0);
    }

    #[test]
    fn increment_matches_mixed_derivative_integral() {
        // f = sin(x) e^y: ∂²f = cos(x) e^y, integral = (sin t1 − sin s1)(e^t2 − e^s2)
        let rect = r(&[0.3, -0.2], &[1.1, 0.5]);
        let v = square_increment(|x: &Point| x[0].sin() * x[1].exp(), &rect, IndexSet::full(2)).unwrap();
        let expected = (1.1f64.sin() - 0.3f64.sin()) * (0.5f64.exp() - (-0.2f64).exp());
        assert_relative_eq!(v, expected, max_relative = 1e-13);
    }

    #[test]
    fn psi_examples() {
        let germ = |s: &Point, t: &Point| (t[0] - s[0]) * (t[0] - s[0]);
        let rect = r(&[0.0], &[1.0]);
        let u = p(&[0.5]);
        assert_eq!(psi_apply(&germ, &u, IndexSet::full(1), &rect).unwrap(), 0.5);
        assert_eq!(psi_apply(&germ, &u, IndexSet::empty(1), &rect).unwrap(), 2.0);
        let additive = IncrementGerm::new(|x: &Point| x[0].powi(3) - x[1] * x[0]);
        let rect2 = r(&[0.1, 0.2], &[0.8, 0.9]);
        let u2 = p(&[0.4, 0.3]);
        let whole: f64 = additive.eval_rect(&rect2);
        let psi: f64 = psi_apply(&additive, &u2, IndexSet::singleton(2, 0), &rect2).unwrap();
        assert_relative_eq!(psi, whole, epsilon = 1e-14);
        assert!(psi_apply(&germ, &p(&[1.5]), IndexSet::full(1), &rect).is_err());
    }

    #[test]
    fn delta_examples() {
        let germ = |s: &Point, t: &Point| (t[0] - s[0]).powi(2) * (t[1] - s[1]);
        let u = p(&[0.5, 0.5]);
        let v = delta_apply(&germ, &u, IndexSet::singleton(2, 0), &Rect::unit(2)).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(delta_terms(&Rect::unit(2), &u, IndexSet::full(2)).unwrap().len(), 9);
        assert_eq!(delta_terms(&Rect::unit(3), &p(&[0.5; 3]), IndexSet::full(3)).unwrap().len(), 27);
        assert!(delta_apply(&germ, &u, IndexSet::empty(2), &Rect::unit(2)).is_err());
    }

    #[test]
    fn delta_matches_nine_term_expansion() {
        let germ = |s: &Point, t: &Point| (t[0] - s[0]).powf(1.3) * (t[1] - s[1]).sqrt() + s[0] * t[1];
        let (s, t, u) = (p(&[0.1, 0.2]), p(&[0.9, 0.8]), p(&[0.35, 0.6]));
        let g = |a: [f64; 2], b: [f64; 2]| germ(&p(&a), &p(&b));
        let expected = g([0.1, 0.2], [0.9, 0.8])
            - (g([0.1, 0.2], [0.35, 0.8]) + g([0.35, 0.2], [0.9, 0.8]))
            - (g([0.1, 0.2], [0.9, 0.6]) + g([0.1, 0.6], [0.9, 0.8]))
            + (g([0.1, 0.2], [0.35, 0.6])
                + g([0.1, 0.6], [0.35, 0.8])
                + g([0.35, 0.2], [0.9, 0.6])
                + g([0.35, 0.6], [0.9, 0.8]));
        let got = delta_apply(&germ, &u, IndexSet::full(2), &Rect::new(s, t).unwrap()).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-14);
    }

    #[test]
    fn dyadic_partition_examples() {
        let part = dyadic_partition(&Rect::unit(2), &[1, 1], IndexSet::full(2)).unwrap();
        assert_eq!(part.axis(0), &[0.0, 0.5, 1.0]);
        assert_eq!(part.axis(1), &[0.0, 0.5, 1.0]);
        let trivial = dyadic_partition(&Rect::unit(2), &[0, 0], IndexSet::full(2)).unwrap();
        assert_eq!(trivial.cells().collect::<Vec<_>>(), vec![Rect::unit(2)]);
        let one = dyadic_partition(&Rect::unit(2), &[2, 5], IndexSet::singleton(2, 0)).unwrap();
        assert_eq!(one.axis(0), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(one.axis(1), &[0.0, 1.0]);
        let degenerate = dyadic_partition(&r(&[0.0, 0.3], &[1.0, 0.3]), &[1, 3], IndexSet::full(2)).unwrap();
        assert_eq!(degenerate.axis(1), &[0.3, 0.3]);
        assert_eq!(degenerate.cell_count(), 2);
    }

    #[test]
    fn clamp_partition_examples() {
        let src = GridPartition::new(vec![vec![0.0, 0.3, 0.7, 1.0], vec![0.0, 1.0]], IndexSet::singleton(2, 0)).unwrap();
        let clamped = clamp_partition(&src, &r(&[0.4, 0.0], &[0.9, 1.0])).unwrap();
        assert_eq!(clamped.axis(0), &[0.4, 0.7, 0.9]);
        assert_eq!(clamp_partition(&src, &src.bounding_rect()).unwrap(), src);
        let inside = clamp_partition(&src, &r(&[0.35, 0.2], &[0.6, 0.4])).unwrap();
        assert_eq!(inside.cell_count(), 1);
        assert!(clamp_partition(&src, &r(&[0.5, 0.0], &[1.5, 1.0])).is_err());
    }

    #[test]
    fn neighbor_examples() {
        let part = dyadic_partition(&Rect::unit(2), &[1, 1], IndexSet::full(2)).unwrap();
        let node = p(&[0.5, 1.0]);
        assert_eq!(neighbors(&part, &node).unwrap(), (node, node));
        let (lo, hi) = neighbors(&part, &p(&[0.3, 0.3])).unwrap();
        assert_eq!((lo, hi), (p(&[0.0, 0.0]), p(&[0.5, 0.5])));
        let (lo, hi) = neighbors(&part, &p(&[0.5, 0.7])).unwrap();
        assert_eq!((lo, hi), (p(&[0.5, 0.5]), p(&[0.5, 1.0])));
        assert!(neighbors(&part, &p(&[1.2, 0.0])).is_err());
    }

    #[test]
    fn riemann_sum_examples() {
        let square = |s: &Point, t: &Point| (t[0] - s[0]).powi(2) * (t[1] - s[1]).powi(2);
        for n in 0..5u32 {
            let part = dyadic_partition(&Rect::unit(2), &[n, n], IndexSet::full(2)).unwrap();
            assert_relative_eq!(riemann_sum(&square, &part), 2f64.powi(-2 * n as i32), max_relative = 1e-12);
        }
        let additive = IncrementGerm::new(|x: &Point| (x[0] * 3.0).sin() * x[1].exp());
        let rect = r(&[0.1, 0.0], &[0.9, 0.6]);
        let part = dyadic_partition(&rect, &[3, 2], IndexSet::full(2)).unwrap();
        let whole: f64 = additive.eval_rect(&rect);
        assert_relative_eq!(riemann_sum(&additive, &part), whole, epsilon = 1e-12);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(Weight::new(vec![0.0, 0.0]).eval(&r(&[0.0, 0.0], &[0.0, 2.0])).unwrap(), 1.0);
        assert_eq!(Weight::new(vec![1.0, 1.0]).eval(&r(&[0.0, 0.0], &[2.0, 3.0])).unwrap(), 6.0);
        assert_eq!(Weight::new(vec![0.5, 0.5]).eval(&r(&[0.0, 0.0], &[4.0, 9.0])).unwrap(), 6.0);
        assert!(Weight::new(vec![-0.5, 0.0]).eval(&r(&[1.0, 0.0], &[1.0, 1.0])).is_err());
    }

    #[test]
    fn grid_partition_rejects_bad_axes() {
        assert!(GridPartition::new(vec![vec![0.0, 0.5, 0.4]], IndexSet::full(1)).is_err());
        assert!(GridPartition::new(vec![vec![0.0, 0.5, 1.0]], IndexSet::empty(1)).is_err());
        assert!(GridPartition::new(vec![vec![0.0]], IndexSet::full(1)).is_err());
    }
}
