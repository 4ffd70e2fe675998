//! Randomised checks of the algebraic identities of rectangular increments
//! and the ψ/δ operators.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::algebra::{
    delta_apply, delta_composed, psi_product_apply, riemann_sum, square_increment, square_increment_product_form,
    GridPartition, IncrementGerm, IndexSet, Point, Rect,
};
use crate::error::Result;
use crate::rng;

pub const TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub trials: usize,
    pub passed: usize,
    /// Largest `|lhs − rhs| / (1 + |lhs| + |rhs|)` seen.
    pub worst_error: f64,
}

impl IdentityCheck {
    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub seed: u64,
    pub tolerance: f64,
    pub checks: Vec<IdentityCheck>,
}

impl IdentityReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(IdentityCheck::ok)
    }
}

/// Smooth test function `Π sin(c_i x_i + p_i) + Σ a_i x_i²`.
#[derive(Clone)]
struct TestFn {
    c: Vec<f64>,
    p: Vec<f64>,
    a: Vec<f64>,
}

impl TestFn {
    fn random(g: &mut ChaCha8Rng, d: usize) -> Self {
        Self {
            c: (0..d).map(|_| g.random_range(-3.0..3.0)).collect(),
            p: (0..d).map(|_| g.random_range(0.0..6.3)).collect(),
            a: (0..d).map(|_| g.random_range(-1.0..1.0)).collect(),
        }
    }

    fn eval(&self, x: &Point) -> f64 {
        let prod: f64 = (0..x.dim()).map(|i| (self.c[i] * x[i] + self.p[i]).sin()).product();
        prod + (0..x.dim()).map(|i| self.a[i] * x[i] * x[i]).sum::<f64>()
    }
}

/// A non-additive germ `sin(⟨a,s⟩ + ⟨b,t⟩) + Π |t_i − s_i|^{1.3}`.
fn random_germ(g: &mut ChaCha8Rng, d: usize) -> impl Fn(&Point, &Point) -> f64 + Sync {
    let a: Vec<f64> = (0..d).map(|_| g.random_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..d).map(|_| g.random_range(-2.0..2.0)).collect();
    move |s: &Point, t: &Point| {
        let phase: f64 = (0..s.dim()).map(|i| a[i] * s[i] + b[i] * t[i]).sum();
        phase.sin() + (0..s.dim()).map(|i| (t[i] - s[i]).abs().powf(1.3)).product::<f64>()
    }
}

fn random_rect(g: &mut ChaCha8Rng, d: usize) -> Rect {
    let lo: Vec<f64> = (0..d).map(|_| g.random_range(0.0..1.0)).collect();
    let hi: Vec<f64> = lo.iter().map(|l| l + g.random_range(0.05..1.0)).collect();
    Rect::from_coords(&lo, &hi).expect("ordered corners")
}

fn random_inner(g: &mut ChaCha8Rng, rect: &Rect) -> Point {
    let c: Vec<f64> = (0..rect.dim()).map(|i| rect.lo()[i] + g.random_range(0.1..0.9) * rect.gap(i)).collect();
    Point::new(&c).expect("finite")
}

fn random_theta(g: &mut ChaCha8Rng, d: usize, nonempty: bool) -> IndexSet {
    loop {
        let bits: u8 = g.random_range(0..(1u16 << d)) as u8;
        let t = IndexSet::from_bits(d, bits).expect("bits below 2^d");
        if !nonempty || !t.is_empty() {
            return t;
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs() + b.abs())
}

fn random_partition(g: &mut ChaCha8Rng, rect: &Rect, theta: IndexSet) -> Result<GridPartition> {
    let axes = (0..rect.dim())
        .map(|i| {
            let (lo, hi) = (rect.lo()[i], rect.hi()[i]);
            if !theta.contains(i) {
                return vec![lo, hi];
            }
            let k = g.random_range(0..6);
            let mut pts: Vec<f64> = (0..k).map(|_| g.random_range(lo..hi)).collect();
            pts.push(lo);
            pts.push(hi);
            pts.sort_by(|a, b| a.total_cmp(b));
            pts.dedup();
            pts
        })
        .collect();
    GridPartition::new(axes, theta)
}

type Trial = fn(&mut ChaCha8Rng) -> Result<f64>;

fn inclusion_exclusion(g: &mut ChaCha8Rng) -> Result<f64> {
    let d = g.random_range(1..=4);
    let f = TestFn::random(g, d);
    let rect = random_rect(g, d);
    let theta = random_theta(g, d, false);
    let a = square_increment(|x: &Point| f.eval(x), &rect, theta)?;
    let b = square_increment_product_form(|x: &Point| f.eval(x), &rect, theta)?;
    Ok(rel(a, b))
}

fn delta_factorization(g: &mut ChaCha8Rng) -> Result<f64> {
    let d = g.random_range(1..=4);
    let germ = random_germ(g, d);
    let rect = random_rect(g, d);
    let u = random_inner(g, &rect);
    let theta = random_theta(g, d, true);
    let mut order = theta.axes();
    order.shuffle(g);
    let a = delta_apply(&germ, &u, theta, &rect)?;
    let b = delta_composed(&germ, &u, &order, &rect)?;
    Ok(rel(a, b))
}

fn psi_delta(g: &mut ChaCha8Rng) -> Result<f64> {
    let germ = random_germ(g, 2);
    let rect = random_rect(g, 2);
    let u = random_inner(g, &rect);
    let full = IndexSet::full(2);
    let lhs = germ(rect.lo(), rect.hi()) - psi_product_apply(&germ, &u, full, &rect)?;
    let rhs = delta_apply(&germ, &u, IndexSet::singleton(2, 0), &rect)? + delta_apply(&germ, &u, IndexSet::singleton(2, 1), &rect)?
        - delta_apply(&germ, &u, full, &rect)?;
    Ok(rel(lhs, rhs))
}

fn additive_vanishing(g: &mut ChaCha8Rng) -> Result<f64> {
    let d = g.random_range(1..=4);
    let f = TestFn::random(g, d);
    let germ = IncrementGerm::new(move |x: &Point| f.eval(x));
    let rect = random_rect(g, d);
    let u = random_inner(g, &rect);
    let theta = random_theta(g, d, true);
    Ok(rel(delta_apply(&germ, &u, theta, &rect)?, 0.0))
}

fn riemann_invariance(g: &mut ChaCha8Rng) -> Result<f64> {
    let d = g.random_range(1..=3);
    let f = TestFn::random(g, d);
    let germ = IncrementGerm::new(move |x: &Point| f.eval(x));
    let rect = random_rect(g, d);
    let full = IndexSet::full(d);
    let p = random_partition(g, &rect, full)?;
    let q = random_partition(g, &rect, full)?;
    let a = riemann_sum(&germ, &p);
    let b = riemann_sum(&germ, &q);
    let exact = germ.eval_rect_value(&rect);
    Ok(rel(a, exact).max(rel(b, exact)))
}

trait EvalRect {
    fn eval_rect_value(&self, rect: &Rect) -> f64;
}

impl<F: Fn(&Point) -> f64> EvalRect for IncrementGerm<F> {
    fn eval_rect_value(&self, rect: &Rect) -> f64 {
        crate::algebra::Germ::eval_rect(self, rect)
    }
}

/// Runs `trials` randomised checks of each identity. Trial `k` of identity
/// `j` draws from its own stream, so results do not depend on threading.
pub fn run_identity_suite(trials: usize, seed: u64) -> Result<IdentityReport> {
    let suite: [(&'static str, Trial); 5] = [
        ("inclusion_exclusion", inclusion_exclusion),
        ("delta_factorization", delta_factorization),
        ("psi_delta_decomposition", psi_delta),
        ("additive_delta_vanishing", additive_vanishing),
        ("riemann_partition_invariance", riemann_invariance),
    ];
    let checks = suite
        .iter()
        .enumerate()
        .map(|(j, (name, trial))| {
            let errors = (0..trials)
                .into_par_iter()
                .map(|k| trial(&mut rng::stream(seed, k as u64, j as u64)))
                .collect::<Result<Vec<f64>>>()?;
            Ok(IdentityCheck {
                name,
                trials,
                passed: errors.iter().filter(|e| **e <= TOLERANCE).count(),
                worst_error: errors.iter().cloned().fold(0.0, f64::max),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IdentityReport { seed, tolerance: TOLERANCE, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_is_deterministic() {
        let a = run_identity_suite(300, 4).unwrap();
        assert!(a.all_passed(), "{a:?}");
        let b = run_identity_suite(300, 4).unwrap();
        for (x, y) in a.checks.iter().zip(&b.checks) {
            assert_eq!(x.worst_error, y.worst_error);
        }
    }
}
