use std::sync::Arc;

use num_complex::Complex64;
use sheetsew_core::algebra::{delta_apply, IndexSet, Point, Rect};
use sheetsew_core::fields::{sampler_registry, FieldModel, SampleGrid, SamplerOptions};
use sheetsew_core::occupation::{node_measure_transform, Trapezoid, QuadratureRule};
use sheetsew_core::sewing::{
    bdg_arrays, bdg_check, every_partition_convergence, multilevel_sums, random_partitions, BdgArray,
    BrownianSheetLaw, DeterministicGerm, ExponentialGerm, PathEnsemble, SewingOptions, StochasticGerm,
};

fn bs_ensemble(level: u32, n: usize, seed: u64) -> PathEnsemble {
    let grid = SampleGrid::dyadic(2, level, 1.0).unwrap();
    let opts = SamplerOptions { kronecker_limit: 1 << 17, ..SamplerOptions::default() };
    let sampler = sampler_registry().get("kronecker").unwrap()(&FieldModel::brownian_sheet(2), &grid, &opts).unwrap();
    PathEnsemble::new(Arc::from(sampler), seed, n)
}

#[test]
fn sewn_exponential_germ_tracks_path_quadrature() {
    let paths = bs_ensemble(6, 200, 3);
    let z = 2.0;
    let germ = ExponentialGerm::new(Arc::new(BrownianSheetLaw), paths.clone(), vec![z], 2).unwrap();
    let rect = Rect::unit(2);
    let res = multilevel_sums(&germ, &rect, IndexSet::full(2), 5, &SewingOptions::default()).unwrap();
    let diffs: Vec<Complex64> = (0..paths.len())
        .map(|k| {
            let q = node_measure_transform(&paths.path(k).unwrap(), &rect, &[vec![z]]).unwrap()[0];
            res.limit_estimate[k] - q
        })
        .collect();
    let rms = (diffs.iter().map(|d| d.norm_sqr()).sum::<f64>() / diffs.len() as f64).sqrt();
    // The sewn limit is far closer to the path integral than to its mean.
    let spread = (res.limit_estimate.iter().map(|v| (v - res.limit_estimate[0]).norm_sqr()).sum::<f64>() / diffs.len() as f64).sqrt();
    assert!(rms < 0.2 * spread, "{rms} vs {spread}");
    // The first cell is the deterministic germ at the origin; monotone after.
    for w in res.cauchy_lm[1..].windows(2) {
        assert!(w[1].value < w[0].value, "{:?}", res.cauchy_lm);
    }
}

#[test]
fn theta_sewing_is_additive_at_finest_level() {
    // I^{θ} of a smooth non-additive germ on [s,t] is additive in [s,t].
    let germ = DeterministicGerm::new(|s: &Point, t: &Point| ((t[0] - s[0]) * (t[1] - s[1])).powf(1.5) + (t[0] - s[0]) * (t[1] - s[1]) * s[0], Some(1.5), true);
    let sew = |r: &Rect| multilevel_sums(&germ, r, IndexSet::full(2), 8, &SewingOptions::default()).unwrap();
    let whole = sew(&Rect::unit(2));
    let scale = whole.cauchy_lm.last().unwrap().value;
    let sewn = |s: &Point, t: &Point| sew(&Rect::new(*s, *t).unwrap()).limit_estimate[0].re;
    let u = Point::new(&[0.5, 0.5]).unwrap();
    let d = delta_apply(&sewn, &u, IndexSet::full(2), &Rect::unit(2)).unwrap();
    assert!(d.abs() <= 4.0 * scale, "{d} vs {scale}");
}

#[test]
fn every_partition_reaches_dyadic_accuracy() {
    let paths = bs_ensemble(8, 60, 5);
    let germ = ExponentialGerm::new(Arc::new(BrownianSheetLaw), paths, vec![3.0], 1).unwrap();
    let rect = Rect::unit(2);
    let full = IndexSet::full(2);
    let parts = random_partitions(&rect, full, 8, &[3, 4, 5, 6], 9).unwrap();
    let dist = every_partition_convergence(&germ, &rect, full, &parts, 8, 2.0).unwrap();
    assert!(dist.windows(2).all(|w| w[1].distance.value < w[0].distance.value));
    let last = dist.last().unwrap();
    assert!(last.distance.value <= 3.0 * last.dyadic_distance.value, "{last:?}");
}

#[test]
fn single_axis_sewing_matches_one_parameter_slice() {
    let germ = DeterministicGerm::new(|s: &Point, t: &Point| (t[0] - s[0]).powf(1.3) * (1.0 + s[1]) + (t[0] * t[0] - s[0] * s[0]) * t[1], None, false);
    let rect = Rect::from_coords(&[0.0, 0.2], &[1.0, 0.7]).unwrap();
    let res = multilevel_sums(&germ, &rect, IndexSet::singleton(2, 0), 10, &SewingOptions::default()).unwrap();
    // One-parameter sum of the slice germ over 2^10 intervals.
    let n = 1 << 10;
    let slice: f64 = (0..n)
        .map(|k| {
            let (a, b) = (k as f64 / n as f64, (k + 1) as f64 / n as f64);
            (b - a).powf(1.3) * 1.2 + (b * b - a * a) * 0.7
        })
        .sum();
    assert!((res.limit_estimate[0].re - slice).abs() < 1e-12);
}

#[test]
fn bdg_control_separates() {
    let ratio = |kind, n| bdg_check(&bdg_arrays(kind, n, 600, 2).unwrap(), 4.0).unwrap().ratio.value;
    let good: Vec<f64> = [4, 8].iter().map(|&n| ratio(BdgArray::WeightedIncrement, n)).collect();
    assert!((good[1] / good[0] - 1.0).abs() < 0.2, "{good:?}");
    let bad: Vec<f64> = [4, 8].iter().map(|&n| ratio(BdgArray::Biased { c: 1.0 }, n)).collect();
    assert!(bad[1] / bad[0] > 1.4, "{bad:?}");
}

#[test]
fn trapezoid_rule_is_the_node_measure_transform() {
    let paths = bs_ensemble(5, 1, 1);
    let p = paths.path(0).unwrap();
    let z = vec![vec![0.5]];
    let rect = Rect::from_coords(&[0.25, 0.0], &[0.75, 0.5]).unwrap();
    assert_eq!(Trapezoid.spectrum(&p, &rect, &z).unwrap(), node_measure_transform(&p, &rect, &z).unwrap());
    let _ = bs_ensemble(2, 3, 0).ensemble_size_check();
}

trait SizeCheck {
    fn ensemble_size_check(&self) -> usize;
}

impl SizeCheck for PathEnsemble {
    fn ensemble_size_check(&self) -> usize {
        let g = ExponentialGerm::new(Arc::new(BrownianSheetLaw), self.clone(), vec![0.0], 1).unwrap();
        assert_eq!(g.ensemble_size(), self.len());
        g.ensemble_size()
    }
}
