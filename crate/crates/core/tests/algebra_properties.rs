use proptest::prelude::*;
use sheetsew_core::algebra::{
    clamp_partition, delta_apply, delta_composed, dyadic_partition, neighbors, psi_product_apply, riemann_sum,
    square_increment, square_increment_product_form, GridPartition, IncrementGerm, IndexSet, Point, Rect,
};

fn rect_strategy(d: usize) -> impl Strategy<Value = Rect> {
    (prop::collection::vec(0.0..1.0f64, d), prop::collection::vec(0.05..1.0f64, d)).prop_map(|(lo, gap)| {
        let hi: Vec<f64> = lo.iter().zip(&gap).map(|(a, g)| a + g).collect();
        Rect::from_coords(&lo, &hi).unwrap()
    })
}

fn setup(max_d: usize) -> impl Strategy<Value = (Rect, Vec<f64>, u8)> {
    (1..=max_d).prop_flat_map(|d| (rect_strategy(d), prop::collection::vec(0.1..0.9f64, d), 0u8..(1u8 << d)))
}

fn inner(rect: &Rect, frac: &[f64]) -> Point {
    let c: Vec<f64> = (0..rect.dim()).map(|i| rect.lo()[i] + frac[i] * rect.gap(i)).collect();
    Point::new(&c).unwrap()
}

fn f(x: &Point) -> f64 {
    (0..x.dim()).map(|i| (1.3 * x[i] + 0.2 * i as f64).cos()).product::<f64>() + x.coords().iter().sum::<f64>().powi(2)
}

fn germ(s: &Point, t: &Point) -> f64 {
    let a: f64 = s.coords().iter().zip(t.coords()).map(|(x, y)| x * 0.7 - y * 1.1).sum();
    a.sin() + (0..s.dim()).map(|i| (t[i] - s[i]).powf(1.4)).product::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn increment_forms_agree((rect, _, bits) in setup(5)) {
        let theta = IndexSet::from_bits(rect.dim(), bits).unwrap();
        let a = square_increment(f, &rect, theta).unwrap();
        let b = square_increment_product_form(f, &rect, theta).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn product_functions_factorize(rect in (1..=4usize).prop_flat_map(rect_strategy)) {
        let g = |x: &Point| (0..x.dim()).map(|i| (x[i] + 1.0).ln()).product::<f64>();
        let full = IndexSet::full(rect.dim());
        let want: f64 = (0..rect.dim()).map(|i| (rect.hi()[i] + 1.0).ln() - (rect.lo()[i] + 1.0).ln()).product();
        let got = square_increment(g, &rect, full).unwrap();
        prop_assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()));
    }

    #[test]
    fn delta_order_is_irrelevant((rect, frac, bits) in setup(4), rot in 0usize..4) {
        let theta = IndexSet::from_bits(rect.dim(), bits).unwrap();
        prop_assume!(!theta.is_empty());
        let u = inner(&rect, &frac);
        let mut order = theta.axes();
        let k = rot % order.len();
        order.rotate_left(k);
        let a = delta_apply(&germ, &u, theta, &rect).unwrap();
        let b = delta_composed(&germ, &u, &order, &rect).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn psi_delta_identity((rect, frac) in rect_strategy(2).prop_flat_map(|r| (Just(r), prop::collection::vec(0.1..0.9f64, 2)))) {
        let u = inner(&rect, &frac);
        let full = IndexSet::full(2);
        let lhs = germ(rect.lo(), rect.hi()) - psi_product_apply(&germ, &u, full, &rect).unwrap();
        let rhs = delta_apply(&germ, &u, IndexSet::singleton(2, 0), &rect).unwrap()
            + delta_apply(&germ, &u, IndexSet::singleton(2, 1), &rect).unwrap()
            - delta_apply(&germ, &u, full, &rect).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn additive_germs_have_no_delta((rect, frac, bits) in setup(4)) {
        let theta = IndexSet::from_bits(rect.dim(), bits).unwrap();
        prop_assume!(!theta.is_empty());
        let u = inner(&rect, &frac);
        let g = IncrementGerm::new(f);
        prop_assert!(delta_apply(&g, &u, theta, &rect).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn riemann_sums_of_increments_are_exact(
        rect in (1..=3usize).prop_flat_map(rect_strategy),
        cuts in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 0..6), 3),
    ) {
        let d = rect.dim();
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                let mut v: Vec<f64> = cuts[i].iter().map(|c| rect.lo()[i] + c * rect.gap(i)).collect();
                v.push(rect.lo()[i]);
                v.push(rect.hi()[i]);
                v.sort_by(|a, b| a.total_cmp(b));
                v.dedup();
                v
            })
            .collect();
        let p = GridPartition::new(axes, IndexSet::full(d)).unwrap();
        let g = IncrementGerm::new(f);
        let exact = square_increment(f, &rect, IndexSet::full(d)).unwrap();
        let sum = riemann_sum(&g, &p);
        prop_assert!((sum - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
    }

    #[test]
    fn clamped_partitions_are_valid(
        (rect, frac, _) in setup(3),
        levels in prop::collection::vec(0u32..5, 3),
        shrink in prop::collection::vec(0.1..0.9f64, 3),
    ) {
        let d = rect.dim();
        let full = IndexSet::full(d);
        let p = dyadic_partition(&rect, &levels[..d], full).unwrap();
        let lo = inner(&rect, &frac);
        let hi: Vec<f64> = (0..d).map(|i| lo[i] + shrink[i] * (rect.hi()[i] - lo[i])).collect();
        let sub = Rect::new(lo, Point::new(&hi).unwrap()).unwrap();
        let c = clamp_partition(&p, &sub).unwrap();
        prop_assert_eq!(c.bounding_rect(), sub);
        for i in 0..d {
            let a = c.axis(i);
            prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(a.iter().all(|x| *x >= sub.lo()[i] && *x <= sub.hi()[i]));
        }
        let g = IncrementGerm::new(f);
        let exact = square_increment(f, &sub, full).unwrap();
        prop_assert!((riemann_sum(&g, &c) - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
    }

    #[test]
    fn neighbours_bracket_the_point((rect, frac, _) in setup(3), level in 0u32..5) {
        let d = rect.dim();
        let p = dyadic_partition(&rect, &vec![level; d], IndexSet::full(d)).unwrap();
        let u = inner(&rect, &frac);
        let (lo, hi) = neighbors(&p, &u).unwrap();
        for i in 0..d {
            prop_assert!(lo[i] <= u[i] && u[i] <= hi[i]);
            prop_assert!(hi[i] - lo[i] <= p.mesh() * (1.0 + 1e-12));
        }
    }
}
