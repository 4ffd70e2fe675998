//! The fractional moving-average kernel `g_H` and its normalising constant.

use crate::error::{Error, Result};

// 8-point Gauss–Legendre rule on [-1, 1].
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

pub(crate) fn gauss_legendre<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    let mut acc = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        acc += w * (f(c - h * x) + f(c + h * x));
    }
    acc * h
}

/// `g_H(s, t) = (t − s)_+^{H−½} − (−s)_+^{H−½}`.
pub fn g_kernel(hurst: f64, s: f64, t: f64) -> f64 {
    let a = hurst - 0.5;
    let pos = |x: f64| if x > 0.0 { x.powf(a) } else { 0.0 };
    pos(t - s) - pos(-s)
}

/// Average of `g_H(·, t)` over the cell `[lo, hi]`, in closed form.
pub fn g_kernel_cell_average(hurst: f64, lo: f64, hi: f64, t: f64) -> f64 {
    let b = hurst + 0.5;
    let pos = |x: f64| if x > 0.0 { x.powf(b) } else { 0.0 };
    let upper = pos(t - lo) - pos(t - hi);
    let lower = pos(-lo) - pos(-hi);
    (upper - lower) / (b * (hi - lo))
}

fn check_hurst(hurst: f64) -> Result<()> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::InvalidParameter(format!("Hurst index {hurst} outside (0, 1)")));
    }
    Ok(())
}

/// `((1+v)^a − v^a)²`, written to avoid cancellation for large `v`.
fn tail_integrand(a: f64, v: f64) -> f64 {
    let d = if v > 1.0 {
        v.powf(a) * (a * (1.0 / v).ln_1p()).exp_m1()
    } else {
        (1.0 + v).powf(a) - v.powf(a)
    };
    d * d
}

/// `∫_0^R ((1+v)^{H−½} − v^{H−½})² dv`, with `R = ∞` allowed.
///
/// Octave panels `[2^k, 2^{k+1}]` for `|k| < resolution` carry a
/// Gauss–Legendre rule each; the pieces below `2^{−resolution}` and above
/// `2^{resolution}` use the leading-order asymptotics of the integrand.
pub fn kernel_tail_mass(hurst: f64, upper: f64, resolution: u32) -> Result<f64> {
    check_hurst(hurst)?;
    if resolution == 0 || resolution > 60 {
        return Err(Error::InvalidParameter(format!("quadrature resolution {resolution} outside 1..=60")));
    }
    if !(upper > 0.0) {
        return Ok(0.0);
    }
    let a = hurst - 0.5;
    if a == 0.0 {
        return Ok(0.0);
    }
    let eps = 2f64.powi(-(resolution as i32));
    let big = 2f64.powi(resolution as i32);
    // (1 − v^a)² expanded near the origin.
    let small = |e: f64| e - 2.0 * e.powf(a + 1.0) / (a + 1.0) + e.powf(2.0 * a + 1.0) / (2.0 * a + 1.0);
    if upper <= eps {
        return Ok(small(upper));
    }
    let mut total = small(eps);
    let mut lo = eps;
    while lo < upper.min(big) {
        let hi = (2.0 * lo).min(upper).min(big);
        let mid = 0.5 * (lo + hi);
        total += gauss_legendre(|v| tail_integrand(a, v), lo, mid);
        total += gauss_legendre(|v| tail_integrand(a, v), mid, hi);
        lo = hi;
    }
    if upper > big {
        // a² v^{2a−2} beyond 2^resolution.
        let tail = |x: f64| a * a * x.powf(2.0 * a - 1.0) / (1.0 - 2.0 * a);
        total += tail(big) - if upper.is_finite() { tail(upper) } else { 0.0 };
    }
    Ok(total)
}

/// One-dimensional `κ² = ∫_{−∞}^{1} g_H(s, 1)² ds`.
pub fn kappa_squared_1d(hurst: f64, resolution: u32) -> Result<f64> {
    Ok(1.0 / (2.0 * hurst) + kernel_tail_mass(hurst, f64::INFINITY, resolution)?)
}

/// `κ_H² = Π_i κ²_{H_i}` (the integrand factorises over axes).
pub fn kappa_squared(hurst: &[f64], resolution: u32) -> Result<f64> {
    hurst.iter().map(|&h| kappa_squared_1d(h, resolution)).product()
}

/// `∫_{−L}^{t} g_H(s, t)² ds` for a cutoff `−L < 0`.
pub fn truncated_kernel_mass(hurst: f64, t: f64, cutoff: f64, resolution: u32) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let scale = t.powf(2.0 * hurst);
    Ok(scale * (1.0 / (2.0 * hurst) + kernel_tail_mass(hurst, -cutoff / t, resolution)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma;

    // Mandelbrot–Van Ness constant for the one-sided kernel.
    fn closed_form(h: f64) -> f64 {
        gamma(h + 0.5).powi(2) / (gamma(2.0 * h + 1.0) * (std::f64::consts::PI * h).sin())
    }

    #[test]
    fn kappa_is_one_at_half() {
        assert_eq!(kappa_squared_1d(0.5, 20).unwrap(), 1.0);
        assert_eq!(kappa_squared(&[0.5, 0.5], 20).unwrap(), 1.0);
    }

    #[test]
    fn kappa_matches_gamma_closed_form() {
        for h in [0.05, 0.1, 0.3, 0.45, 0.55, 0.7, 0.9, 0.95] {
            assert_relative_eq!(kappa_squared_1d(h, 40).unwrap(), closed_form(h), max_relative = 1e-7);
        }
    }

    #[test]
    fn kappa_stable_under_resolution_doubling() {
        for h in [0.1, 0.3, 0.7, 0.9] {
            let coarse = kappa_squared_1d(h, 20).unwrap();
            let fine = kappa_squared_1d(h, 40).unwrap();
            assert!((coarse / fine - 1.0).abs() < 1e-3, "H={h}");
        }
    }

    #[test]
    fn kappa_factorises() {
        let k = kappa_squared(&[0.3, 0.7], 30).unwrap();
        let p = kappa_squared_1d(0.3, 30).unwrap() * kappa_squared_1d(0.7, 30).unwrap();
        assert_relative_eq!(k, p, max_relative = 1e-14);
    }

    #[test]
    fn kernel_vanishes_at_origin_time() {
        for s in [-3.0, -0.1, 0.0, 0.4] {
            assert_eq!(g_kernel(0.3, s, 0.0), 0.0);
        }
        assert_eq!(g_kernel(0.5, 0.2, 1.0), 1.0);
        assert_eq!(g_kernel(0.5, -0.2, 1.0), 0.0);
    }

    #[test]
    fn truncated_mass_approaches_full() {
        let full = kappa_squared_1d(0.7, 40).unwrap() * 2f64.powf(1.4);
        let trunc = truncated_kernel_mass(0.7, 2.0, -1e12, 40).unwrap();
        assert_relative_eq!(trunc, full, max_relative = 1e-4);
        assert!(truncated_kernel_mass(0.7, 2.0, -10.0, 40).unwrap() < trunc);
    }

    #[test]
    fn cell_average_matches_quadrature() {
        for (h, lo, hi, t) in [(0.7, -2.0, -1.5, 1.0), (0.3, 0.2, 0.4, 1.0), (0.3, -0.5, -0.25, 0.5)] {
            let q = gauss_legendre(|s| g_kernel(h, s, t), lo, hi) / (hi - lo);
            assert_relative_eq!(g_kernel_cell_average(h, lo, hi, t), q, max_relative = 1e-6);
        }
        assert_eq!(g_kernel_cell_average(0.5, 0.25, 0.5, 1.0), 1.0);
        assert_eq!(g_kernel_cell_average(0.3, -1.0, -0.5, 0.0), 0.0);
    }

    #[test]
    fn rejects_bad_hurst() {
        assert!(kappa_squared_1d(1.0, 20).is_err());
        assert!(kappa_squared_1d(0.0, 20).is_err());
    }
}
