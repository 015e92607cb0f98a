//! Adaptive Simpson quadrature and fixed Gauss–Legendre panels.

use crate::error::{Error, Result};
use crate::model::Numerics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature { abs_tol: 1e-10, rel_tol: 1e-8, max_depth: 40 }
    }
}

impl Quadrature {
    pub fn from_numerics(n: &Numerics) -> Self {
        Quadrature { abs_tol: n.quad_abs_tol, rel_tol: n.quad_rel_tol, max_depth: 40 }
    }

    /// Adaptive Simpson on `[a, b]`.
    ///
    /// The tolerance is `max(abs_tol, rel_tol·|I|)` where `I` is a coarse estimate.
    /// Returns a numeric error carrying the accumulated error estimate when the
    /// recursion depth is exhausted.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        // Start from a few panels so narrow features are not missed.
        const PANELS: usize = 8;
        let w = (b - a) / PANELS as f64;
        let mut coarse = 0.0;
        let mut panels = Vec::with_capacity(PANELS);
        for i in 0..PANELS {
            let lo = a + w * i as f64;
            let hi = if i + 1 == PANELS { b } else { lo + w };
            let m = 0.5 * (lo + hi);
            let (fa, fm, fb) = (f(lo), f(m), f(hi));
            let s = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
            coarse += s;
            panels.push((lo, hi, fa, fm, fb, s));
        }
        let tol = self.abs_tol.max(self.rel_tol * coarse.abs());
        let mut total = 0.0;
        let mut failed = 0.0;
        for (lo, hi, fa, fm, fb, s) in panels {
            let (v, bad) = self.recurse(&mut f, lo, hi, fa, fm, fb, s, tol / PANELS as f64, self.max_depth);
            total += v;
            failed += bad;
        }
        if failed > 0.0 {
            return Err(Error::Numeric {
                message: format!("adaptive Simpson did not converge on [{a}, {b}]"),
                residual: failed,
            });
        }
        if !total.is_finite() {
            return Err(Error::Numeric { message: "non-finite integrand".into(), residual: f64::NAN });
        }
        Ok(total)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse<F: FnMut(f64) -> f64>(
        &self,
        f: &mut F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> (f64, f64) {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if diff.abs() <= 15.0 * tol {
            return (left + right + diff / 15.0, 0.0);
        }
        if depth == 0 {
            return (left + right + diff / 15.0, diff.abs());
        }
        let (l, el) = self.recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1);
        let (r, er) = self.recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
        (l + r, el + er)
    }
}

const GL_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Composite 5-point Gauss–Legendre rule on `panels` equal panels.
pub fn gauss_legendre<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, panels: usize) -> f64 {
    let w = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let mid = a + w * (p as f64 + 0.5);
        for (z, wt) in GL_NODES.iter().zip(GL_WEIGHTS) {
            sum += wt * f(mid + 0.5 * w * z);
        }
    }
    0.5 * w * sum
}

/// Composite Simpson on an odd number of equally spaced samples (trapezoid fallback on even).
pub fn simpson_samples(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    match n {
        0 | 1 => 0.0,
        2 => 0.5 * h * (values[0] + values[1]),
        _ if n % 2 == 1 => {
            let mut s = values[0] + values[n - 1];
            for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
                s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
            }
            s * h / 3.0
        }
        _ => {
            // Simpson on the first n-1 points, 3/8 rule on the last four.
            let head = simpson_samples(&values[..n - 3], h);
            let t = &values[n - 4..];
            head + 3.0 * h / 8.0 * (t[0] + 3.0 * t[1] + 3.0 * t[2] + t[3])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_smooth_functions() {
        let q = Quadrature::default();
        let v = q.integrate(|x| x.sin(), 0.0, std::f64::consts::PI).unwrap();
        assert!((v - 2.0).abs() < 1e-10);
        let v = q.integrate(|x| (-x * x).exp(), -5.0, 5.0).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn gauss_legendre_is_exact_for_degree_nine() {
        let v = gauss_legendre(|x| x.powi(9) + x.powi(4), 0.0, 1.0, 1);
        assert!((v - 0.3).abs() < 1e-14);
    }

    #[test]
    fn simpson_samples_odd_and_even() {
        for n in [5usize, 6, 9, 10] {
            let h = 1.0 / (n - 1) as f64;
            let vals: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(3)).collect();
            assert!((simpson_samples(&vals, h) - 0.25).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn singular_integrand_reports_residual() {
        let q = Quadrature { max_depth: 3, ..Quadrature::default() };
        let err = q.integrate(|x| 1.0 / x.abs().sqrt().max(1e-300), -1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
    }
}
