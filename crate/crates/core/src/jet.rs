//! Truncated bivariate Taylor jets.
//!
//! A [`Jet`] stores the Taylor coefficients `c[a][b]` of a function of two
//! local variables `(X, Y)` around a base point, truncated at `a <= nx`,
//! `b <= ny`. Evaluating an expression with jet-valued inputs yields the exact
//! partial derivatives of that expression (Taylor-mode automatic
//! differentiation), which is how every derivative of the rate functions and
//! of the survival factor is obtained in this crate.
//!
//! The coefficient convention is the Taylor one: `c[a][b] = ∂_X^a ∂_Y^b f / (a! b!)`.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Largest supported degree in each of the two jet variables.
pub const MAX_DEGREE: usize = 11;
const STRIDE: usize = MAX_DEGREE + 1;

/// Numeric type that expressions and characteristic integrals can be evaluated over.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + std::fmt::Debug
{
    /// A constant with the same jet shape as `self`.
    fn lift(&self, value: f64) -> Self;
    /// The value at the base point.
    fn value(&self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self {
        (self.ln() * 0.5).exp()
    }
    fn powi(self, n: i32) -> Self;
    fn powf(self, r: f64) -> Self;
    /// `exp(-1/z)` for `z > 0`, identically zero for `z <= 0`.
    fn flat(self) -> Self;
}

impl Scalar for f64 {
    fn lift(&self, value: f64) -> Self {
        value
    }
    fn value(&self) -> f64 {
        *self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
    fn powf(self, r: f64) -> Self {
        f64::powf(self, r)
    }
    fn flat(self) -> Self {
        if self > 0.0 {
            (-1.0 / self).exp()
        } else {
            0.0
        }
    }
}

/// Truncated Taylor polynomial in two variables.
#[derive(Clone, Copy)]
pub struct Jet {
    nx: usize,
    ny: usize,
    c: [f64; STRIDE * STRIDE],
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut rows = Vec::new();
        for a in 0..=self.nx {
            let row: Vec<f64> = (0..=self.ny).map(|b| self.get(a, b)).collect();
            rows.push(row);
        }
        f.debug_struct("Jet").field("coeffs", &rows).finish()
    }
}

impl Jet {
    /// Constant jet.
    pub fn constant(nx: usize, ny: usize, value: f64) -> Self {
        assert!(nx <= MAX_DEGREE && ny <= MAX_DEGREE, "jet degree too large");
        let mut c = [0.0; STRIDE * STRIDE];
        c[0] = value;
        Jet { nx, ny, c }
    }

    /// `value + X`, the first jet variable.
    pub fn var_x(nx: usize, ny: usize, value: f64) -> Self {
        let mut j = Self::constant(nx, ny, value);
        if nx >= 1 {
            j.c[STRIDE] = 1.0;
        }
        j
    }

    /// `value + Y`, the second jet variable.
    pub fn var_y(nx: usize, ny: usize, value: f64) -> Self {
        let mut j = Self::constant(nx, ny, value);
        if ny >= 1 {
            j.c[1] = 1.0;
        }
        j
    }

    /// Univariate jet `value + X` of degree `n`.
    pub fn univariate(n: usize, value: f64) -> Self {
        Self::var_x(n, 0, value)
    }

    pub fn degrees(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Taylor coefficient of `X^a Y^b` (zero outside the truncation).
    pub fn get(&self, a: usize, b: usize) -> f64 {
        if a > self.nx || b > self.ny {
            0.0
        } else {
            self.c[a * STRIDE + b]
        }
    }

    pub fn set(&mut self, a: usize, b: usize, v: f64) {
        self.c[a * STRIDE + b] = v;
    }

    /// Partial derivative `∂_X^a ∂_Y^b` at the base point.
    pub fn derivative(&self, a: usize, b: usize) -> f64 {
        self.get(a, b) * factorial(a) * factorial(b)
    }

    /// Univariate Taylor coefficients `c[0..=nx][0]`.
    pub fn x_coeffs(&self) -> Vec<f64> {
        (0..=self.nx).map(|a| self.get(a, 0)).collect()
    }

    fn zero_like(&self) -> Self {
        Self::constant(self.nx, self.ny, 0.0)
    }

    fn check_shape(&self, other: &Jet) {
        debug_assert_eq!((self.nx, self.ny), (other.nx, other.ny), "jet shape mismatch");
    }

    /// Nilpotent part (constant term removed).
    fn tail(&self) -> Self {
        let mut t = *self;
        t.c[0] = 0.0;
        t
    }

    /// Evaluate the power series `Σ coeffs[k] h^k` at the nilpotent jet `h`.
    fn series(h: &Jet, coeffs: &[f64]) -> Jet {
        // Horner; h^k vanishes for k > nx + ny.
        let mut acc = h.zero_like();
        for &ck in coeffs.iter().rev() {
            acc = acc * *h;
            acc.c[0] += ck;
        }
        acc
    }

    fn order_bound(&self) -> usize {
        self.nx + self.ny
    }

    /// Compose with a univariate function given its derivatives at the base value.
    pub fn compose(self, derivs: &[f64]) -> Jet {
        let n = self.order_bound();
        let mut coeffs = vec![0.0; n + 1];
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = derivs.get(k).copied().unwrap_or(0.0) / factorial(k);
        }
        Self::series(&self.tail(), &coeffs)
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, rhs: Jet) -> Jet {
        self.check_shape(&rhs);
        for a in 0..=self.nx {
            for b in 0..=self.ny {
                self.c[a * STRIDE + b] += rhs.c[a * STRIDE + b];
            }
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: Jet) -> Jet {
        self.check_shape(&rhs);
        for a in 0..=self.nx {
            for b in 0..=self.ny {
                self.c[a * STRIDE + b] -= rhs.c[a * STRIDE + b];
            }
        }
        self
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        for a in 0..=self.nx {
            for b in 0..=self.ny {
                self.c[a * STRIDE + b] = -self.c[a * STRIDE + b];
            }
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        self.check_shape(&rhs);
        let mut out = self.zero_like();
        for a1 in 0..=self.nx {
            for b1 in 0..=self.ny {
                let l = self.c[a1 * STRIDE + b1];
                if l == 0.0 {
                    continue;
                }
                for a2 in 0..=(self.nx - a1) {
                    for b2 in 0..=(self.ny - b1) {
                        out.c[(a1 + a2) * STRIDE + b1 + b2] += l * rhs.c[a2 * STRIDE + b2];
                    }
                }
            }
        }
        out
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        let c0 = rhs.c[0];
        let n = rhs.order_bound();
        // 1/(c0 + h) = Σ (-1)^k h^k / c0^(k+1)
        let coeffs: Vec<f64> = (0..=n)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } / c0.powi(k as i32 + 1))
            .collect();
        self * Jet::series(&rhs.tail(), &coeffs)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, rhs: f64) -> Jet {
        self.c[0] += rhs;
        self
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(mut self, rhs: f64) -> Jet {
        self.c[0] -= rhs;
        self
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(mut self, rhs: f64) -> Jet {
        for a in 0..=self.nx {
            for b in 0..=self.ny {
                self.c[a * STRIDE + b] *= rhs;
            }
        }
        self
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self * (1.0 / rhs)
    }
}

impl Scalar for Jet {
    fn lift(&self, value: f64) -> Self {
        Jet::constant(self.nx, self.ny, value)
    }

    fn value(&self) -> f64 {
        self.c[0]
    }

    fn exp(self) -> Self {
        let e = self.c[0].exp();
        let n = self.order_bound();
        let coeffs: Vec<f64> = (0..=n).map(|k| e / factorial(k)).collect();
        Jet::series(&self.tail(), &coeffs)
    }

    fn ln(self) -> Self {
        let c0 = self.c[0];
        let n = self.order_bound();
        let mut coeffs = vec![c0.ln()];
        for k in 1..=n {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            coeffs.push(sign / (k as f64 * c0.powi(k as i32)));
        }
        Jet::series(&self.tail(), &coeffs)
    }

    fn sin(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let n = self.order_bound();
        let cycle = [s, c, -s, -c];
        let coeffs: Vec<f64> = (0..=n).map(|k| cycle[k % 4] / factorial(k)).collect();
        Jet::series(&self.tail(), &coeffs)
    }

    fn cos(self) -> Self {
        let (s, c) = self.c[0].sin_cos();
        let n = self.order_bound();
        let cycle = [c, -s, -c, s];
        let coeffs: Vec<f64> = (0..=n).map(|k| cycle[k % 4] / factorial(k)).collect();
        Jet::series(&self.tail(), &coeffs)
    }

    fn powi(self, n: i32) -> Self {
        if n == 0 {
            return self.lift(1.0);
        }
        if n < 0 {
            return self.lift(1.0) / self.powi(-n);
        }
        let mut acc = self.lift(1.0);
        let mut base = self;
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    fn powf(self, r: f64) -> Self {
        let c0 = self.c[0];
        let n = self.order_bound();
        // generalized binomial series of (c0 + h)^r
        let mut coeffs = Vec::with_capacity(n + 1);
        let mut falling = 1.0;
        for k in 0..=n {
            coeffs.push(falling * c0.powf(r - k as f64) / factorial(k));
            falling *= r - k as f64;
        }
        Jet::series(&self.tail(), &coeffs)
    }

    fn flat(self) -> Self {
        if self.c[0] > 0.0 {
            (-(self.lift(1.0) / self)).exp()
        } else {
            self.zero_like()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_exp_match_known_series() {
        // f(X) = exp(2 + X): every derivative equals e^2
        let x = Jet::univariate(5, 2.0);
        let e = x.exp();
        for k in 0..=5 {
            assert!((e.derivative(k, 0) - 2f64.exp()).abs() < 1e-12);
        }
        // (1+X)^3 = 1 + 3X + 3X^2 + X^3
        let y = Jet::univariate(4, 1.0).powi(3);
        assert_eq!(y.x_coeffs(), vec![1.0, 3.0, 3.0, 1.0, 0.0]);
    }

    #[test]
    fn mixed_partials_of_product() {
        // f = x^2 t^3 at (1, 2): ∂x∂t f = 2x·3t^2 = 24
        let x = Jet::var_x(2, 2, 1.0);
        let t = Jet::var_y(2, 2, 2.0);
        let f = x.powi(2) * t.powi(3);
        assert!((f.derivative(1, 1) - 24.0).abs() < 1e-12);
        assert!((f.derivative(2, 1) - 24.0).abs() < 1e-12);
        assert!((f.derivative(0, 2) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn division_sin_cos_ln_powf() {
        let x = Jet::univariate(3, 0.7);
        let q = x.sin() / x.cos();
        // tan' = 1 + tan^2
        let tan = 0.7f64.tan();
        assert!((q.derivative(1, 0) - (1.0 + tan * tan)).abs() < 1e-12);
        let l = x.ln();
        assert!((l.derivative(2, 0) + 1.0 / 0.49).abs() < 1e-12);
        let s = x.powf(0.5);
        assert!((s.derivative(1, 0) - 0.5 / 0.7f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn flat_vanishes_to_all_orders_at_zero() {
        let z = Jet::univariate(6, 0.0).flat();
        assert!(z.x_coeffs().iter().all(|&c| c == 0.0));
        let w = Jet::univariate(2, 0.5).flat();
        // d/dz exp(-1/z) = exp(-1/z)/z^2
        assert!((w.derivative(1, 0) - (-2.0f64).exp() / 0.25).abs() < 1e-12);
    }
}
