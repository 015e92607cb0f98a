//! Compactly supported smooth test functions for weak pairings.

use serde::Serialize;

use crate::function::SmoothFunction;
use crate::jet::Scalar;

/// Smooth bump on `[a, b]`, equal to 1 at the midpoint and flat at both ends.
pub fn bump<S: Scalar>(z: S, a: f64, b: f64) -> S {
    let s = (z * 2.0 - (a + b)) / (b - a);
    let one_minus = -(s * s) + 1.0;
    one_minus.flat() * std::f64::consts::E
}

/// Closed rectangle `[x0, x1] × [t0, t1]` outside which a test function vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Support {
    pub x0: f64,
    pub x1: f64,
    pub t0: f64,
    pub t1: f64,
}

#[derive(Debug, Clone)]
pub enum TestFn {
    /// `amplitude · bump(x) · bump(t) · (t - t_center)^t_power`.
    Bump { support: Support, amplitude: f64, t_power: u32, t_center: f64 },
    /// An expression multiplied by the product bump of its support.
    Windowed { support: Support, f: SmoothFunction },
}

impl TestFn {
    pub fn bump(x0: f64, x1: f64, t0: f64, t1: f64) -> Self {
        TestFn::Bump { support: Support { x0, x1, t0, t1 }, amplitude: 1.0, t_power: 0, t_center: 0.0 }
    }

    pub fn support(&self) -> Support {
        match self {
            TestFn::Bump { support, .. } | TestFn::Windowed { support, .. } => *support,
        }
    }

    pub fn eval<S: Scalar>(&self, x: S, t: S) -> S {
        let sp = self.support();
        let (xv, tv) = (x.value(), t.value());
        if xv <= sp.x0 || xv >= sp.x1 || tv <= sp.t0 || tv >= sp.t1 {
            return x.lift(0.0) * t.lift(0.0);
        }
        let window = bump(x, sp.x0, sp.x1) * bump(t, sp.t0, sp.t1);
        match self {
            TestFn::Bump { amplitude, t_power, t_center, .. } => {
                let w = window * *amplitude;
                if *t_power == 0 {
                    w
                } else {
                    w * (t - *t_center).powi(*t_power as i32)
                }
            }
            TestFn::Windowed { f, .. } => window * f.eval2(x, t),
        }
    }
}

/// Test function of time only: `bump(t) · (t - center)^power` on `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeTest {
    pub t0: f64,
    pub t1: f64,
    pub center: f64,
    pub power: u32,
}

impl TimeTest {
    pub fn eval<S: Scalar>(&self, t: S) -> S {
        let tv = t.value();
        if tv <= self.t0 || tv >= self.t1 {
            return t.lift(0.0);
        }
        let w = bump(t, self.t0, self.t1);
        if self.power == 0 {
            w
        } else {
            w * (t - self.center).powi(self.power as i32)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet;

    #[test]
    fn bump_shape() {
        assert!((bump(0.5, 0.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(bump(1.0, 0.0, 1.0), 0.0);
        let j = bump(Jet::univariate(4, 0.999_999), 0.0, 1.0);
        for k in 0..=4 {
            assert!(j.derivative(k, 0).abs() < 1e-100);
        }
    }

    #[test]
    fn vanishes_outside_support() {
        let f = TestFn::bump(0.2, 0.4, 1.0, 1.5);
        assert_eq!(f.eval(0.1, 1.2), 0.0);
        assert_eq!(f.eval(0.3, 1.6), 0.0);
        assert!(f.eval(0.3, 1.25) > 0.9);
    }
}
