//! Characteristics, survival and source integrals, and the singular-support set.
//!
//! Every characteristic is a line of slope one, `x = t - τ`. Lines with
//! `τ < 0` start on the initial axis at age `-τ`; lines with `τ > 0` leave the
//! boundary `x = 0` at time `τ`. Points with `t < x` form region 0, points with
//! `t > x` are split into strips `Ω(i)` by the emission times.

use std::cell::RefCell;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::function::SmoothFunction;
use crate::jet::Scalar;
use crate::model::{ModelConfig, TRIPLE_INTERSECTION};
use crate::quadrature::Quadrature;

/// `θ(x,t) = (t - x)·H(t - x)`, the time at which the characteristic through `(x,t)` enters.
pub fn theta(x: f64, t: f64) -> f64 {
    (t - x).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// `exp(±∫_θ^t p(τ + x - t, τ) dτ)`: `S` for `Sign::Plus`, `Ŝ` for `Sign::Minus`.
pub fn survival(x: f64, t: f64, rate: &SmoothFunction, sign: Sign, quad: &Quadrature) -> Result<f64> {
    let lo = theta(x, t);
    let integral = quad.integrate(|tau| rate.eval2(tau + x - t, tau), lo, t)?;
    Ok((sign.factor() * integral).exp())
}

/// `S1(x,t) = ∫_θ^t g(σ + x - t, σ)·exp(∫_σ^t p(τ + x - t, τ) dτ) dσ`, by nested quadrature.
pub fn source_accum(x: f64, t: f64, cfg: &ModelConfig, quad: &Quadrature) -> Result<f64> {
    if cfg.g.is_zero() {
        return Ok(0.0);
    }
    let lo = theta(x, t);
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let outer = quad.integrate(
        |sigma| {
            let g = cfg.g(sigma + x - t, sigma);
            if g == 0.0 {
                return 0.0;
            }
            match quad.integrate(|tau| cfg.p(tau + x - t, tau), sigma, t) {
                Ok(inner) => g * inner.exp(),
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        },
        lo,
        t,
    );
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    outer
}

/// `(S, S1)` at `(x, t)` by RK4 along the characteristic, generic over jets.
///
/// The path is parametrized on `λ ∈ [0, 1]` from the entry point, so jets in
/// `x` and `t` carry the dependence of the entry point and the path length.
pub fn char_integrals<S: Scalar>(cfg: &ModelConfig, x: S, t: S, steps: usize) -> (S, S) {
    let zero = x.lift(0.0);
    let (xe, te, len) = if t.value() <= x.value() { (x - t, zero, t) } else { (zero, t - x, x) };
    let h = 1.0 / steps as f64;
    let rhs = |l: f64, w: S| {
        let px = xe + len * l;
        let pt = te + len * l;
        let p = cfg.p(px, pt);
        let g = cfg.g(px, pt);
        (len * p, len * (p * w + g))
    };
    let mut lam = zero;
    let mut w = zero;
    for k in 0..steps {
        let l0 = k as f64 * h;
        let (a1, b1) = rhs(l0, w);
        let (a2, b2) = rhs(l0 + 0.5 * h, w + b1 * (0.5 * h));
        let (a3, b3) = rhs(l0 + 0.5 * h, w + b2 * (0.5 * h));
        let (a4, b4) = rhs(l0 + h, w + b3 * h);
        lam = lam + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (h / 6.0);
        w = w + (b1 + b2 * 2.0 + b3 * 2.0 + b4) * (h / 6.0);
    }
    (lam.exp(), w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "atom")]
pub enum LineOrigin {
    /// Index into `initial_atoms`.
    InitialAtom(usize),
    /// Index into `boundary_atoms`.
    BoundaryAtom(usize),
    /// Index of the fertility atom the parent line crossed.
    Reflection(usize),
}

/// Characteristic line `x = t - offset` carrying a singular term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharLine {
    pub offset: f64,
    pub origin: LineOrigin,
    pub parent: Option<usize>,
    pub generation: usize,
    /// Largest delta-derivative order the line can carry (before cancellations).
    pub order: u32,
}

impl CharLine {
    /// Time at which the line reaches age `age`.
    pub fn time_at_age(&self, age: f64) -> f64 {
        age + self.offset
    }
}

/// A line crossing a fertility age inside `(0, T)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub time: f64,
    pub line: usize,
    pub fertility: usize,
    pub spawned: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Reflection,
    BoundaryAtom,
}

/// A time at which a new singular line leaves the boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionEvent {
    pub time: f64,
    pub generation: usize,
    pub kind: EventKind,
    /// Line whose singularity produced the event (the boundary line itself for atom events).
    pub source_line: CharLine,
    pub source_index: usize,
    /// Index of the emitted line.
    pub emitted: usize,
    pub max_delta_order: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SingularSupport {
    pub lines: Vec<CharLine>,
    pub events: Vec<EmissionEvent>,
}

impl SingularSupport {
    /// Distinct event times, merged within `tol`.
    pub fn distinct_times(&self, tol: f64) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.events {
            if out.last().map_or(true, |&l| e.time - l > tol) {
                out.push(e.time);
            }
        }
        out
    }
}

/// Enumerate every singular line below the horizon and its fertility crossings.
///
/// No collision checks are made; see [`build_singular_support`].
pub fn trace_lines(cfg: &ModelConfig) -> (Vec<CharLine>, Vec<Crossing>) {
    let horizon = cfg.horizon;
    let mut lines = Vec::new();
    for (i, a) in cfg.initial_atoms.iter().enumerate() {
        lines.push(CharLine {
            offset: -a.location,
            origin: LineOrigin::InitialAtom(i),
            parent: None,
            generation: 0,
            order: a.order,
        });
    }
    for (j, a) in cfg.boundary_atoms.iter().enumerate() {
        if a.location < horizon {
            lines.push(CharLine {
                offset: a.location,
                origin: LineOrigin::BoundaryAtom(j),
                parent: None,
                generation: 0,
                order: a.order,
            });
        }
    }
    let mut crossings = Vec::new();
    let mut next = 0;
    while next < lines.len() {
        let line = lines[next];
        for (k, f) in cfg.fertility_atoms.iter().enumerate() {
            let time = line.time_at_age(f.location);
            if time > 0.0 && time < horizon {
                lines.push(CharLine {
                    offset: time,
                    origin: LineOrigin::Reflection(k),
                    parent: Some(next),
                    generation: line.generation + 1,
                    order: line.order + f.order,
                });
                crossings.push(Crossing { time, line: next, fertility: k, spawned: lines.len() - 1 });
            }
        }
        next += 1;
    }
    (lines, crossings)
}

/// Build the singular-support set: all lines and the time-sorted emission events.
///
/// Fails when an emission time meets a boundary-atom time.
pub fn build_singular_support(cfg: &ModelConfig) -> Result<SingularSupport> {
    let tol = cfg.event_tolerance();
    let (lines, crossings) = trace_lines(cfg);
    for c in &crossings {
        for b in &cfg.boundary_atoms {
            if (c.time - b.location).abs() <= tol {
                return Err(Error::Assumption(format!(
                    "{TRIPLE_INTERSECTION}: emission at t* = {:.9} meets the boundary atom at t = {}",
                    c.time, b.location
                )));
            }
        }
    }
    let mut events: Vec<EmissionEvent> = crossings
        .iter()
        .map(|c| EmissionEvent {
            time: c.time,
            generation: lines[c.spawned].generation,
            kind: EventKind::Reflection,
            source_line: lines[c.line],
            source_index: c.line,
            emitted: c.spawned,
            max_delta_order: lines[c.spawned].order,
        })
        .collect();
    for (idx, line) in lines.iter().enumerate() {
        if let LineOrigin::BoundaryAtom(_) = line.origin {
            events.push(EmissionEvent {
                time: line.offset,
                generation: 0,
                kind: EventKind::BoundaryAtom,
                source_line: *line,
                source_index: idx,
                emitted: idx,
                max_delta_order: line.order,
            });
        }
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.emitted.cmp(&b.emitted)));
    Ok(SingularSupport { lines, events })
}

/// Region 0 (`-L < t - x < 0`) or a strip `lower < t - x < upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Region {
    pub index: usize,
    pub lower: f64,
    pub upper: f64,
}

impl Region {
    pub fn contains(&self, x: f64, t: f64) -> bool {
        let s = t - x;
        s > self.lower && s < self.upper
    }
}

/// Region 0 plus one strip per inter-event interval below the horizon.
///
/// The last strip is bounded by `T` (no characteristic from `x = 0` after `T` enters the window).
pub fn regions(events: &[EmissionEvent], cfg: &ModelConfig) -> Vec<Region> {
    let tol = cfg.event_tolerance();
    let mut times: Vec<f64> = Vec::new();
    for e in events {
        if e.time < cfg.horizon && times.last().map_or(true, |&l| e.time - l > tol) {
            times.push(e.time);
        }
    }
    let mut out = vec![Region { index: 0, lower: -cfg.max_age, upper: 0.0 }];
    let mut lower = 0.0;
    for t in times {
        out.push(Region { index: out.len(), lower, upper: t });
        lower = t;
    }
    out.push(Region { index: out.len(), lower, upper: cfg.horizon });
    out
}

/// `k(T)`: number of distinct event times below the horizon.
pub fn event_count(events: &[EmissionEvent], cfg: &ModelConfig) -> usize {
    regions(events, cfg).len() - 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet;
    use crate::model::DataAtom;

    fn cfg_with(p: &str, g: &str) -> ModelConfig {
        let mut c = ModelConfig::empty(3.0, 2.5);
        c.p = SmoothFunction::expression(p).unwrap();
        c.g = SmoothFunction::expression(g).unwrap();
        c
    }

    #[test]
    fn theta_cases() {
        assert_eq!(theta(2.0, 1.0), 0.0);
        assert_eq!(theta(1.0, 3.0), 2.0);
        assert_eq!(theta(0.7, 0.7), 0.0);
    }

    #[test]
    fn survival_closed_forms() {
        let q = Quadrature::default();
        let zero = SmoothFunction::zero();
        assert_eq!(survival(0.3, 0.9, &zero, Sign::Plus, &q).unwrap(), 1.0);
        let c = SmoothFunction::expression("-0.7").unwrap();
        let s = survival(2.0, 1.2, &c, Sign::Plus, &q).unwrap();
        assert!((s - (-0.7f64 * 1.2).exp()).abs() < 1e-13);
        let px = SmoothFunction::expression("x").unwrap();
        let s = survival(2.0, 1.0, &px, Sign::Plus, &q).unwrap();
        assert!((s - 1.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn survival_hat_is_reciprocal_for_constant_rate() {
        let q = Quadrature::default();
        let c = SmoothFunction::expression("0.4").unwrap();
        for &(x, t) in &[(0.5, 0.2), (0.2, 0.5), (1.0, 2.0)] {
            let s = survival(x, t, &c, Sign::Plus, &q).unwrap();
            let sh = survival(x, t, &c, Sign::Minus, &q).unwrap();
            assert!((s * sh - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn source_accum_closed_forms() {
        let q = Quadrature::default();
        assert_eq!(source_accum(1.0, 0.5, &cfg_with("0", "0"), &q).unwrap(), 0.0);
        let v = source_accum(1.0, 0.5, &cfg_with("0", "1"), &q).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        let v = source_accum(1.0, 0.6, &cfg_with("0", "t"), &q).unwrap();
        assert!((v - 0.18).abs() < 1e-12);
    }

    #[test]
    fn rk4_integrals_match_quadrature() {
        let cfg = cfg_with("-0.3 - 0.2*sin(x + 2*t)", "0.5*cos(x - t)");
        let q = Quadrature::default();
        for &(x, t) in &[(1.3, 0.4), (0.4, 1.3), (0.9, 2.1)] {
            let (s, s1) = char_integrals(&cfg, x, t, 64);
            let sq = survival(x, t, &cfg.p, Sign::Plus, &q).unwrap();
            let s1q = source_accum(x, t, &cfg, &q).unwrap();
            assert!((s - sq).abs() < 1e-9, "{s} {sq}");
            assert!((s1 - s1q).abs() < 1e-8, "{s1} {s1q}");
        }
    }

    #[test]
    fn jets_give_transport_derivative() {
        // (∂t + ∂x) S = p S and (∂t + ∂x) S1 = p S1 + g.
        let cfg = cfg_with("-0.3 - 0.2*sin(x + 2*t)", "0.5*cos(x - t)");
        for &(x, t) in &[(1.3, 0.4), (0.4, 1.3)] {
            let (s, s1) = char_integrals(&cfg, Jet::var_x(1, 1, x), Jet::var_y(1, 1, t), 128);
            let p = cfg.p(x, t);
            let g = cfg.g(x, t);
            let ds = s.derivative(1, 0) + s.derivative(0, 1);
            let ds1 = s1.derivative(1, 0) + s1.derivative(0, 1);
            assert!((ds - p * s.value()).abs() < 1e-9);
            assert!((ds1 - p * s1.value() - g).abs() < 1e-9);
        }
    }

    fn demo(initial: f64, fert: f64, boundary: f64, horizon: f64) -> ModelConfig {
        let mut c = ModelConfig::empty(1.0, horizon);
        c.initial_atoms = vec![DataAtom::new(1.0, 0, initial)];
        c.fertility_atoms = vec![DataAtom::new(1.0, 0, fert)];
        c.boundary_atoms = vec![DataAtom::new(1.0, 0, boundary)];
        c
    }

    #[test]
    fn demo_event_set() {
        let sup = build_singular_support(&demo(0.25, 0.6, 2.0, 2.5)).unwrap();
        let times: Vec<f64> = sup.events.iter().map(|e| e.time).collect();
        let expected = [0.35, 0.95, 1.55, 2.0, 2.15];
        assert_eq!(times.len(), expected.len());
        for (a, b) in times.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{times:?}");
        }
        let gens: Vec<usize> = sup.events.iter().map(|e| e.generation).collect();
        assert_eq!(gens, vec![1, 2, 3, 0, 4]);
    }

    #[test]
    fn boundary_only_progression() {
        let mut c = ModelConfig::empty(1.0, 2.6);
        c.fertility_atoms = vec![DataAtom::new(1.0, 0, 0.5)];
        c.boundary_atoms = vec![DataAtom::new(1.0, 0, 1.0)];
        let sup = build_singular_support(&c).unwrap();
        let times: Vec<f64> = sup.events.iter().map(|e| e.time).collect();
        assert_eq!(times, vec![1.0, 1.5, 2.0, 2.5]);
    }

    #[test]
    fn triple_intersection_rejected() {
        let err = build_singular_support(&demo(0.25, 0.75, 2.0, 2.5)).unwrap_err();
        assert!(err.to_string().contains("triple singularity intersection"));
        assert!(build_singular_support(&demo(0.25, 0.75, 2.001, 2.5)).is_ok());
    }

    #[test]
    fn no_atoms_no_support() {
        let sup = build_singular_support(&ModelConfig::empty(1.0, 1.0)).unwrap();
        assert!(sup.lines.is_empty() && sup.events.is_empty());
    }

    #[test]
    fn region_strips() {
        let cfg = demo(0.25, 0.6, 2.0, 2.5);
        let sup = build_singular_support(&cfg).unwrap();
        let r = regions(&sup.events, &cfg);
        assert_eq!(r.len(), 7);
        assert_eq!((r[1].lower, r[1].upper), (0.0, sup.events[0].time));
        assert_eq!(event_count(&sup.events, &cfg), 5);
        assert!(r[0].contains(0.5, 0.2));
        assert!(r[2].contains(0.1, 0.6));

        let empty = ModelConfig::empty(1.0, 1.0);
        let r = regions(&[], &empty);
        assert_eq!(r.len(), 2);
        assert_eq!(event_count(&[], &empty), 0);
    }
}
