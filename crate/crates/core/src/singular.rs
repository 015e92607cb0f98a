//! Delta-derivative atoms carried by characteristic lines.
//!
//! A singular term on the line `x = t - τ` is stored as
//!
//! ```text
//! S(x,t) · Σ_i c_i δ^(i)(t - x - τ)
//! ```
//!
//! where `S` is the survival factor from the line's entry point. An initial
//! atom `d·δ^(m)(x - x*)` therefore becomes `τ = -x*` and `c_m = (-1)^m d`.
//! Pairings use the Lebesgue measure `dx dt`:
//!
//! ```text
//! ⟨S δ^(i)(t - x - τ), φ⟩ = (-1)^i ∫ ∂_t^i (S φ)(x, x + τ) dx
//! ```

use serde::Serialize;

use crate::characteristics::{char_integrals, CharLine, EventKind, LineOrigin, SingularSupport};
use crate::jet::{binomial, factorial, Jet};
use crate::model::{DataAtom, ModelConfig};
use crate::quadrature::gauss_legendre;
use crate::testfn::{TestFn, TimeTest};

/// Singular part living on one characteristic line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularTerm {
    pub line_index: usize,
    pub line: CharLine,
    /// `constants[i]` multiplies `δ^(i)(t - x - τ)`.
    pub constants: Vec<f64>,
}

impl SingularTerm {
    /// Nonzero `(order, constant)` pairs.
    pub fn atoms(&self) -> Vec<(u32, f64)> {
        self.constants
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| (i as u32, *c))
            .collect()
    }

    /// Highest order with a nonzero constant.
    pub fn max_order(&self) -> Option<u32> {
        self.constants.iter().rposition(|c| *c != 0.0).map(|i| i as u32)
    }
}

/// Time atoms `Σ_k F_k δ^(k)(t - time)` of `v = ∫ b u dx` where a line crosses a fertility atom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingAtoms {
    pub time: f64,
    pub line: usize,
    pub fertility: usize,
    pub coefficients: Vec<f64>,
}

/// Line constants of an initial atom.
pub fn initial_line_constants(atom: &DataAtom) -> Vec<f64> {
    let m = atom.order as usize;
    let mut c = vec![0.0; m + 1];
    c[m] = if m % 2 == 0 { atom.coefficient } else { -atom.coefficient };
    c
}

/// Jet of `σ(X, Y) = S(y + X, t* + X + Y)` with degrees `(n, i)`.
pub fn sigma_jet(cfg: &ModelConfig, y: f64, t_star: f64, n: usize, i: usize, steps: usize) -> Jet {
    let x = Jet::var_x(n, i, y);
    let t = Jet::var_x(n, i, t_star) + Jet::var_y(n, i, 0.0);
    char_integrals(cfg, x, t, steps).0
}

/// Coefficients `F_k`, `k = 0..=n+m`, with
/// `∫ S δ^(n)(x - y) δ^(m)(x - t + τ) dx = Σ_k F_k δ^(k)(t - t*)` and `t* = y + τ`.
///
/// `sigma` is [`sigma_jet`] with degrees at least `(n, m)`.
pub fn delta_product_coeffs(n: u32, m: u32, sigma: &Jet) -> Vec<f64> {
    let (n, m) = (n as usize, m as usize);
    let mut out = vec![0.0; n + m + 1];
    for a in 0..=n {
        for b in 0..=m {
            let k = (n - a) + (m - b);
            let w = factorial(n) * factorial(m) / (factorial(n - a) * factorial(m - b));
            out[k] += w * sigma.get(a, b);
        }
    }
    for (k, v) in out.iter_mut().enumerate() {
        if (n + k) % 2 == 1 {
            *v = -*v;
        }
    }
    out
}

/// Time atoms produced when a line with constants `line` crosses `e·δ^(n)(x - y)`.
pub fn crossing_coeffs(e: f64, n: u32, line: &[f64], sigma: &Jet) -> Vec<f64> {
    let mut out = vec![0.0; n as usize + line.len()];
    for (i, &c) in line.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        for (k, f) in delta_product_coeffs(n, i as u32, sigma).into_iter().enumerate() {
            out[k] += sign * e * c * f;
        }
    }
    out
}

/// `h(t) · Σ_k atoms[k] δ^(k)(t - a)` given `derivs[q] = h^(q)(a)`.
pub fn leibniz_multiply(atoms: &[f64], derivs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; atoms.len()];
    for (k, &a) in atoms.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for q in 0..=k {
            let d = derivs.get(q).copied().unwrap_or(0.0);
            let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
            out[k - q] += a * sign * binomial(k, q) * d;
        }
    }
    out
}

/// What produced a boundary emission.
#[derive(Debug, Clone, Copy)]
pub enum EmissionSource<'a> {
    /// `f·δ^(l)(t - t_j)` times the smooth `v_r`, with `v_r^(q)(t_j)`.
    BoundaryAtom { atom: &'a DataAtom, v_r_derivs: &'a [f64] },
    /// `c_r(t)` times the time atoms of `v`, with `c_r^(q)(t*)`.
    Reflection { atoms: &'a [f64], c_r_derivs: &'a [f64] },
}

/// Constants of the line `x = t - t*` emitted at the boundary.
pub fn emit_boundary_singularity(src: EmissionSource<'_>) -> Vec<f64> {
    match src {
        EmissionSource::BoundaryAtom { atom, v_r_derivs } => {
            let mut unit = vec![0.0; atom.order as usize + 1];
            unit[atom.order as usize] = atom.coefficient;
            leibniz_multiply(&unit, v_r_derivs)
        }
        EmissionSource::Reflection { atoms, c_r_derivs } => leibniz_multiply(atoms, c_r_derivs),
    }
}

/// Zero constants with `|c| <= tol·max|c|` and drop trailing zeros.
pub fn prune(mut constants: Vec<f64>, tol: f64) -> Vec<f64> {
    let max = constants.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    for c in constants.iter_mut() {
        if c.abs() <= tol * max {
            *c = 0.0;
        }
    }
    while constants.last() == Some(&0.0) {
        constants.pop();
    }
    constants
}

/// Hybrid pairing of a singular term with a test function.
pub fn evaluate_pairing(term: &SingularTerm, cfg: &ModelConfig, phi: &TestFn, steps: usize) -> f64 {
    let tau = term.line.offset;
    let sp = phi.support();
    let lo = 0.0f64.max(-tau).max(sp.x0).max(sp.t0 - tau);
    let hi = cfg.max_age.min(cfg.horizon - tau).min(sp.x1).min(sp.t1 - tau);
    if hi <= lo || term.constants.iter().all(|c| *c == 0.0) {
        return 0.0;
    }
    let deg = term.constants.len() - 1;
    let integrand = |x: f64| {
        let xj = Jet::constant(0, deg, x);
        let tj = Jet::var_y(0, deg, x + tau);
        let (s, _) = char_integrals(cfg, xj, tj, steps);
        let sphi = s * phi.eval(xj, tj);
        term.constants
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                sign * c * sphi.derivative(0, i)
            })
            .sum::<f64>()
    };
    gauss_legendre(integrand, lo, hi, 48)
}

/// `⟨Σ_k F_k δ^(k)(t - t*), ψ⟩ = Σ_k (-1)^k F_k ψ^(k)(t*)`.
pub fn pair_time_atoms(coefficients: &[f64], time: f64, psi: &TimeTest) -> f64 {
    if coefficients.is_empty() {
        return 0.0;
    }
    let j = psi.eval(Jet::univariate(coefficients.len() - 1, time));
    coefficients
        .iter()
        .enumerate()
        .map(|(k, f)| if k % 2 == 0 { f * j.derivative(k, 0) } else { -f * j.derivative(k, 0) })
        .sum()
}

/// Order bookkeeping of one emission event.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub time: f64,
    pub kind: EventKind,
    pub generation: usize,
    pub line: usize,
    /// Order carried by the incoming line (reflections only).
    pub incoming_order: Option<u32>,
    /// Fertility atom order `n` or boundary atom order `j`.
    pub increment: u32,
    /// Highest order the emitted line can carry.
    pub emitted_order: u32,
    /// Highest order with a nonzero constant after pruning.
    pub effective_order: Option<u32>,
    /// Singular order in the counting where a Dirac measure has order 1.
    pub singular_order: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OrderLedger {
    pub entries: Vec<LedgerEntry>,
}

impl OrderLedger {
    /// Largest effective emitted order per generation, generations `1..`.
    pub fn max_order_by_generation(&self) -> Vec<Option<u32>> {
        let gmax = self.entries.iter().map(|e| e.generation).max().unwrap_or(0);
        (1..=gmax)
            .map(|g| {
                self.entries
                    .iter()
                    .filter(|e| e.generation == g)
                    .filter_map(|e| e.effective_order)
                    .max()
            })
            .collect()
    }

    /// Entries breaking the growth rules: emitted = incoming + n, and effective ≤ emitted.
    pub fn violations(&self) -> Vec<&LedgerEntry> {
        self.entries
            .iter()
            .filter(|e| {
                let structural = match e.incoming_order {
                    Some(i) => e.emitted_order != i + e.increment,
                    None => e.emitted_order != e.increment,
                };
                structural || e.effective_order.is_some_and(|o| o > e.emitted_order)
            })
            .collect()
    }
}

/// Build the ledger from the support set and, when available, the computed terms.
pub fn propagate_orders(
    support: &SingularSupport,
    cfg: &ModelConfig,
    terms: Option<&[SingularTerm]>,
) -> OrderLedger {
    let entries = support
        .events
        .iter()
        .map(|ev| {
            let line = support.lines[ev.emitted];
            let (incoming, increment) = match (ev.kind, line.origin) {
                (EventKind::Reflection, LineOrigin::Reflection(k)) => {
                    (Some(ev.source_line.order), cfg.fertility_atoms[k].order)
                }
                (_, LineOrigin::BoundaryAtom(j)) => (None, cfg.boundary_atoms[j].order),
                _ => (None, line.order),
            };
            let effective = match terms {
                Some(t) => t.iter().find(|t| t.line_index == ev.emitted).and_then(SingularTerm::max_order),
                None => Some(line.order),
            };
            LedgerEntry {
                time: ev.time,
                kind: ev.kind,
                generation: ev.generation,
                line: ev.emitted,
                incoming_order: incoming,
                increment,
                emitted_order: line.order,
                effective_order: effective,
                singular_order: effective.map(|o| o + 1),
            }
        })
        .collect();
    OrderLedger { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::build_singular_support;
    use crate::function::SmoothFunction;

    fn unit_sigma(n: usize, m: usize) -> Jet {
        Jet::constant(n, m, 1.0)
    }

    #[test]
    fn product_coefficients_with_unit_envelope() {
        assert_eq!(delta_product_coeffs(0, 0, &unit_sigma(0, 0)), vec![1.0]);
        assert_eq!(delta_product_coeffs(1, 0, &unit_sigma(1, 0)), vec![0.0, 1.0]);
        assert_eq!(delta_product_coeffs(0, 1, &unit_sigma(0, 1)), vec![0.0, -1.0]);
        // δ^(n)(x - y)·δ^(m)(x - t + τ) integrated in x is (-1)^m δ^(n+m)(t - t*).
        for n in 0..4u32 {
            for m in 0..4u32 {
                let f = delta_product_coeffs(n, m, &unit_sigma(n as usize, m as usize));
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                for (k, v) in f.iter().enumerate() {
                    let expected = if k == (n + m) as usize { sign } else { 0.0 };
                    assert_eq!(*v, expected, "n={n} m={m} k={k}");
                }
            }
        }
    }

    #[test]
    fn product_coefficients_against_direct_leibniz() {
        // σ = 1 + 2X + 3Y + 5XY, n = m = 1:
        // ∂_X ∂_Z [σ(X,Z) ψ(t* + X + Z)] at 0 = 5ψ + (2 + 3)ψ' + ψ''.
        let mut s = Jet::constant(1, 1, 1.0);
        s.set(1, 0, 2.0);
        s.set(0, 1, 3.0);
        s.set(1, 1, 5.0);
        // (-1)^{n+m} ∂∂G = Σ F_k (-1)^k ψ^(k), then flip the m sign for the x-oriented line.
        let f = delta_product_coeffs(1, 1, &s);
        assert_eq!(f, vec![-5.0, 5.0, -1.0]);
    }

    #[test]
    fn leibniz_examples() {
        // δ(t - a)·v = v(a) δ(t - a)
        assert_eq!(leibniz_multiply(&[1.0], &[3.0]), vec![3.0]);
        // h δ' = h(a) δ' - h'(a) δ
        assert_eq!(leibniz_multiply(&[0.0, 1.0], &[2.0, 5.0]), vec![-5.0, 2.0]);
        let atom = DataAtom::new(2.0, 0, 1.0);
        let c = emit_boundary_singularity(EmissionSource::BoundaryAtom { atom: &atom, v_r_derivs: &[0.7] });
        assert_eq!(c, vec![1.4]);
        let f = [0.3, -0.2];
        let e = emit_boundary_singularity(EmissionSource::Reflection { atoms: &f, c_r_derivs: &[1.0, 0.0] });
        assert_eq!(e, f.to_vec());
    }

    #[test]
    fn pruning() {
        assert_eq!(prune(vec![1.0, 1e-14, 0.0], 1e-12), vec![1.0]);
        assert!(prune(vec![0.0, 0.0], 1e-12).is_empty());
    }

    #[test]
    fn line_pairing_of_unit_term() {
        let cfg = ModelConfig::empty(1.0, 1.0);
        let term = SingularTerm {
            line_index: 0,
            line: CharLine {
                offset: -0.3,
                origin: LineOrigin::InitialAtom(0),
                parent: None,
                generation: 0,
                order: 0,
            },
            constants: vec![1.0],
        };
        let phi = TestFn::Windowed {
            support: crate::testfn::Support { x0: 0.2, x1: 1.0, t0: 0.0, t1: 1.0 },
            f: SmoothFunction::expression("1").unwrap(),
        };
        // ∫ bump((x-0.2)/.8·2-1)·bump(x - 0.3) dx over the line: compare with direct quadrature.
        let direct = gauss_legendre(|x| phi.eval(x, x - 0.3), 0.3, 1.0, 200);
        let v = evaluate_pairing(&term, &cfg, &phi, 16);
        assert!((v - direct).abs() < 1e-10, "{v} {direct}");
        let far = TestFn::bump(0.0, 0.1, 0.5, 0.9);
        assert_eq!(evaluate_pairing(&term, &cfg, &far, 16), 0.0);
    }

    #[test]
    fn time_atom_pairing() {
        let psi = TimeTest { t0: 0.0, t1: 2.0, center: 1.0, power: 1 };
        // ψ(t) = bump·(t - 1): ψ(1) = 0, ψ'(1) = 1.
        assert!(pair_time_atoms(&[1.0], 1.0, &psi).abs() < 1e-15);
        assert!((pair_time_atoms(&[0.0, 1.0], 1.0, &psi) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn structural_ledger_orders() {
        let mut cfg = ModelConfig::empty(1.0, 2.0);
        cfg.initial_atoms = vec![DataAtom::new(1.0, 0, 0.1)];
        cfg.fertility_atoms = vec![DataAtom::new(1.0, 1, 0.5)];
        let sup = build_singular_support(&cfg).unwrap();
        let ledger = propagate_orders(&sup, &cfg, None);
        let orders: Vec<u32> = ledger.entries.iter().map(|e| e.emitted_order).collect();
        assert_eq!(orders, vec![1, 2, 3, 4]);
        assert!(ledger.violations().is_empty());
        assert!(propagate_orders(&SingularSupport::default(), &cfg, None).entries.is_empty());
    }
}
