//! Smooth part of the solution by a causal march along characteristics.
//!
//! The grid is uniform with `h_x = h_t = h`. Each row `t_k = k h` holds the
//! smooth part `u_s` at the nodes `x_i = i h`. Nodes with `i >= k` lie on
//! characteristics from the initial axis, the others on characteristics from
//! the boundary, and on both families
//!
//! ```text
//! u_s = S1 + S · a_r(x - t)        t <= x
//! u_s = S1 + S · B(t - x)          t >  x,   B = c_r v_r
//! ```
//!
//! `S` and `S1` are advanced by RK4 from row to row, so row `k` only depends
//! on data at times `<= t_k`. The regular part of `v = ∫ b u dx` is
//!
//! ```text
//! v_r(t) = ∫ b_r u_s dx + Σ e (-1)^n ∂_x^n u_s(y, t) + Σ_lines Σ_i c_i ∂_x^i [b_r S](t - τ, t)
//! ```
//!
//! with trapezoid weights in `x`, which converge spectrally since `b_r` is flat
//! at both ends. The unknown `B(t_k)` at `x = 0` enters through the endpoint
//! weight and is solved for directly.

use serde::Serialize;

use crate::characteristics::{
    build_singular_support, char_integrals, regions, CharLine, LineOrigin, Region, SingularSupport,
};
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::model::{detect_fertility_gap, ModelConfig};
use crate::quadrature::Quadrature;
use crate::singular::{
    crossing_coeffs, emit_boundary_singularity, initial_line_constants,
    pair_time_atoms, propagate_orders, prune, sigma_jet, CrossingAtoms, EmissionSource,
    OrderLedger, SingularTerm,
};
use crate::testfn::{TestFn, TimeTest};

/// Half-width of the difference stencils applied to the trace.
pub const STENCIL_HALF_WIDTH: usize = 4;

/// Which part of the march produced a trace segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Before the first event: Volterra equation on `Ω(1)`.
    Volterra,
    /// Strip of width `ε` after an event.
    EventExtension,
    /// Renewal equation between events.
    Renewal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSegment {
    pub start: f64,
    pub end: f64,
    pub stage: Stage,
}

/// Regular parts of `v(t)` and `u(0, t)` on the time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryTrace {
    pub times: Vec<f64>,
    pub v_r: Vec<f64>,
    pub u0: Vec<f64>,
    pub segments: Vec<TraceSegment>,
}

/// Jumps of one-sided derivative estimates of `v_r` at an event time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StitchReport {
    pub time: f64,
    /// `|left - right|` for derivative orders 0, 1, 2.
    pub jumps: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub grid_step: f64,
    pub epsilon: f64,
    pub activation_delay: f64,
    pub horizon_shrunk: bool,
    /// `g(0,0) ≠ 0`: the smooth part has a weak discontinuity along `x = t`.
    pub corner_discontinuity: bool,
    /// Largest absolute residual of the re-substituted integral equation.
    pub residual: f64,
    pub residual_bound: f64,
    pub stitches: Vec<StitchReport>,
}

#[derive(Debug, Clone, Default)]
pub struct SolveOptions {
    /// Overrides `numerics.grid_step`.
    pub grid_step: Option<f64>,
    /// Skip the residual re-substitution (used by cheap sweeps).
    pub skip_residual: bool,
}

/// Full hybrid solution: smooth grid field, trace and singular terms.
#[derive(Debug, Clone)]
pub struct HybridSolution {
    pub h: f64,
    pub nx: usize,
    pub nt: usize,
    pub horizon: f64,
    u: Vec<f64>,
    pub trace: BoundaryTrace,
    pub support: SingularSupport,
    pub regions: Vec<Region>,
    pub terms: Vec<SingularTerm>,
    pub crossings: Vec<CrossingAtoms>,
    pub ledger: OrderLedger,
    pub diagnostics: Diagnostics,
    char_steps: usize,
}

/// Smooth part restricted to one region.
#[derive(Debug, Clone, Copy)]
pub struct SmoothField<'a> {
    pub region: Region,
    sol: &'a HybridSolution,
}

impl<'a> SmoothField<'a> {
    /// Grid samples `(x, t, u_s)` inside the region (upper strip edge included).
    pub fn samples(&self) -> Vec<(f64, f64, f64)> {
        self.samples_every(1)
    }

    /// Samples on every `stride`-th node in both directions.
    pub fn samples_every(&self, stride: usize) -> Vec<(f64, f64, f64)> {
        let sol = self.sol;
        let stride = stride.max(1);
        let mut out = Vec::new();
        for k in (0..=sol.nt).step_by(stride) {
            for i in (0..=sol.nx).step_by(stride) {
                let (x, t) = (i as f64 * sol.h, k as f64 * sol.h);
                let s = t - x;
                let inside = if self.region.index == 0 {
                    s <= 0.0
                } else {
                    s > self.region.lower && s <= self.region.upper
                };
                if inside {
                    out.push((x, t, sol.value(i, k)));
                }
            }
        }
        out
    }

    /// Smooth part at a point of the region.
    pub fn eval(&self, cfg: &ModelConfig, x: f64, t: f64) -> Option<f64> {
        let s = t - x;
        let inside = if self.region.index == 0 {
            s <= 0.0 && s >= self.region.lower
        } else {
            s >= self.region.lower && s <= self.region.upper
        };
        inside.then(|| self.sol.u_smooth(cfg, x, t))
    }
}

impl HybridSolution {
    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.u[k * (self.nx + 1) + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.u[k * (self.nx + 1)..(k + 1) * (self.nx + 1)]
    }

    pub fn field(&self, region: usize) -> SmoothField<'_> {
        SmoothField { region: self.regions[region], sol: self }
    }

    /// Smooth boundary value `B(s) = c_r(s) v_r(s)`, extended by zero for `s < 0`.
    pub fn boundary_value(&self, s: f64) -> f64 {
        interpolate(&self.trace.u0, self.h, s, 0, true)[0]
    }

    /// `u_s(x, t)` from its characteristic representation.
    pub fn u_smooth(&self, cfg: &ModelConfig, x: f64, t: f64) -> f64 {
        let (s, s1) = char_integrals(cfg, x, t, self.char_steps);
        if t <= x {
            s1 + s * cfg.a_r(x - t)
        } else {
            s1 + s * self.boundary_value(t - x)
        }
    }

    /// `⟨u, φ⟩`: trapezoid pairing of the smooth grid field plus every line term.
    pub fn pairing(&self, cfg: &ModelConfig, phi: &TestFn) -> f64 {
        self.smooth_pairing(phi) + self.singular_pairing(cfg, phi)
    }

    pub fn smooth_pairing(&self, phi: &TestFn) -> f64 {
        let sp = phi.support();
        let h = self.h;
        let i0 = (sp.x0 / h).floor().max(0.0) as usize;
        let i1 = ((sp.x1 / h).ceil() as usize).min(self.nx);
        let k0 = (sp.t0 / h).floor().max(0.0) as usize;
        let k1 = ((sp.t1 / h).ceil() as usize).min(self.nt);
        let mut sum = 0.0;
        for k in k0..=k1 {
            let wk = if k == 0 || k == self.nt { 0.5 } else { 1.0 };
            for i in i0..=i1 {
                let wi = if i == 0 || i == self.nx { 0.5 } else { 1.0 };
                let f = phi.eval(i as f64 * h, k as f64 * h);
                if f != 0.0 {
                    sum += wk * wi * f * self.value(i, k);
                }
            }
        }
        sum * h * h
    }

    pub fn singular_pairing(&self, cfg: &ModelConfig, phi: &TestFn) -> f64 {
        self.terms.iter().map(|t| crate::singular::evaluate_pairing(t, cfg, phi, self.char_steps)).sum()
    }

    /// `⟨v, ψ⟩` with `v = ∫ b u dx`: trapezoid on `v_r` plus the time atoms.
    pub fn v_pairing(&self, psi: &TimeTest) -> f64 {
        let h = self.h;
        let n = self.trace.v_r.len();
        let smooth: f64 = self
            .trace
            .v_r
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
                w * v * psi.eval(k as f64 * h)
            })
            .sum::<f64>()
            * h;
        smooth + self.v_singular_pairing(psi)
    }

    pub fn v_singular_pairing(&self, psi: &TimeTest) -> f64 {
        self.crossings.iter().map(|c| pair_time_atoms(&c.coefficients, c.time, psi)).sum()
    }

    /// Term carried by a line, if any.
    pub fn term(&self, line: usize) -> Option<&SingularTerm> {
        self.terms.iter().find(|t| t.line_index == line)
    }
}

/// Fornberg weights `w[j][m]` for the `m`-th derivative at `z` from `nodes`.
pub fn fornberg(z: f64, nodes: &[f64], order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c
}

/// Derivatives `0..=order` at `s` of the Lagrange interpolant through the samples
/// `data[q]` at `q h`, using `2·STENCIL_HALF_WIDTH + 1` nodes with index below `data.len()`.
/// Samples at negative indices are zero when `zero_below` is set; otherwise the
/// stencil is shifted to start at 0.
fn interpolate(data: &[f64], h: f64, s: f64, order: usize, zero_below: bool) -> Vec<f64> {
    let w = STENCIL_HALF_WIDTH as i64;
    let avail = data.len() as i64;
    let centre = (s / h).round() as i64;
    let mut hi = (centre + w).min(avail - 1);
    let mut lo = hi - 2 * w;
    if !zero_below && lo < 0 {
        lo = 0;
        hi = (2 * w).min(avail - 1);
    }
    let nodes: Vec<f64> = (lo..=hi).map(|q| q as f64).collect();
    let weights = fornberg(s / h, &nodes, order);
    let mut out = vec![0.0; order + 1];
    for (j, q) in (lo..=hi).enumerate() {
        let v = if q < 0 { 0.0 } else { data[q as usize] };
        for (m, o) in out.iter_mut().enumerate() {
            *o += weights[j][m] * v;
        }
    }
    for (m, o) in out.iter_mut().enumerate() {
        *o /= h.powi(m as i32);
    }
    out
}

/// Derivatives `0..=order` of a univariate function of a jet argument.
fn jet_derivs(j: &Jet, order: usize) -> Vec<f64> {
    (0..=order).map(|k| j.derivative(k, 0)).collect()
}

fn grid_step(cfg: &ModelConfig, opts: &SolveOptions) -> (f64, usize) {
    let requested = opts
        .grid_step
        .or(cfg.numerics.grid_step)
        .unwrap_or(cfg.horizon / 4096.0);
    let n = (cfg.max_age / requested).ceil().max(1.0) as usize;
    (cfg.max_age / n as f64, n)
}

/// One RK4 step of `Λ' = p`, `W' = p W + g` from values at start, midpoint and end.
#[inline]
fn rk4_step(lam: f64, w: f64, h: f64, pg0: (f64, f64), pgm: (f64, f64), pg1: (f64, f64)) -> (f64, f64) {
    let f = |(p, g): (f64, f64), w: f64| p * w + g;
    let k1 = f(pg0, w);
    let k2 = f(pgm, w + 0.5 * h * k1);
    let k3 = f(pgm, w + 0.5 * h * k2);
    let k4 = f(pg1, w + h * k3);
    (
        lam + h / 6.0 * (pg0.0 + 4.0 * pgm.0 + pg1.0),
        w + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4),
    )
}

/// Smooth part on region 0 alone: `S1 + S·a_r(x - t)` on the grid nodes with `x >= t`.
///
/// Returns rows `k = 0..=nt`, row `k` holding nodes `i = k..=nx`.
pub fn solve_omega0(cfg: &ModelConfig, grid_step: Option<f64>) -> (f64, Vec<Vec<f64>>) {
    let opts = SolveOptions { grid_step, skip_residual: true };
    let (h, nx) = grid_step_for(cfg, &opts);
    let nt = ((cfg.horizon / h) + 1e-9).floor() as usize;
    let base: Vec<f64> = (0..=nx).map(|j| cfg.a_r(j as f64 * h)).collect();
    let mut lam = vec![0.0; nx + 1];
    let mut w = vec![0.0; nx + 1];
    let mut pg: Vec<(f64, f64)> = (0..=nx).map(|i| pg_at(cfg, i as f64 * h, 0.0)).collect();
    let mut rows = Vec::with_capacity(nt + 1);
    rows.push(base.clone());
    for k in 1..=nt.min(nx) {
        let t = k as f64 * h;
        let next: Vec<(f64, f64)> = (0..=nx).map(|i| pg_at(cfg, i as f64 * h, t)).collect();
        for j in 0..=nx - k {
            // Characteristic j sits at node j + k - 1 on the previous row.
            let i = j + k - 1;
            let mid = pg_at(cfg, (i as f64 + 0.5) * h, t - 0.5 * h);
            let (l, v) = rk4_step(lam[j], w[j], h, pg[i], mid, next[i + 1]);
            lam[j] = l;
            w[j] = v;
        }
        rows.push((0..=nx - k).map(|j| w[j] + lam[j].exp() * base[j]).collect());
        pg = next;
    }
    (h, rows)
}

fn grid_step_for(cfg: &ModelConfig, opts: &SolveOptions) -> (f64, usize) {
    grid_step(cfg, opts)
}

#[inline]
fn pg_at(cfg: &ModelConfig, x: f64, t: f64) -> (f64, f64) {
    (cfg.p(x, t), cfg.g(x, t))
}

/// Ω0 contribution to `v_r(t)` and the time atoms of initial lines, by adaptive quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct I0 {
    pub smooth: f64,
    pub atoms: Vec<CrossingAtoms>,
}

/// `I_0(t)`: `∫_t^L b_r u_s dx` over region 0, fertility atoms at ages above `t`,
/// and the initial lines; plus the time atoms where initial lines cross fertility ages.
pub fn compute_i0(t: f64, cfg: &ModelConfig, quad: &Quadrature) -> Result<I0> {
    let steps = cfg.numerics.char_steps;
    let l = cfg.max_age;
    let integral = if t < l {
        quad.integrate(
            |x| {
                let b = cfg.b_r(x);
                if b == 0.0 {
                    return 0.0;
                }
                let (s, s1) = char_integrals(cfg, x, t, steps);
                b * (s1 + s * cfg.a_r(x - t))
            },
            t,
            l,
        )?
    } else {
        0.0
    };
    let mut smooth = integral;
    for f in &cfg.fertility_atoms {
        if f.location > t {
            let n = f.order as usize;
            let x = Jet::univariate(n, f.location);
            let tj = Jet::constant(n, 0, t);
            let (s, s1) = char_integrals(cfg, x, tj, steps);
            let u = s1 + s * cfg.a_r(x - tj);
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            smooth += sign * f.coefficient * u.derivative(n, 0);
        }
    }
    let mut atoms = Vec::new();
    for (idx, a) in cfg.initial_atoms.iter().enumerate() {
        let consts = initial_line_constants(a);
        smooth += line_term(cfg, &consts, -a.location, t, steps);
        for (kf, f) in cfg.fertility_atoms.iter().enumerate() {
            let time = f.location - a.location;
            if time > 0.0 && time < cfg.horizon {
                let sigma = sigma_jet(cfg, f.location, time, f.order as usize, a.order as usize, steps);
                atoms.push(CrossingAtoms {
                    time,
                    line: idx,
                    fertility: kf,
                    coefficients: crossing_coeffs(f.coefficient, f.order, &consts, &sigma),
                });
            }
        }
    }
    Ok(I0 { smooth, atoms })
}

/// `Σ_i c_i ∂_x^i [b_r S](t - τ, t)`, the pairing of `b_r` with a line term.
fn line_term(cfg: &ModelConfig, consts: &[f64], tau: f64, t: f64, steps: usize) -> f64 {
    let x = t - tau;
    if consts.is_empty() || x <= 0.0 || x >= cfg.max_age {
        return 0.0;
    }
    let deg = consts.len() - 1;
    if deg == 0 {
        let b = cfg.b_r(x);
        if b == 0.0 {
            return 0.0;
        }
        let (s, _) = char_integrals(cfg, x, t, steps);
        return consts[0] * b * s;
    }
    let xj = Jet::univariate(deg, x);
    let b = cfg.b_r(xj);
    if (0..=deg).all(|i| b.get(i, 0) == 0.0) {
        return 0.0;
    }
    let (s, _) = char_integrals(cfg, xj, Jet::constant(deg, 0, t), steps);
    let bs = b * s;
    consts.iter().enumerate().map(|(i, c)| c * bs.derivative(i, 0)).sum()
}

struct PendingLine {
    index: usize,
    line: CharLine,
    done: bool,
    constants: Vec<f64>,
}

/// Run the hybrid solver.
pub fn solve(cfg: &ModelConfig, opts: &SolveOptions) -> Result<HybridSolution> {
    let support = build_singular_support(cfg)?;
    let (h, nx) = grid_step(cfg, opts);
    let tol_event = cfg.event_tolerance();
    let mut nt = ((cfg.horizon / h) + 1e-9).floor() as usize;
    let distinct = support.distinct_times(tol_event);
    let mut horizon_shrunk = false;
    if distinct
        .iter()
        .any(|&e| (e - cfg.horizon).abs() <= tol_event || (e - nt as f64 * h).abs() <= tol_event)
    {
        nt -= 1;
        horizon_shrunk = true;
    }
    if nt < 2 {
        return Err(Error::Refinement(format!("grid step {h} leaves fewer than two time steps")));
    }
    let horizon = nt as f64 * h;
    let steps = cfg.numerics.char_steps;
    let tol_atom = cfg.numerics.atom_tol;

    let epsilon = detect_fertility_gap(cfg);
    let y_min = cfg.fertility_atoms.iter().map(|a| a.location).fold(f64::INFINITY, f64::min);
    let delay = 0.5 * epsilon.min(y_min);
    let needs_stencil = !cfg.fertility_atoms.is_empty() || !cfg.boundary_atoms.is_empty();
    let w = STENCIL_HALF_WIDTH as f64;
    if needs_stencil && (w + 1.0) * h > delay.min(y_min) {
        return Err(Error::Refinement(format!(
            "grid step {h} too coarse: need ({} + 1)·h <= {:.6} (half the fertility gap or the youngest fertility age)",
            STENCIL_HALF_WIDTH,
            delay.min(y_min)
        )));
    }

    let mut pending: Vec<PendingLine> = support
        .lines
        .iter()
        .enumerate()
        .filter(|(_, l)| l.offset < horizon)
        .map(|(index, line)| PendingLine { index, line: *line, done: false, constants: Vec::new() })
        .collect();
    pending.sort_by(|a, b| a.line.offset.total_cmp(&b.line.offset).then(a.index.cmp(&b.index)));
    let finalize = |pending: &mut Vec<PendingLine>, idx: usize, v_r: &[f64], crossings: &mut Vec<CrossingAtoms>| {
        let line = pending[idx].line;
        let constants = match line.origin {
            LineOrigin::InitialAtom(a) => initial_line_constants(&cfg.initial_atoms[a]),
            LineOrigin::BoundaryAtom(j) => {
                let atom = &cfg.boundary_atoms[j];
                let derivs = interpolate(v_r, h, line.offset, atom.order as usize, false);
                emit_boundary_singularity(EmissionSource::BoundaryAtom { atom, v_r_derivs: &derivs })
            }
            LineOrigin::Reflection(kf) => {
                let parent = line.parent.expect("reflection lines have a parent");
                let parent_consts = pending
                    .iter()
                    .find(|p| p.index == parent)
                    .map(|p| {
                        debug_assert!(p.done);
                        p.constants.clone()
                    })
                    .unwrap_or_default();
                let f = &cfg.fertility_atoms[kf];
                let atoms = if parent_consts.is_empty() {
                    Vec::new()
                } else {
                    let sigma = sigma_jet(
                        cfg,
                        f.location,
                        line.offset,
                        f.order as usize,
                        parent_consts.len() - 1,
                        steps,
                    );
                    prune(crossing_coeffs(f.coefficient, f.order, &parent_consts, &sigma), tol_atom)
                };
                crossings.push(CrossingAtoms {
                    time: line.offset,
                    line: parent,
                    fertility: kf,
                    coefficients: atoms.clone(),
                });
                if atoms.is_empty() {
                    Vec::new()
                } else {
                    let cr = cfg.c_r(Jet::univariate(atoms.len() - 1, line.offset));
                    let derivs = jet_derivs(&cr, atoms.len() - 1);
                    emit_boundary_singularity(EmissionSource::Reflection { atoms: &atoms, c_r_derivs: &derivs })
                }
            }
        };
        pending[idx].constants = prune(constants, tol_atom);
        pending[idx].done = true;
    };
    let mut crossings: Vec<CrossingAtoms> = Vec::new();

    let stride = nx + 1;
    let mut u = vec![0.0; (nt + 1) * stride];
    let mut v_r = Vec::with_capacity(nt + 1);
    let mut b_trace = Vec::with_capacity(nt + 1);
    let mut integral_part = Vec::with_capacity(nt + 1);
    let a_base: Vec<f64> = (0..=nx).map(|j| cfg.a_r(j as f64 * h)).collect();
    let b_nodes: Vec<f64> = (0..=nx).map(|i| cfg.b_r(i as f64 * h)).collect();

    // State of the characteristic through node i of the current row.
    let mut lam = vec![0.0; stride];
    let mut wst = vec![0.0; stride];
    let mut pg: Vec<(f64, f64)> = (0..=nx).map(|i| pg_at(cfg, i as f64 * h, 0.0)).collect();

    for k in 0..=nt {
        let t = k as f64 * h;
        if k > 0 {
            let next: Vec<(f64, f64)> = (0..=nx).map(|i| pg_at(cfg, i as f64 * h, t)).collect();
            for i in (0..nx).rev() {
                let mid = pg_at(cfg, (i as f64 + 0.5) * h, t - 0.5 * h);
                let (l, v) = rk4_step(lam[i], wst[i], h, pg[i], mid, next[i + 1]);
                lam[i + 1] = l;
                wst[i + 1] = v;
            }
            lam[0] = 0.0;
            wst[0] = 0.0;
            pg = next;
        }
        let row = &mut u[k * stride..(k + 1) * stride];
        for i in 0..=nx {
            let base = if i >= k { a_base[i - k] } else if i == 0 { 0.0 } else { b_trace[k - i] };
            row[i] = wst[i] + lam[i].exp() * base;
        }

        // Finalize line constants whose inputs are now available. Boundary
        // lines read the trace on both sides of their start time.
        for idx in 0..pending.len() {
            let wait = match pending[idx].line.origin {
                LineOrigin::InitialAtom(_) => 0.0,
                LineOrigin::Reflection(_) => pending[idx].line.offset,
                LineOrigin::BoundaryAtom(_) => pending[idx].line.offset + delay,
            };
            if !pending[idx].done && wait <= t + 1e-12 * h {
                finalize(&mut pending, idx, &v_r, &mut crossings);
            }
        }

        // Regular part of v(t_k).
        let mut integral = 0.0;
        for i in 1..=nx {
            let wgt = if i == nx { 0.5 } else { 1.0 };
            integral += wgt * b_nodes[i] * row[i];
        }
        integral *= h;
        let mut rest = integral;
        for f in &cfg.fertility_atoms {
            rest += fertility_term(cfg, f.coefficient, f.order as usize, f.location, t, &b_trace, h, steps);
        }
        for p in pending.iter().filter(|p| p.done) {
            rest += line_term(cfg, &p.constants, p.line.offset, t, steps);
        }
        let (vr, b0) = if k == 0 {
            let end = 0.5 * h * b_nodes[0] * row[0];
            let vr = rest + end;
            (vr, cfg.c_r(0.0) * vr)
        } else {
            let cr = cfg.c_r(t);
            let vr = rest / (1.0 - 0.5 * h * b_nodes[0] * cr);
            (vr, cr * vr)
        };
        if !vr.is_finite() {
            return Err(Error::Numeric {
                message: format!("non-finite v_r at t = {t}"),
                residual: f64::NAN,
            });
        }
        if k > 0 {
            row[0] = b0;
        }
        integral_part.push(integral + 0.5 * h * b_nodes[0] * row[0]);
        v_r.push(vr);
        b_trace.push(b0);
    }

    for idx in 0..pending.len() {
        if !pending[idx].done {
            finalize(&mut pending, idx, &v_r, &mut crossings);
        }
    }
    let terms: Vec<SingularTerm> = pending
        .iter()
        .map(|p| SingularTerm { line_index: p.index, line: p.line, constants: p.constants.clone() })
        .collect();
    crossings.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.line.cmp(&b.line)));
    let ledger = propagate_orders(&support, cfg, Some(&terms));
    let region_list = regions(&support.events, cfg);
    let segments = provenance(&distinct, epsilon, horizon);
    let times: Vec<f64> = (0..=nt).map(|k| k as f64 * h).collect();
    let corner = {
        let g = cfg.g(Jet::var_x(2, 2, 0.0), Jet::var_y(2, 2, 0.0));
        (0..=2).any(|a| (0..=2).any(|b| g.get(a, b).abs() > cfg.numerics.tolerance))
    };
    let stitches = distinct
        .iter()
        .filter(|&&e| e > (w + 1.0) * h && e < horizon - (w + 1.0) * h)
        .map(|&e| stitch(&v_r, h, e))
        .collect();

    let mut sol = HybridSolution {
        h,
        nx,
        nt,
        horizon,
        u,
        trace: BoundaryTrace { times, v_r, u0: b_trace, segments },
        support,
        regions: region_list,
        terms,
        crossings,
        ledger,
        diagnostics: Diagnostics {
            grid_step: h,
            epsilon,
            activation_delay: delay,
            horizon_shrunk,
            corner_discontinuity: corner,
            residual: 0.0,
            residual_bound: 0.0,
            stitches,
        },
        char_steps: steps,
    };
    if !opts.skip_residual {
        residual_check(cfg, &mut sol, &integral_part)?;
    }
    Ok(sol)
}

/// `e (-1)^n ∂_x^n u_s(y, t)`.
#[allow(clippy::too_many_arguments)]
fn fertility_term(
    cfg: &ModelConfig,
    e: f64,
    n: usize,
    y: f64,
    t: f64,
    b_trace: &[f64],
    h: f64,
    steps: usize,
) -> f64 {
    let sign = if n % 2 == 0 { e } else { -e };
    if t <= y {
        if n == 0 {
            let (s, s1) = char_integrals(cfg, y, t, steps);
            return sign * (s1 + s * cfg.a_r(y - t));
        }
        let x = Jet::univariate(n, y);
        let tj = Jet::constant(n, 0, t);
        let (s, s1) = char_integrals(cfg, x, tj, steps);
        return sign * (s1 + s * cfg.a_r(x - tj)).derivative(n, 0);
    }
    let bd = interpolate(b_trace, h, t - y, n, true);
    if n == 0 {
        let (s, s1) = char_integrals(cfg, y, t, steps);
        return sign * (s1 + s * bd[0]);
    }
    let x = Jet::univariate(n, y);
    let tj = Jet::constant(n, 0, t);
    let (s, s1) = char_integrals(cfg, x, tj, steps);
    let b = (tj - x).compose(&bd);
    sign * (s1 + s * b).derivative(n, 0)
}

fn provenance(events: &[f64], epsilon: f64, horizon: f64) -> Vec<TraceSegment> {
    let below: Vec<f64> = events.iter().copied().filter(|&e| e < horizon).collect();
    let mut out = Vec::new();
    let first = below.first().copied().unwrap_or(horizon);
    out.push(TraceSegment { start: 0.0, end: first, stage: Stage::Volterra });
    for (i, &e) in below.iter().enumerate() {
        let next = below.get(i + 1).copied().unwrap_or(horizon);
        let strip = epsilon.min(0.5 * (next - e));
        out.push(TraceSegment { start: e, end: e + strip, stage: Stage::EventExtension });
        out.push(TraceSegment { start: e + strip, end: next, stage: Stage::Renewal });
    }
    out
}

fn one_sided(data: &[f64], h: f64, z: f64, left: bool) -> [f64; 3] {
    let w = STENCIL_HALF_WIDTH as i64 * 2;
    let base = if left { (z / h).floor() as i64 - w } else { (z / h).ceil() as i64 };
    let nodes: Vec<f64> = (base..=base + w).map(|q| q as f64).collect();
    let weights = fornberg(z / h, &nodes, 2);
    let mut out = [0.0; 3];
    for (j, q) in (base..=base + w).enumerate() {
        for (m, o) in out.iter_mut().enumerate() {
            *o += weights[j][m] * data[q as usize] / h.powi(m as i32);
        }
    }
    out
}

fn stitch(v_r: &[f64], h: f64, e: f64) -> StitchReport {
    let w = 2 * STENCIL_HALF_WIDTH as i64;
    let q = (e / h).ceil() as i64;
    let report = |jumps| StitchReport { time: e, jumps };
    if (e / h).floor() as i64 - w < 0 || q + w >= v_r.len() as i64 {
        return report([0.0; 3]);
    }
    let l = one_sided(v_r, h, e, true);
    let r = one_sided(v_r, h, e, false);
    report([(l[0] - r[0]).abs(), (l[1] - r[1]).abs(), (l[2] - r[2]).abs()])
}

/// Recompute `∫ b_r u_s dx` at sample rows by adaptive quadrature of the
/// characteristic representation and compare with the marched values.
fn residual_check(cfg: &ModelConfig, sol: &mut HybridSolution, integral_part: &[f64]) -> Result<()> {
    let quad = Quadrature::from_numerics(&cfg.numerics);
    let samples = 24usize.min(sol.nt);
    let mut worst = 0.0f64;
    for s in 1..=samples {
        let k = s * sol.nt / samples;
        let t = k as f64 * sol.h;
        let l = cfg.max_age;
        let f = |x: f64| {
            let b = cfg.b_r(x);
            if b == 0.0 {
                0.0
            } else {
                b * sol.u_smooth(cfg, x, t)
            }
        };
        let split = t.min(l);
        let value = quad.integrate(f, 0.0, split)? + quad.integrate(f, split, l)?;
        worst = worst.max((value - integral_part[k]).abs());
    }
    let scale = sol.trace.v_r.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let bound = 10.0 * cfg.numerics.residual_tol * scale;
    sol.diagnostics.residual = worst;
    sol.diagnostics.residual_bound = bound;
    if worst > bound && !sol.diagnostics.corner_discontinuity {
        return Err(Error::Numeric {
            message: format!("integral equation residual exceeds {bound:.3e}; refine the grid"),
            residual: worst,
        });
    }
    Ok(())
}
