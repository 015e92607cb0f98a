//! Brute-force check: mollify every Dirac atom, solve the regular problem on a
//! unit-CFL grid, and compare weak pairings with the hybrid solver.

use rayon::prelude::*;
use serde::Serialize;

use crate::characteristics::build_singular_support;
use crate::error::{Error, Result};
use crate::jet::{binomial, factorial, Jet};
use crate::model::{DataAtom, ModelConfig};
use crate::smooth_solver::HybridSolution;
use crate::testfn::{TestFn, TimeTest};

/// Bump `C (1 - s²)^q` on `[-1, 1]` with unit mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `q = 4`, enough smoothness for derivative lifts up to order 3.
    Poly4,
    /// `q = 6`, used to check that limits do not depend on the profile.
    Poly6,
}

impl Profile {
    fn power(self) -> usize {
        match self {
            Profile::Poly4 => 4,
            Profile::Poly6 => 6,
        }
    }

    fn norm(self) -> f64 {
        match self {
            Profile::Poly4 => 315.0 / 256.0,
            Profile::Poly6 => 3003.0 / 2048.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mollifier {
    pub profile: Profile,
    pub scale: f64,
}

impl Mollifier {
    pub fn new(profile: Profile, scale: f64) -> Self {
        Mollifier { profile, scale }
    }

    /// `k`-th derivative of the profile at `s`.
    pub fn profile_derivative(&self, k: u32, s: f64) -> f64 {
        if s.abs() >= 1.0 {
            return 0.0;
        }
        let q = self.profile.power();
        let k = k as usize;
        let mut sum = 0.0;
        for j in 0..=q {
            let deg = 2 * j;
            if deg < k {
                continue;
            }
            let falling: f64 = ((deg - k + 1)..=deg).map(|v| v as f64).product();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * binomial(q, j) * falling * s.powi((deg - k) as i32);
        }
        self.profile.norm() * sum
    }

    /// Approximation of `δ^(k)(z)`: `ε^{-(k+1)} ρ^(k)(z / ε)`.
    pub fn delta(&self, k: u32, z: f64) -> f64 {
        let e = self.scale;
        self.profile_derivative(k, z / e) / e.powi(k as i32 + 1)
    }
}

/// Regularized solution on a grid with `h_x = h_t = h`.
#[derive(Debug, Clone)]
pub struct GridSolution {
    pub h: f64,
    pub nx: usize,
    pub nt: usize,
    pub eps: f64,
    /// All rows when stored, row-major.
    pub values: Option<Vec<f64>>,
    /// `v_ε(t_k) = ∫ b_ε u_ε dx`.
    pub v: Vec<f64>,
    /// `u_ε(0, t_k)`.
    pub boundary: Vec<f64>,
    /// Streamed pairings with the requested test functions.
    pub pairings: Vec<f64>,
    pub min_value: f64,
}

impl GridSolution {
    pub fn value(&self, i: usize, k: usize) -> Option<f64> {
        self.values.as_ref().map(|v| v[k * (self.nx + 1) + i])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub profile: Profile,
    /// Keep every row in memory.
    pub store: bool,
    /// Shorter horizon than the configuration's.
    pub horizon: Option<f64>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { profile: Profile::Poly4, store: false, horizon: None }
    }
}

fn mollified(atoms: &[DataAtom], m: &Mollifier, z: f64) -> f64 {
    atoms
        .iter()
        .filter(|a| (z - a.location).abs() < m.scale)
        .map(|a| a.coefficient * m.delta(a.order, z - a.location))
        .sum()
}

/// Oracle horizon covering the first two generations of the singular support.
pub fn default_oracle_horizon(cfg: &ModelConfig) -> Result<f64> {
    let sup = build_singular_support(cfg)?;
    let first_late = sup
        .events
        .iter()
        .filter(|e| e.generation >= 3)
        .map(|e| e.time)
        .fold(f64::INFINITY, f64::min);
    if first_late.is_finite() {
        let before = sup.events.iter().filter(|e| e.time < first_late).map(|e| e.time).fold(0.0, f64::max);
        Ok(cfg.horizon.min(0.5 * (before + first_late)))
    } else {
        Ok(cfg.horizon)
    }
}

/// Solve with every atom replaced by its mollification at scale `eps`, keeping all rows.
pub fn solve_regularized(cfg: &ModelConfig, eps: f64, h: f64) -> Result<GridSolution> {
    solve_regularized_with(cfg, eps, h, &OracleOptions { store: true, ..Default::default() }, &[])
}

/// Solve the regularized problem and stream pairings with `tests`.
pub fn solve_regularized_with(
    cfg: &ModelConfig,
    eps: f64,
    h_req: f64,
    opts: &OracleOptions,
    tests: &[TestFn],
) -> Result<GridSolution> {
    if !(h_req > 0.0 && eps > 0.0) {
        return Err(Error::Parameter(format!("need positive ε and h, got ε = {eps}, h = {h_req}")));
    }
    let nx = (cfg.max_age / h_req).ceil() as usize;
    let h = cfg.max_age / nx as f64;
    if eps < 4.0 * h * (1.0 - 1e-9) {
        return Err(Error::Parameter(format!(
            "ε = {eps} does not resolve the mollifier: need ε >= 4h = {}",
            4.0 * h
        )));
    }
    let horizon = opts.horizon.unwrap_or(cfg.horizon).min(cfg.horizon);
    let sup = build_singular_support(cfg)?;
    let times: Vec<f64> = sup
        .distinct_times(cfg.event_tolerance())
        .into_iter()
        .filter(|&t| t < horizon)
        .collect();
    let gap = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if eps >= 0.5 * gap {
        return Err(Error::Parameter(format!("ε = {eps} is not below half the minimal event gap {gap}")));
    }
    for a in cfg.initial_atoms.iter().chain(&cfg.fertility_atoms) {
        if a.location - eps <= 0.0 || a.location + eps >= cfg.max_age {
            return Err(Error::Parameter(format!("ε = {eps} pushes the atom at {} out of (0, L)", a.location)));
        }
    }
    let moll = Mollifier::new(opts.profile, eps);
    let nt = ((horizon / h) + 1e-9).floor() as usize;
    let xs: Vec<f64> = (0..=nx).map(|i| i as f64 * h).collect();
    let b: Vec<f64> = xs.iter().map(|&x| cfg.b_r(x) + mollified(&cfg.fertility_atoms, &moll, x)).collect();
    let c_at = |t: f64| cfg.c_r(t) + mollified(&cfg.boundary_atoms, &moll, t);

    let mut u: Vec<f64> = xs.iter().map(|&x| cfg.a_r(x) + mollified(&cfg.initial_atoms, &moll, x)).collect();
    let mut pg: Vec<(f64, f64)> = xs.iter().map(|&x| (cfg.p(x, 0.0), cfg.g(x, 0.0))).collect();
    let mut values = opts.store.then(|| Vec::with_capacity((nt + 1) * (nx + 1)));
    let mut v = Vec::with_capacity(nt + 1);
    let mut boundary = Vec::with_capacity(nt + 1);
    let mut pairings = vec![0.0; tests.len()];
    let mut min_value = f64::INFINITY;
    let ranges: Vec<(usize, usize, usize, usize)> = tests
        .iter()
        .map(|f| {
            let s = f.support();
            (
                ((s.x0 / h).floor().max(0.0) as usize).min(nx),
                ((s.x1 / h).ceil().max(0.0) as usize).min(nx),
                ((s.t0 / h).floor().max(0.0) as usize).min(nt),
                ((s.t1 / h).ceil().max(0.0) as usize).min(nt),
            )
        })
        .collect();

    let trapz = |row: &[f64]| -> f64 {
        let mut s = 0.5 * (b[0] * row[0] + b[nx] * row[nx]);
        for i in 1..nx {
            s += b[i] * row[i];
        }
        s * h
    };

    for k in 0..=nt {
        let t = k as f64 * h;
        if k > 0 {
            let next: Vec<(f64, f64)> = xs.iter().map(|&x| (cfg.p(x, t), cfg.g(x, t))).collect();
            for i in (0..nx).rev() {
                let (p0, g0) = pg[i];
                let (p1, g1) = next[i + 1];
                let decay = (0.5 * h * (p0 + p1)).exp();
                u[i + 1] = u[i] * decay + 0.5 * h * (g0 * decay + g1);
            }
            pg = next;
            let c = c_at(t);
            let mut rest = 0.5 * b[nx] * u[nx];
            for i in 1..nx {
                rest += b[i] * u[i];
            }
            rest *= h;
            u[0] = c * rest / (1.0 - 0.5 * h * b[0] * c);
        }
        let vk = trapz(&u);
        if !vk.is_finite() {
            return Err(Error::Numeric { message: format!("oracle diverged at t = {t}"), residual: f64::NAN });
        }
        v.push(vk);
        boundary.push(u[0]);
        min_value = u.iter().fold(min_value, |m, x| m.min(*x));
        let wk = if k == 0 || k == nt { 0.5 } else { 1.0 };
        for (j, f) in tests.iter().enumerate() {
            let (i0, i1, k0, k1) = ranges[j];
            if k < k0 || k > k1 {
                continue;
            }
            let mut acc = 0.0;
            for i in i0..=i1 {
                let phi = f.eval(xs[i], t);
                if phi != 0.0 {
                    let wi = if i == 0 || i == nx { 0.5 } else { 1.0 };
                    acc += wi * phi * u[i];
                }
            }
            pairings[j] += wk * acc * h * h;
        }
        if let Some(vals) = values.as_mut() {
            vals.extend_from_slice(&u);
        }
    }
    Ok(GridSolution { h, nx, nt, eps, values, v, boundary, pairings, min_value })
}

/// Tensor-trapezoid pairing of a stored grid solution with `φ`.
pub fn weak_pairing(sol: &GridSolution, phi: &TestFn) -> Result<f64> {
    let vals = sol
        .values
        .as_ref()
        .ok_or_else(|| Error::Parameter("grid solution was solved without storing rows".into()))?;
    let h = sol.h;
    let mut sum = 0.0;
    for k in 0..=sol.nt {
        let wk = if k == 0 || k == sol.nt { 0.5 } else { 1.0 };
        for i in 0..=sol.nx {
            let f = phi.eval(i as f64 * h, k as f64 * h);
            if f != 0.0 {
                let wi = if i == 0 || i == sol.nx { 0.5 } else { 1.0 };
                sum += wk * wi * f * vals[k * (sol.nx + 1) + i];
            }
        }
    }
    Ok(sum * h * h)
}

/// Trapezoid pairing `∫ v_ε ψ dt`.
pub fn v_pairing(sol: &GridSolution, psi: &TimeTest) -> f64 {
    let n = sol.v.len();
    sol.v
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
            w * v * psi.eval(k as f64 * sol.h)
        })
        .sum::<f64>()
        * sol.h
}

/// Recover `F_0..F_{K-1}` of `Σ F_k δ^(k)(t - t*)` from its pairings with
/// `bump(t) (t - t*)^j`, `j < K`, assuming `F_k = 0` for `k >= K`.
pub fn extract_atoms(time: f64, t0: f64, t1: f64, pairings: &[f64]) -> Vec<f64> {
    let k_max = pairings.len();
    if k_max == 0 {
        return Vec::new();
    }
    let w = crate::testfn::bump(Jet::univariate(k_max - 1, time), t0, t1);
    let mut f = vec![0.0; k_max];
    for j in (0..k_max).rev() {
        let mut rest = pairings[j];
        for (k, fk) in f.iter().enumerate().skip(j + 1) {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            rest -= fk * sign * binomial(k, j) * factorial(j) * w.derivative(k - j, 0);
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        f[j] = rest / (sign * factorial(j) * w.derivative(0, 0));
    }
    f
}

/// Quantity compared between the oracle and the hybrid solver.
#[derive(Debug, Clone)]
pub enum Probe {
    /// `⟨u, φ⟩`.
    Field(TestFn),
    /// `⟨v, ψ⟩` with `v = ∫ b u dx`.
    Trace(TimeTest),
}

#[derive(Debug, Clone)]
pub struct ProbeCase {
    pub name: String,
    pub probe: Probe,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeResult {
    pub name: String,
    pub eps: Vec<f64>,
    pub pairings: Vec<f64>,
    pub extrapolated: f64,
    /// Observed convergence rate in `ε`, from the three finest scales.
    pub rate: Option<f64>,
    pub monotone: bool,
    pub hybrid: f64,
    pub rel_err: f64,
    /// Relative error of the pairing at the finest `ε`, without extrapolation.
    pub rel_err_finest: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub profile: Profile,
    pub step_ratio: f64,
    pub horizon: f64,
    pub results: Vec<ProbeResult>,
}

impl ConvergenceReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub profile: Profile,
    /// `ε / h`.
    pub step_ratio: f64,
    pub horizon: Option<f64>,
}

/// Richardson limit and observed rate from pairings at decreasing `ε`.
///
/// Uses the observed rate from the three finest scales when it is between
/// 0.5 and 4, otherwise first order.
pub fn extrapolate(eps: &[f64], values: &[f64]) -> (f64, Option<f64>, bool) {
    let n = eps.len();
    if n == 1 {
        return (values[0], None, true);
    }
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let monotone = diffs.iter().all(|d| *d >= 0.0) || diffs.iter().all(|d| *d <= 0.0);
    let rate = (n >= 3).then(|| {
        let (d1, d2) = (values[n - 2] - values[n - 3], values[n - 1] - values[n - 2]);
        (d1.abs() / d2.abs()).ln() / (eps[n - 3] / eps[n - 2]).ln()
    });
    let r = rate.filter(|r| r.is_finite() && (0.5..=4.0).contains(r)).unwrap_or(1.0);
    let (e1, e2) = (eps[n - 2], eps[n - 1]);
    let (p1, p2) = (values[n - 2], values[n - 1]);
    let q = (e1 / e2).powf(r);
    let limit = (q * p2 - p1) / (q - 1.0);
    (limit, rate.filter(|r| r.is_finite()), monotone)
}

/// Run the oracle at every `ε` (in parallel) and compare each probe with the hybrid solution.
pub fn convergence_report(
    cfg: &ModelConfig,
    hybrid: &HybridSolution,
    eps_seq: &[f64],
    battery: &[ProbeCase],
    opts: &ReportOptions,
) -> Result<ConvergenceReport> {
    let mut eps: Vec<f64> = eps_seq.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let horizon = match opts.horizon {
        Some(h) => h,
        None => default_oracle_horizon(cfg)?,
    };
    let fields: Vec<TestFn> = battery
        .iter()
        .filter_map(|c| match &c.probe {
            Probe::Field(f) => Some(f.clone()),
            Probe::Trace(_) => None,
        })
        .collect();
    let runs: Vec<Result<GridSolution>> = eps
        .par_iter()
        .map(|&e| {
            let o = OracleOptions { profile: opts.profile, store: false, horizon: Some(horizon) };
            solve_regularized_with(cfg, e, e / opts.step_ratio, &o, &fields)
        })
        .collect();
    let runs: Vec<GridSolution> = runs.into_iter().collect::<Result<_>>()?;

    let mut field_idx = 0;
    let results = battery
        .iter()
        .map(|case| {
            let (pairings, hyb): (Vec<f64>, f64) = match &case.probe {
                Probe::Field(f) => {
                    let p = runs.iter().map(|r| r.pairings[field_idx]).collect();
                    field_idx += 1;
                    (p, hybrid.pairing(cfg, f))
                }
                Probe::Trace(psi) => (runs.iter().map(|r| v_pairing(r, psi)).collect(), hybrid.v_pairing(psi)),
            };
            let (limit, rate, monotone) = extrapolate(&eps, &pairings);
            let denom = hyb.abs().max(1e-300);
            let rel_err = (limit - hyb).abs() / denom;
            let rel_err_finest = (pairings[pairings.len() - 1] - hyb).abs() / denom;
            ProbeResult {
                name: case.name.clone(),
                eps: eps.clone(),
                pairings,
                extrapolated: limit,
                rate,
                monotone,
                hybrid: hyb,
                rel_err,
                rel_err_finest,
                tolerance: case.tolerance,
                pass: rel_err <= case.tolerance,
            }
        })
        .collect();
    Ok(ConvergenceReport { profile: opts.profile, step_ratio: opts.step_ratio, horizon, results })
}

/// Default probes: a window across every initial line, one window in each of
/// the initial and boundary-driven regions, and time windows around each
/// early emission.
pub fn default_battery(cfg: &ModelConfig, hybrid: &HybridSolution, horizon: f64) -> Vec<ProbeCase> {
    let tol = if cfg.has_atoms() { 1e-3 } else { 1e-6 };
    let l = cfg.max_age;
    let mut out = Vec::new();
    for (i, a) in cfg.initial_atoms.iter().enumerate() {
        let span = (l - a.location).min(horizon);
        let (t0, t1) = (0.2 * span, 0.8 * span);
        out.push(ProbeCase {
            name: format!("initial_line_{i}"),
            probe: Probe::Field(TestFn::bump(a.location + 0.1 * span, a.location + 0.9 * span, t0, t1)),
            tolerance: tol,
        });
    }
    let w = l.min(horizon);
    out.push(ProbeCase {
        name: "initial_region".into(),
        probe: Probe::Field(TestFn::bump(0.55 * l, 0.95 * l, 0.05 * w, 0.45 * w)),
        tolerance: tol,
    });
    let t_mid = 0.6 * horizon;
    let x_mid = (0.3 * horizon).min(0.5 * l);
    out.push(ProbeCase {
        name: "boundary_region".into(),
        probe: Probe::Field(TestFn::bump(0.5 * x_mid, 1.5 * x_mid, t_mid - 0.5 * x_mid, t_mid + 0.5 * x_mid)),
        tolerance: tol,
    });
    let times: Vec<f64> = hybrid.crossings.iter().map(|c| c.time).collect();
    for (j, c) in hybrid.crossings.iter().enumerate() {
        if c.time >= horizon || c.coefficients.is_empty() {
            continue;
        }
        let gap = times
            .iter()
            .filter(|&&t| t != c.time)
            .map(|t| (t - c.time).abs())
            .fold(horizon - c.time, f64::min)
            .min(c.time);
        let r = 0.4 * gap;
        for power in 0..c.coefficients.len() as u32 {
            out.push(ProbeCase {
                name: format!("emission_{j}_moment_{power}"),
                probe: Probe::Trace(TimeTest { t0: c.time - r, t1: c.time + r, center: c.time, power }),
                tolerance: tol,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::SmoothFunction;
    use crate::quadrature::gauss_legendre;

    #[test]
    fn profiles_have_unit_mass_and_vanishing_first_moment() {
        for p in [Profile::Poly4, Profile::Poly6] {
            let m = Mollifier::new(p, 0.5);
            let mass = gauss_legendre(|z| m.delta(0, z), -0.5, 0.5, 20);
            let first = gauss_legendre(|z| z * m.delta(0, z), -0.5, 0.5, 20);
            // ⟨δ', z⟩ = -1
            let lift = gauss_legendre(|z| z * m.delta(1, z), -0.5, 0.5, 20);
            assert!((mass - 1.0).abs() < 1e-13);
            assert!(first.abs() < 1e-14);
            assert!((lift + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_cfl_transport_is_exact() {
        let mut cfg = ModelConfig::empty(1.0, 0.5);
        cfg.initial_atoms = vec![DataAtom::new(1.0, 0, 0.25)];
        let eps = 0.04;
        let sol = solve_regularized(&cfg, eps, 0.01).unwrap();
        let m = Mollifier::new(Profile::Poly4, eps);
        for k in [0usize, 10, 30] {
            for i in k..=sol.nx {
                let x = i as f64 * sol.h;
                let t = k as f64 * sol.h;
                let exact = m.delta(0, x - t - 0.25);
                assert!((sol.value(i, k).unwrap() - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_and_constant_pairings() {
        let cfg = ModelConfig::empty(1.0, 0.5);
        let sol = solve_regularized(&cfg, 0.01, 0.0025).unwrap();
        let phi = TestFn::bump(0.2, 0.6, 0.1, 0.4);
        assert_eq!(weak_pairing(&sol, &phi).unwrap(), 0.0);
        let mut ones = sol.clone();
        ones.values = Some(vec![1.0; (sol.nx + 1) * (sol.nt + 1)]);
        let exact = gauss_legendre(|x| gauss_legendre(|t| phi.eval(x, t), 0.1, 0.4, 40), 0.2, 0.6, 40);
        let err = (weak_pairing(&ones, &phi).unwrap() - exact).abs();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn resolution_precondition() {
        let mut cfg = ModelConfig::empty(1.0, 0.5);
        cfg.initial_atoms = vec![DataAtom::new(1.0, 0, 0.25)];
        let err = solve_regularized(&cfg, 0.01, 0.01).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn nonnegative_data_with_mortality_stays_nonnegative() {
        let mut cfg = ModelConfig::empty(1.0, 1.0);
        cfg.p = SmoothFunction::expression("-0.5 - 0.5*sin(x*t)^2").unwrap();
        cfg.g = SmoothFunction::expression("flat(t)*flat(x)").unwrap();
        cfg.b_r = SmoothFunction::expression("flat(x-0.1)*flat(1-x)").unwrap();
        cfg.c_r = SmoothFunction::expression("flat(t)").unwrap();
        cfg.initial_atoms = vec![DataAtom::new(1.0, 0, 0.3)];
        cfg.fertility_atoms = vec![DataAtom::new(0.5, 0, 0.5)];
        let sol = solve_regularized(&cfg, 0.02, 0.005).unwrap();
        assert!(sol.min_value >= 0.0);
    }

    #[test]
    fn atom_extraction_inverts_pairing() {
        let f = [0.3, -1.2, 0.7];
        let (t, t0, t1) = (0.5, 0.3, 0.8);
        let pairs: Vec<f64> = (0..3)
            .map(|j| crate::singular::pair_time_atoms(&f, t, &TimeTest { t0, t1, center: t, power: j }))
            .collect();
        let back = extract_atoms(t, t0, t1, &pairs);
        for (a, b) in f.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
    }

    #[test]
    fn richardson_recovers_linear_limit() {
        let eps = [0.08, 0.04, 0.02, 0.01];
        let vals: Vec<f64> = eps.iter().map(|e| 3.0 + 2.0 * e).collect();
        let (l, r, mono) = extrapolate(&eps, &vals);
        assert!((l - 3.0).abs() < 1e-12);
        assert!((r.unwrap() - 1.0).abs() < 1e-9);
        assert!(mono);
    }
}
