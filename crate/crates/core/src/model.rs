//! Problem definition, configuration ingestion and assumption checks.
//!
//! The model is
//!
//! ```text
//! (∂t + ∂x) u = p(x,t) u + g(x,t)            0 < x < L, t > 0
//! u(x, 0)     = a_r(x) + Σ d δ^(m)(x - x*)
//! u(0, t)     = (c_r(t) + Σ f δ^(l)(t - t_j)) ∫_0^L (b_r(x) + Σ e δ^(n)(x - y)) u dx
//! ```
//!
//! The configuration file is TOML with the sections `[domain]`, `[rates]`,
//! `[[atoms.initial]]`, `[[atoms.fertility]]`, `[[atoms.boundary]]` and
//! `[numerics]`; see the README for every key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::characteristics::trace_lines;
use crate::error::{Error, Result};
use crate::function::{Arg, FunctionSource, SmoothFunction, Table1, Table2};
use crate::jet::{factorial, Jet, Scalar};

/// One Dirac-derivative term `coefficient · δ^(order)(· - location)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataAtom {
    pub coefficient: f64,
    pub order: u32,
    pub location: f64,
}

impl DataAtom {
    pub fn new(coefficient: f64, order: u32, location: f64) -> Self {
        DataAtom { coefficient, order, location }
    }
}

/// Numerical settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    /// Derivative order up to which flatness conditions are checked.
    pub check_order: usize,
    /// Tolerance for the flatness and vanishing checks.
    pub tolerance: f64,
    /// Requested grid step of the hybrid solver; `None` means `T / 4096`.
    pub grid_step: Option<f64>,
    pub quad_abs_tol: f64,
    pub quad_rel_tol: f64,
    /// Relative residual allowed when the integral equation is re-substituted.
    pub residual_tol: f64,
    /// Event collision tolerance, relative to the horizon.
    pub event_tol: f64,
    /// Relative pruning threshold for singular constants.
    pub atom_tol: f64,
    /// RK4 steps used for characteristic integrals evaluated on jets.
    pub char_steps: usize,
    /// Mollification scales for the oracle; `None` means `{8,4,2,1}·1e-3·T`.
    pub eps_sequence: Option<Vec<f64>>,
    /// Ratio `ε / h` between the mollification scale and the oracle grid step.
    pub oracle_step_ratio: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            check_order: 6,
            tolerance: 1e-9,
            grid_step: None,
            quad_abs_tol: 1e-10,
            quad_rel_tol: 1e-8,
            residual_tol: 1e-6,
            event_tol: 1e-9,
            atom_tol: 1e-12,
            char_steps: 64,
            eps_sequence: None,
            oracle_step_ratio: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub p: SmoothFunction,
    pub g: SmoothFunction,
    pub a_r: SmoothFunction,
    pub b_r: SmoothFunction,
    pub c_r: SmoothFunction,
    pub max_age: f64,
    pub horizon: f64,
    pub initial_atoms: Vec<DataAtom>,
    pub fertility_atoms: Vec<DataAtom>,
    pub boundary_atoms: Vec<DataAtom>,
    pub numerics: Numerics,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    domain: RawDomain,
    #[serde(default)]
    rates: RawRates,
    #[serde(default)]
    atoms: RawAtoms,
    #[serde(default)]
    numerics: Numerics,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    max_age: f64,
    horizon: f64,
}

fn zero_source() -> FunctionSource {
    FunctionSource::Expr("0".into())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRates {
    #[serde(default = "zero_source")]
    p: FunctionSource,
    #[serde(default = "zero_source")]
    g: FunctionSource,
    #[serde(default = "zero_source")]
    a_r: FunctionSource,
    #[serde(default = "zero_source")]
    b_r: FunctionSource,
    #[serde(default = "zero_source")]
    c_r: FunctionSource,
}

impl Default for RawRates {
    fn default() -> Self {
        RawRates {
            p: zero_source(),
            g: zero_source(),
            a_r: zero_source(),
            b_r: zero_source(),
            c_r: zero_source(),
        }
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAtoms {
    #[serde(default)]
    initial: Vec<DataAtom>,
    #[serde(default)]
    fertility: Vec<DataAtom>,
    #[serde(default)]
    boundary: Vec<DataAtom>,
}

fn load_function(
    name: &str,
    src: &FunctionSource,
    allowed: &[Arg],
    base_dir: &Path,
) -> Result<SmoothFunction> {
    let f = match src {
        FunctionSource::Expr(s) => SmoothFunction::expression(s)
            .map_err(|e| Error::Parse(format!("rates.{name}: {e}")))?,
        FunctionSource::Table { table, order } => {
            let path = if table.is_absolute() { table.clone() } else { base_dir.join(table) };
            if allowed.len() == 2 {
                SmoothFunction::Table2(Table2::load(&path)?)
            } else {
                SmoothFunction::Table1(Table1::load(&path, *order)?)
            }
        }
    };
    f.check_arity(name, allowed)?;
    Ok(f)
}

fn prepare_atoms(kind: &str, atoms: Vec<DataAtom>, upper: f64) -> Result<Vec<DataAtom>> {
    let mut out = Vec::with_capacity(atoms.len());
    for (i, a) in atoms.into_iter().enumerate() {
        if !a.coefficient.is_finite() || !a.location.is_finite() {
            return Err(Error::Parse(format!("atoms.{kind}[{i}]: non-finite value")));
        }
        if !(a.location > 0.0 && a.location < upper) {
            return Err(Error::Domain(format!(
                "atoms.{kind}[{i}]: location {} outside the open interval (0, {upper})",
                a.location
            )));
        }
        if a.coefficient != 0.0 {
            out.push(a);
        }
    }
    out.sort_by(|a, b| a.location.total_cmp(&b.location));
    Ok(out)
}

/// Parse and validate a configuration document.
///
/// Relative table paths are resolved against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ModelConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let RawDomain { max_age, horizon } = raw.domain;
    if !(max_age > 0.0 && max_age.is_finite()) {
        return Err(Error::Domain(format!("domain.max_age must be positive, got {max_age}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Domain(format!("domain.horizon must be positive, got {horizon}")));
    }
    let both = [Arg::X, Arg::T];
    let cfg = ModelConfig {
        p: load_function("p", &raw.rates.p, &both, base_dir)?,
        g: load_function("g", &raw.rates.g, &both, base_dir)?,
        a_r: load_function("a_r", &raw.rates.a_r, &[Arg::X], base_dir)?,
        b_r: load_function("b_r", &raw.rates.b_r, &[Arg::X], base_dir)?,
        c_r: load_function("c_r", &raw.rates.c_r, &[Arg::T], base_dir)?,
        max_age,
        horizon,
        initial_atoms: prepare_atoms("initial", raw.atoms.initial, max_age)?,
        fertility_atoms: prepare_atoms("fertility", raw.atoms.fertility, max_age)?,
        boundary_atoms: prepare_atoms("boundary", raw.atoms.boundary, f64::INFINITY)?,
        numerics: raw.numerics,
    };
    cfg.check_numerics()?;
    Ok(cfg)
}

/// Read and parse a configuration file.
pub fn load_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    parse_config(&text, &base)
}

impl ModelConfig {
    /// A configuration with all rates zero and no atoms.
    pub fn empty(max_age: f64, horizon: f64) -> Self {
        ModelConfig {
            p: SmoothFunction::zero(),
            g: SmoothFunction::zero(),
            a_r: SmoothFunction::zero(),
            b_r: SmoothFunction::zero(),
            c_r: SmoothFunction::zero(),
            max_age,
            horizon,
            initial_atoms: Vec::new(),
            fertility_atoms: Vec::new(),
            boundary_atoms: Vec::new(),
            numerics: Numerics::default(),
        }
    }

    pub fn check_numerics(&self) -> Result<()> {
        let n = &self.numerics;
        let max_order = self.max_atom_order();
        if n.check_order < max_order as usize + 1 {
            return Err(Error::Domain(format!(
                "numerics.check_order = {} must be at least max atom order + 1 = {}",
                n.check_order,
                max_order + 1
            )));
        }
        if n.check_order > crate::jet::MAX_DEGREE {
            return Err(Error::Domain(format!(
                "numerics.check_order = {} exceeds the supported maximum {}",
                n.check_order,
                crate::jet::MAX_DEGREE
            )));
        }
        if let Some(h) = n.grid_step {
            if !(h > 0.0 && h < self.max_age.min(self.horizon)) {
                return Err(Error::Domain(format!("numerics.grid_step = {h} out of range")));
            }
        }
        if n.char_steps == 0 || n.oracle_step_ratio < 4.0 {
            return Err(Error::Domain("numerics.char_steps must be positive and oracle_step_ratio at least 4".into()));
        }
        Ok(())
    }

    pub fn max_atom_order(&self) -> u32 {
        self.initial_atoms
            .iter()
            .chain(&self.fertility_atoms)
            .chain(&self.boundary_atoms)
            .map(|a| a.order)
            .max()
            .unwrap_or(0)
    }

    pub fn has_atoms(&self) -> bool {
        !(self.initial_atoms.is_empty()
            && self.fertility_atoms.is_empty()
            && self.boundary_atoms.is_empty())
    }

    /// Absolute collision tolerance for event times.
    pub fn event_tolerance(&self) -> f64 {
        self.numerics.event_tol * self.horizon
    }

    /// Serialize back to the configuration format.
    pub fn to_toml(&self) -> Result<String> {
        let raw = RawConfig {
            domain: RawDomain { max_age: self.max_age, horizon: self.horizon },
            rates: RawRates {
                p: self.p.describe(),
                g: self.g.describe(),
                a_r: self.a_r.describe(),
                b_r: self.b_r.describe(),
                c_r: self.c_r.describe(),
            },
            atoms: RawAtoms {
                initial: self.initial_atoms.clone(),
                fertility: self.fertility_atoms.clone(),
                boundary: self.boundary_atoms.clone(),
            },
            numerics: self.numerics.clone(),
        };
        toml::to_string(&raw).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn p<S: Scalar>(&self, x: S, t: S) -> S {
        self.p.eval2(x, t)
    }

    pub fn g<S: Scalar>(&self, x: S, t: S) -> S {
        self.g.eval2(x, t)
    }

    /// Initial density, extended by zero outside `[0, L]`.
    pub fn a_r<S: Scalar>(&self, x: S) -> S {
        let v = x.value();
        if (0.0..=self.max_age).contains(&v) {
            self.a_r.eval1(Arg::X, x)
        } else {
            x.lift(0.0)
        }
    }

    /// Fertility rate, extended by zero outside `[0, L]`.
    pub fn b_r<S: Scalar>(&self, x: S) -> S {
        let v = x.value();
        if (0.0..=self.max_age).contains(&v) {
            self.b_r.eval1(Arg::X, x)
        } else {
            x.lift(0.0)
        }
    }

    /// Specific fertility, zero for negative times.
    pub fn c_r<S: Scalar>(&self, t: S) -> S {
        if t.value() >= 0.0 {
            self.c_r.eval1(Arg::T, t)
        } else {
            t.lift(0.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Pass,
    Fail,
    Warning,
}

/// Outcome of one assumption check.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionVerdict {
    pub id: &'static str,
    pub status: Status,
    /// Failure blocks the solver.
    pub fatal: bool,
    pub witness: String,
    /// Extra numbers worth reporting (e.g. the detected ε).
    pub data: BTreeMap<String, f64>,
}

impl AssumptionVerdict {
    fn new(id: &'static str, status: Status, fatal: bool, witness: String) -> Self {
        AssumptionVerdict { id, status, fatal, witness, data: BTreeMap::new() }
    }

    pub fn blocks(&self) -> bool {
        self.status == Status::Fail && self.fatal
    }
}

/// Message used whenever the event set contains a triple intersection.
pub const TRIPLE_INTERSECTION: &str = "triple singularity intersection: no distributional solution";

fn max_derivative<F: Fn(Jet) -> Jet>(f: F, at: f64, order: usize) -> (usize, f64) {
    let j = f(Jet::univariate(order, at));
    (0..=order)
        .map(|i| (i, j.get(i, 0).abs() * factorial(i)))
        .fold((0, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc })
}

/// Largest `ε` such that `b_r` vanishes (to tolerance) on `[0, 2ε]`, detected on a grid.
pub fn detect_fertility_gap(cfg: &ModelConfig) -> f64 {
    const SAMPLES: usize = 20_000;
    let l = cfg.max_age;
    let tol = cfg.numerics.tolerance;
    for i in 0..=SAMPLES {
        let x = l * i as f64 / SAMPLES as f64;
        if cfg.b_r(x).abs() > tol {
            if i == 0 {
                return 0.0;
            }
            return 0.5 * l * (i - 1) as f64 / SAMPLES as f64;
        }
    }
    0.5 * l
}

/// Check assumptions A1 through A5 (A3 reports the smoothness caveat of tables).
pub fn check_assumptions(cfg: &ModelConfig) -> Vec<AssumptionVerdict> {
    let k = cfg.numerics.check_order;
    let tol = cfg.numerics.tolerance;
    let mut out = Vec::new();

    let (ia, da) = max_derivative(|z| cfg.a_r.eval1(Arg::X, z), 0.0, k);
    let (ic, dc) = max_derivative(|z| cfg.c_r.eval1(Arg::T, z), 0.0, k);
    let a1_ok = da <= tol && dc <= tol;
    let mut v = AssumptionVerdict::new(
        "A1",
        if a1_ok { Status::Pass } else { Status::Fail },
        true,
        if a1_ok {
            format!("a_r and c_r vanish at 0 up to order {k}")
        } else if da > tol {
            format!("|a_r^({ia})(0)| = {da:.6e} > {tol:e}")
        } else {
            format!("|c_r^({ic})(0)| = {dc:.6e} > {tol:e}")
        },
    );
    v.data.insert("max_a_r_derivative".into(), da);
    v.data.insert("max_c_r_derivative".into(), dc);
    out.push(v);

    let (ib, db) = max_derivative(|z| cfg.b_r.eval1(Arg::X, z), cfg.max_age, k);
    let eps = detect_fertility_gap(cfg);
    let a2_ok = db <= tol && eps > 0.0;
    let mut v = AssumptionVerdict::new(
        "A2",
        if a2_ok { Status::Pass } else { Status::Fail },
        true,
        if a2_ok {
            format!("b_r flat at L up to order {k}; b_r = 0 on [0, 2ε] with ε = {eps:.6}")
        } else if db > tol {
            format!("|b_r^({ib})(L)| = {db:.6e} > {tol:e}")
        } else {
            format!("b_r(0) = {:.6e} does not vanish", cfg.b_r(0.0))
        },
    );
    v.data.insert("epsilon".into(), eps);
    out.push(v);

    let tables: Vec<&str> = [("p", &cfg.p), ("g", &cfg.g), ("a_r", &cfg.a_r), ("b_r", &cfg.b_r), ("c_r", &cfg.c_r)]
        .into_iter()
        .filter(|(_, f)| f.smoothness_caveat())
        .map(|(n, _)| n)
        .collect();
    out.push(AssumptionVerdict::new(
        "A3",
        if tables.is_empty() { Status::Pass } else { Status::Warning },
        false,
        if tables.is_empty() {
            "all rates are analytic expressions".into()
        } else {
            format!("tabulated rates {tables:?}: derivatives are spline approximations")
        },
    ));

    out.push(check_intersections(cfg));

    // A5: Ŝ(x,T) = exp(-∫p) on a sample grid.
    let t = cfg.horizon;
    let mut min_hat = f64::INFINITY;
    for i in 0..=200 {
        let x = (t + cfg.max_age) * i as f64 / 200.0 - t;
        if x <= 0.0 || x >= t + cfg.max_age {
            continue;
        }
        let q = crate::quadrature::Quadrature::from_numerics(&cfg.numerics);
        if let Ok(s) = crate::characteristics::survival(x, t, &cfg.p, crate::characteristics::Sign::Minus, &q) {
            min_hat = min_hat.min(s.abs());
        }
    }
    let a5_ok = min_hat > 1e-250 && min_hat.is_finite();
    let mut v = AssumptionVerdict::new(
        "A5",
        if a5_ok { Status::Pass } else { Status::Warning },
        false,
        if a5_ok {
            format!("min Ŝ(x, T) on samples = {min_hat:.6e}")
        } else {
            "Ŝ(x, T) underflows: uniqueness caveat".into()
        },
    );
    v.data.insert("min_hat_s".into(), if min_hat.is_finite() { min_hat } else { 0.0 });
    out.push(v);

    out
}

fn check_intersections(cfg: &ModelConfig) -> AssumptionVerdict {
    let tol = cfg.event_tolerance();
    let (_, crossings) = trace_lines(cfg);
    let mut witness = None;
    'outer: for c in &crossings {
        for b in &cfg.boundary_atoms {
            if (c.time - b.location).abs() <= tol {
                witness = Some(format!(
                    "emission at t* = {:.9} meets the boundary atom at t = {}",
                    c.time, b.location
                ));
                break 'outer;
            }
        }
    }
    match witness {
        None => AssumptionVerdict::new("A4", Status::Pass, true, "no three singularities meet".into()),
        Some(w) => AssumptionVerdict::new("A4", Status::Fail, true, format!("{TRIPLE_INTERSECTION}: {w}")),
    }
}

/// Run all checks and fail on the first blocking verdict.
pub fn validate(cfg: &ModelConfig) -> Result<Vec<AssumptionVerdict>> {
    let verdicts = check_assumptions(cfg);
    if let Some(v) = verdicts.iter().find(|v| v.blocks()) {
        return Err(Error::Assumption(format!("{}: {}", v.id, v.witness)));
    }
    Ok(verdicts)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[domain]
max_age = 1.0
horizon = 2.5
"#;

    fn parse(extra: &str) -> Result<ModelConfig> {
        parse_config(&format!("{BASE}{extra}"), Path::new("."))
    }

    #[test]
    fn no_atom_sections_means_empty_lists() {
        let cfg = parse("").unwrap();
        assert!(cfg.initial_atoms.is_empty());
        assert!(cfg.fertility_atoms.is_empty());
        assert!(cfg.boundary_atoms.is_empty());
    }

    #[test]
    fn initial_atom_maps_directly() {
        let cfg = parse("[[atoms.initial]]\ncoefficient = 1.0\norder = 0\nlocation = 0.25\n").unwrap();
        assert_eq!(cfg.initial_atoms, vec![DataAtom::new(1.0, 0, 0.25)]);
    }

    #[test]
    fn atom_outside_domain_is_rejected() {
        let err = parse("[[atoms.initial]]\ncoefficient = 1.0\norder = 0\nlocation = 1.5\n").unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn zero_atoms_dropped_and_sorted() {
        let cfg = parse(
            "[[atoms.fertility]]\ncoefficient = 2.0\norder = 0\nlocation = 0.7\n\
             [[atoms.fertility]]\ncoefficient = 0.0\norder = 0\nlocation = 0.2\n\
             [[atoms.fertility]]\ncoefficient = 1.0\norder = 1\nlocation = 0.3\n",
        )
        .unwrap();
        let locs: Vec<f64> = cfg.fertility_atoms.iter().map(|a| a.location).collect();
        assert_eq!(locs, vec![0.3, 0.7]);
    }

    #[test]
    fn unknown_key_names_offender() {
        let err = parse("[rates]\nmortality = \"x\"\n").unwrap_err();
        assert!(err.to_string().contains("mortality"), "{err}");
        let err = parse("[numerics]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn role_arity_enforced() {
        assert!(parse("[rates]\na_r = \"t\"\n").is_err());
        assert!(parse("[rates]\nc_r = \"x\"\n").is_err());
    }

    #[test]
    fn polynomial_initial_data_fails_compatibility() {
        let cfg = parse("[rates]\na_r = \"x^2*(1-x)^2\"\n[numerics]\ncheck_order = 2\n").unwrap();
        let v = check_assumptions(&cfg);
        let a1 = v.iter().find(|v| v.id == "A1").unwrap();
        assert_eq!(a1.status, Status::Fail);
        assert!(a1.witness.contains("a_r^(2)"), "{}", a1.witness);
        assert!((a1.data["max_a_r_derivative"] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fertility_gap_detection() {
        let cfg = parse("[rates]\nb_r = \"flat(x-0.2)*flat(0.9-x)\"\n").unwrap();
        let eps = detect_fertility_gap(&cfg);
        // b_r stays below 1e-9 until x ≈ 0.252.
        assert!(eps > 0.12 && eps < 0.13, "{eps}");
        let v = check_assumptions(&cfg);
        assert_eq!(v.iter().find(|v| v.id == "A2").unwrap().status, Status::Pass);
    }

    #[test]
    fn check_order_must_cover_atoms() {
        let err = parse(
            "[[atoms.initial]]\ncoefficient = 1.0\norder = 6\nlocation = 0.25\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("check_order"));
    }
}
