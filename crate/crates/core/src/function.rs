//! Smooth rate functions: analytic expressions or tabulated samples.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::Scalar;

/// Which variable a univariate function is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arg {
    X,
    T,
}

#[derive(Debug, Clone)]
pub enum SmoothFunction {
    Expression { source: String, expr: Expr },
    Table1(Table1),
    Table2(Table2),
}

impl PartialEq for SmoothFunction {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Expression { expr: a, .. }, Self::Expression { expr: b, .. }) => a == b,
            (Self::Table1(a), Self::Table1(b)) => a.knots == b.knots && a.values == b.values,
            (Self::Table2(a), Self::Table2(b)) => {
                a.xs == b.xs && a.ts == b.ts && a.values == b.values
            }
            _ => false,
        }
    }
}

impl SmoothFunction {
    pub fn expression(source: &str) -> Result<Self> {
        let expr = Expr::parse(source)?;
        Ok(SmoothFunction::Expression { source: source.trim().to_string(), expr })
    }

    pub fn zero() -> Self {
        Self::expression("0").expect("literal parses")
    }

    /// True when the function is an expression that folds to the constant 0.
    pub fn is_zero(&self) -> bool {
        matches!(self, SmoothFunction::Expression { expr, .. } if expr.constant_value() == Some(0.0))
    }

    /// Tabulated functions only have spline-level smoothness.
    pub fn smoothness_caveat(&self) -> bool {
        !matches!(self, SmoothFunction::Expression { .. })
    }

    /// Evaluate a function of `(x, t)`.
    pub fn eval2<S: Scalar>(&self, x: S, t: S) -> S {
        match self {
            SmoothFunction::Expression { expr, .. } => expr.eval(x, t),
            SmoothFunction::Table1(tab) => tab.eval(x),
            SmoothFunction::Table2(tab) => tab.eval(x, t),
        }
    }

    /// Evaluate a univariate function written in variable `arg`.
    pub fn eval1<S: Scalar>(&self, arg: Arg, z: S) -> S {
        match self {
            SmoothFunction::Expression { expr, .. } => match arg {
                Arg::X => expr.eval(z, z.lift(0.0)),
                Arg::T => expr.eval(z.lift(0.0), z),
            },
            SmoothFunction::Table1(tab) => tab.eval(z),
            SmoothFunction::Table2(tab) => match arg {
                Arg::X => tab.eval(z, z.lift(0.0)),
                Arg::T => tab.eval(z.lift(0.0), z),
            },
        }
    }

    /// Check the function only uses the variables allowed for its role.
    pub fn check_arity(&self, name: &str, allowed: &[Arg]) -> Result<()> {
        match self {
            SmoothFunction::Expression { expr, source } => {
                if expr.uses_x() && !allowed.contains(&Arg::X) {
                    return Err(Error::Parse(format!("rates.{name}: `{source}` may not depend on x")));
                }
                if expr.uses_t() && !allowed.contains(&Arg::T) {
                    return Err(Error::Parse(format!("rates.{name}: `{source}` may not depend on t")));
                }
                Ok(())
            }
            SmoothFunction::Table1(_) => Ok(()),
            SmoothFunction::Table2(_) if allowed.len() == 2 => Ok(()),
            SmoothFunction::Table2(_) => {
                Err(Error::Parse(format!("rates.{name}: two-dimensional table not allowed here")))
            }
        }
    }

    /// Source text (expression) or table path, for serialization.
    pub fn describe(&self) -> FunctionSource {
        match self {
            SmoothFunction::Expression { source, .. } => FunctionSource::Expr(source.clone()),
            SmoothFunction::Table1(t) => FunctionSource::Table {
                table: t.path.clone(),
                order: t.order,
            },
            SmoothFunction::Table2(t) => FunctionSource::Table {
                table: t.path.clone(),
                order: 3,
            },
        }
    }
}

/// Serialized form of a [`SmoothFunction`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum FunctionSource {
    Expr(String),
    Table {
        table: PathBuf,
        #[serde(default = "default_order")]
        order: u8,
    },
}

fn default_order() -> u8 {
    3
}

/// Tabulated univariate function with linear or natural cubic interpolation.
#[derive(Debug, Clone)]
pub struct Table1 {
    pub path: PathBuf,
    pub order: u8,
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl Table1 {
    pub fn new(path: PathBuf, knots: Vec<f64>, values: Vec<f64>, order: u8) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::Parse(format!("table {}: need at least two samples", path.display())));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parse(format!("table {}: abscissae must increase", path.display())));
        }
        if order != 1 && order != 3 {
            return Err(Error::Parse(format!("table {}: order must be 1 or 3", path.display())));
        }
        let second = if order == 3 {
            natural_second_derivatives(&knots, &values)
        } else {
            vec![0.0; knots.len()]
        };
        Ok(Table1 { path, order, knots, values, second })
    }

    /// Two-column CSV (`z,value`), header optional.
    pub fn load(path: &Path, order: u8) -> Result<Self> {
        let rows = read_numeric_csv(path, 2)?;
        let (k, v): (Vec<f64>, Vec<f64>) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
        Self::new(path.to_path_buf(), k, v, order)
    }

    pub fn eval<S: Scalar>(&self, z: S) -> S {
        spline_eval_real(&self.knots, &self.values, &self.second, self.order, z)
    }
}

/// Tabulated function of `(x, t)` on a rectangular grid, tensor cubic spline.
#[derive(Debug, Clone)]
pub struct Table2 {
    pub path: PathBuf,
    xs: Vec<f64>,
    ts: Vec<f64>,
    /// values[j][i] at (xs[i], ts[j])
    values: Vec<Vec<f64>>,
    row_second: Vec<Vec<f64>>,
}

impl Table2 {
    /// Long-format CSV with columns `x,t,value` covering a full rectangular grid.
    pub fn load(path: &Path) -> Result<Self> {
        let rows = read_numeric_csv(path, 3)?;
        let mut xs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let mut ts: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let mut values = vec![vec![f64::NAN; xs.len()]; ts.len()];
        for r in &rows {
            let i = xs.binary_search_by(|v| v.total_cmp(&r[0])).unwrap();
            let j = ts.binary_search_by(|v| v.total_cmp(&r[1])).unwrap();
            values[j][i] = r[2];
        }
        if values.iter().flatten().any(|v| v.is_nan()) || xs.len() < 2 || ts.len() < 2 {
            return Err(Error::Parse(format!(
                "table {}: samples must cover a full rectangular grid",
                path.display()
            )));
        }
        let row_second = values.iter().map(|row| natural_second_derivatives(&xs, row)).collect();
        Ok(Table2 { path: path.to_path_buf(), xs, ts, values, row_second })
    }

    pub fn eval<S: Scalar>(&self, x: S, t: S) -> S {
        let column: Vec<S> = self
            .values
            .iter()
            .zip(&self.row_second)
            .map(|(row, sec)| spline_eval_real(&self.xs, row, sec, 3, x))
            .collect();
        let second = natural_second_derivatives(&self.ts, &column);
        spline_eval(&self.ts, &column, &second, 3, t)
    }
}

fn read_numeric_csv(path: &Path, cols: usize) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) if v.len() == cols => out.push(v),
            // header row
            Err(_) if line == 0 => continue,
            _ => {
                return Err(Error::Parse(format!(
                    "table {}: line {} must have {cols} numeric columns",
                    path.display(),
                    line + 1
                )))
            }
        }
    }
    Ok(out)
}

/// Second derivatives of the natural cubic spline through `(knots, vals)`.
fn natural_second_derivatives<S: Scalar>(knots: &[f64], vals: &[S]) -> Vec<S> {
    let n = knots.len();
    let zero = vals[0].lift(0.0);
    let mut m = vec![zero; n];
    if n < 3 {
        return m;
    }
    // Thomas algorithm on the interior equations.
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![zero; n];
    for i in 1..n - 1 {
        let h0 = knots[i] - knots[i - 1];
        let h1 = knots[i + 1] - knots[i];
        let a = h0 / 6.0;
        let b = (h0 + h1) / 3.0;
        let c = h1 / 6.0;
        let d = (vals[i + 1] - vals[i]) / h1 - (vals[i] - vals[i - 1]) / h0;
        let denom = b - a * c_prime[i - 1];
        c_prime[i] = c / denom;
        d_prime[i] = (d - d_prime[i - 1] * a) / denom;
    }
    for i in (1..n - 1).rev() {
        m[i] = d_prime[i] - m[i + 1] * c_prime[i];
    }
    m
}

fn segment(knots: &[f64], zv: f64) -> usize {
    let n = knots.len();
    match knots.binary_search_by(|k| k.total_cmp(&zv)) {
        Ok(i) => i.min(n - 2),
        Err(0) => 0,
        Err(i) => (i - 1).min(n - 2),
    }
}

/// Spline with real samples evaluated at a (possibly jet) argument.
fn spline_eval_real<S: Scalar>(knots: &[f64], vals: &[f64], second: &[f64], order: u8, z: S) -> S {
    let i = segment(knots, z.value());
    let h = knots[i + 1] - knots[i];
    let d = z - knots[i];
    let slope = (vals[i + 1] - vals[i]) / h;
    if order == 1 {
        return d * slope + vals[i];
    }
    let b = slope - (2.0 * second[i] + second[i + 1]) * h / 6.0;
    let c = 0.5 * second[i];
    let e = (second[i + 1] - second[i]) / (6.0 * h);
    ((d * e + c) * d + b) * d + vals[i]
}

fn spline_eval<S: Scalar>(knots: &[f64], vals: &[S], second: &[S], order: u8, z: S) -> S {
    let i = segment(knots, z.value());
    let h = knots[i + 1] - knots[i];
    let d = z - knots[i];
    let slope = (vals[i + 1] - vals[i]) / h;
    if order == 1 {
        return vals[i] + slope * d;
    }
    let b = slope - (second[i] * 2.0 + second[i + 1]) * (h / 6.0);
    let c = second[i] * 0.5;
    let e = (second[i + 1] - second[i]) / (6.0 * h);
    vals[i] + d * (b + d * (c + d * e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet;
    use std::io::Write;

    #[test]
    fn cubic_table_reproduces_smooth_function() {
        let knots: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0).collect();
        let vals: Vec<f64> = knots.iter().map(|z| (2.0 * z).sin()).collect();
        let tab = Table1::new("mem".into(), knots, vals, 3).unwrap();
        let z = 0.4321;
        assert!((tab.eval(z) - (2.0 * z).sin()).abs() < 1e-5);
        let j = tab.eval(Jet::univariate(1, z));
        assert!((j.derivative(1, 0) - 2.0 * (2.0 * z).cos()).abs() < 1e-3);
    }

    #[test]
    fn two_dimensional_table_from_csv() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "x,t,value").unwrap();
        for i in 0..=10 {
            for j in 0..=10 {
                let (x, t) = (i as f64 / 10.0, j as f64 / 10.0);
                writeln!(f, "{x},{t},{}", x + 2.0 * t).unwrap();
            }
        }
        let tab = Table2::load(f.path()).unwrap();
        assert!((tab.eval(0.33, 0.71) - (0.33 + 1.42)).abs() < 1e-12);
    }

    #[test]
    fn arity_is_enforced() {
        let f = SmoothFunction::expression("sin(t)").unwrap();
        assert!(f.check_arity("a_r", &[Arg::X]).is_err());
        assert!(f.check_arity("c_r", &[Arg::T]).is_ok());
        assert_eq!(f.eval1(Arg::T, 0.5), 0.5f64.sin());
    }
}
