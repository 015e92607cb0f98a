//! Expressions over the analytic primitive set used for vital rates.
//!
//! Variables are `x` (age) and `t` (time). Supported syntax: numbers, `pi`,
//! `+ - * / ^`, parentheses and the functions `exp`, `sin`, `cos`, `ln`,
//! `sqrt`, `flat`. Exponents of `^` must be constant. `flat(z)` is the
//! standard C-infinity function `exp(-1/z)` for `z > 0` and `0` otherwise; it
//! is what lets smooth data vanish to all orders at a point.

use crate::error::{Error, Result};
use crate::jet::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    X,
    T,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Ln,
    Sqrt,
    Flat,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser { src, pos: 0 };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != src.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(e)
    }

    pub fn eval<S: Scalar>(&self, x: S, t: S) -> S {
        match self {
            Expr::Const(c) => x.lift(*c),
            Expr::X => x,
            Expr::T => t,
            Expr::Neg(a) => -a.eval(x, t),
            Expr::Add(a, b) => a.eval(x, t) + b.eval(x, t),
            Expr::Sub(a, b) => a.eval(x, t) - b.eval(x, t),
            Expr::Mul(a, b) => a.eval(x, t) * b.eval(x, t),
            Expr::Div(a, b) => a.eval(x, t) / b.eval(x, t),
            Expr::Pow(a, r) => {
                let base = a.eval(x, t);
                if r.fract() == 0.0 && r.abs() < 64.0 {
                    base.powi(*r as i32)
                } else {
                    base.powf(*r)
                }
            }
            Expr::Call(f, a) => {
                let v = a.eval(x, t);
                match f {
                    Func::Exp => v.exp(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Ln => v.ln(),
                    Func::Sqrt => v.sqrt(),
                    Func::Flat => v.flat(),
                }
            }
        }
    }

    /// Constant value if the expression does not depend on `x` or `t`.
    pub fn constant_value(&self) -> Option<f64> {
        if self.depends_on_vars() {
            None
        } else {
            Some(self.eval(0.0, 0.0))
        }
    }

    pub fn depends_on_vars(&self) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::X | Expr::T => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.depends_on_vars(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_vars() || b.depends_on_vars()
            }
        }
    }

    pub fn uses_t(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::X => false,
            Expr::T => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.uses_t(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.uses_t() || b.uses_t()
            }
        }
    }

    pub fn uses_x(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::T => false,
            Expr::X => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.uses_x(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.uses_x() || b.uses_x()
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, msg: &str) -> Error {
        Error::Expression(format!("{msg} at offset {} in `{}`", self.pos, self.src))
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let exponent = self.unary()?;
            let r = exponent
                .constant_value()
                .ok_or_else(|| self.error("exponent must be constant"))?;
            return Ok(Expr::Pow(Box::new(base), r));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        self.skip_ws();
        let c = self.peek().ok_or_else(|| self.error("unexpected end of input"))?;
        if c == '(' {
            self.pos += 1;
            let e = self.expr()?;
            if !self.eat(')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(e);
        }
        if c.is_ascii_digit() || c == '.' {
            return self.number();
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = self.pos;
            while let Some(c) = self.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            let name = &self.src[start..self.pos];
            let func = match name {
                "x" => return Ok(Expr::X),
                "t" => return Ok(Expr::T),
                "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
                "exp" => Func::Exp,
                "sin" => Func::Sin,
                "cos" => Func::Cos,
                "ln" => Func::Ln,
                "sqrt" => Func::Sqrt,
                "flat" => Func::Flat,
                _ => return Err(self.error(&format!("unknown identifier `{name}`"))),
            };
            if !self.eat('(') {
                return Err(self.error("expected `(` after function name"));
            }
            let arg = self.expr()?;
            if !self.eat(')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        Err(self.error(&format!("unexpected character `{c}`")))
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if digits == self.pos {
                self.pos = save;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| self.error("malformed number"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Jet;

    #[test]
    fn precedence_and_power() {
        let e = Expr::parse("1 + 2*x^2 - t/4").unwrap();
        assert_eq!(e.eval(3.0, 2.0), 1.0 + 18.0 - 0.5);
        let e = Expr::parse("-x^2").unwrap();
        assert_eq!(e.eval(3.0, 0.0), -9.0);
        let e = Expr::parse("2^-1 * 1e-1").unwrap();
        assert!((e.eval(0.0, 0.0) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn functions_and_jets() {
        let e = Expr::parse("exp(-0.5*x)*sin(t)").unwrap();
        let x = Jet::var_x(2, 2, 0.3);
        let t = Jet::var_y(2, 2, 1.1);
        let j = e.eval(x, t);
        let expected = -0.5 * (-0.15f64).exp() * 1.1f64.cos();
        assert!((j.derivative(1, 1) - expected).abs() < 1e-13);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Expr::parse("x +").is_err());
        assert!(Expr::parse("foo(x)").is_err());
        assert!(Expr::parse("x^t").is_err());
        assert!(Expr::parse("(x").is_err());
        assert!(Expr::parse("x y").is_err());
    }

    #[test]
    fn dependency_queries() {
        assert_eq!(Expr::parse("3*2").unwrap().constant_value(), Some(6.0));
        assert!(!Expr::parse("x*x").unwrap().uses_t());
        assert!(Expr::parse("sin(t)").unwrap().uses_t());
    }
}
