//! Expression trees for potentials: parsing, printing, evaluation and symbolic derivatives.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Zero-based coordinate index; written `x1`, `x2`, ... in source.
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

use Expr::*;

fn b(e: Expr) -> Box<Expr> {
    Box::new(e)
}

fn as_const(e: &Expr) -> Option<f64> {
    match e {
        Const(c) => Some(*c),
        _ => None,
    }
}

// Constructors with light simplification so derivative trees stay small.
pub fn add(x: Expr, y: Expr) -> Expr {
    match (as_const(&x), as_const(&y)) {
        (Some(a), Some(c)) => Const(a + c),
        (Some(a), _) if a == 0.0 => y,
        (_, Some(c)) if c == 0.0 => x,
        _ => Add(b(x), b(y)),
    }
}

pub fn sub(x: Expr, y: Expr) -> Expr {
    match (as_const(&x), as_const(&y)) {
        (Some(a), Some(c)) => Const(a - c),
        (Some(a), _) if a == 0.0 => neg(y),
        (_, Some(c)) if c == 0.0 => x,
        _ => Sub(b(x), b(y)),
    }
}

pub fn mul(x: Expr, y: Expr) -> Expr {
    match (as_const(&x), as_const(&y)) {
        (Some(a), Some(c)) => Const(a * c),
        (Some(a), _) | (_, Some(a)) if a == 0.0 => Const(0.0),
        (Some(a), _) if a == 1.0 => y,
        (_, Some(c)) if c == 1.0 => x,
        _ => Mul(b(x), b(y)),
    }
}

pub fn div(x: Expr, y: Expr) -> Expr {
    match (as_const(&x), as_const(&y)) {
        (Some(a), Some(c)) if c != 0.0 => Const(a / c),
        (Some(a), _) if a == 0.0 => Const(0.0),
        (_, Some(c)) if c == 1.0 => x,
        _ => Div(b(x), b(y)),
    }
}

pub fn pow(x: Expr, y: Expr) -> Expr {
    match (as_const(&x), as_const(&y)) {
        (_, Some(c)) if c == 0.0 => Const(1.0),
        (_, Some(c)) if c == 1.0 => x,
        (Some(a), Some(c)) => {
            let v = pow_value(a, c);
            if v.is_finite() {
                Const(v)
            } else {
                Pow(b(x), b(y))
            }
        }
        _ => Pow(b(x), b(y)),
    }
}

pub fn neg(x: Expr) -> Expr {
    match x {
        Const(c) => Const(-c),
        Neg(inner) => *inner,
        other => Neg(b(other)),
    }
}

fn pow_value(base: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() < 2147483647.0 {
        base.powi(e as i32)
    } else if base > 0.0 {
        base.powf(e)
    } else if base == 0.0 && e > 0.0 {
        0.0
    } else {
        f64::NAN
    }
}

impl Expr {
    /// Evaluates at `x`; domain violations yield NaN or infinities.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Const(c) => *c,
            Var(i) => x[*i],
            Add(a, c) => a.eval(x) + c.eval(x),
            Sub(a, c) => a.eval(x) - c.eval(x),
            Mul(a, c) => a.eval(x) * c.eval(x),
            Div(a, c) => a.eval(x) / c.eval(x),
            Pow(a, c) => pow_value(a.eval(x), c.eval(x)),
            Neg(a) => -a.eval(x),
            Exp(a) => a.eval(x).exp(),
            Ln(a) => {
                let v = a.eval(x);
                if v > 0.0 {
                    v.ln()
                } else {
                    f64::NAN
                }
            }
            Sin(a) => a.eval(x).sin(),
            Cos(a) => a.eval(x).cos(),
        }
    }

    /// Partial derivative with respect to coordinate `k`.
    pub fn diff(&self, k: usize) -> Expr {
        match self {
            Const(_) => Const(0.0),
            Var(i) => Const(if *i == k { 1.0 } else { 0.0 }),
            Add(u, v) => add(u.diff(k), v.diff(k)),
            Sub(u, v) => sub(u.diff(k), v.diff(k)),
            Mul(u, v) => add(mul(u.diff(k), (**v).clone()), mul((**u).clone(), v.diff(k))),
            Div(u, v) => div(
                sub(mul(u.diff(k), (**v).clone()), mul((**u).clone(), v.diff(k))),
                pow((**v).clone(), Const(2.0)),
            ),
            Pow(u, v) => {
                if let Some(c) = as_const(v) {
                    mul(mul(Const(c), pow((**u).clone(), Const(c - 1.0))), u.diff(k))
                } else {
                    // u^v (v' ln u + v u'/u), defined where u > 0.
                    mul(
                        self.clone(),
                        add(
                            mul(v.diff(k), Ln(u.clone())),
                            div(mul((**v).clone(), u.diff(k)), (**u).clone()),
                        ),
                    )
                }
            }
            Neg(u) => neg(u.diff(k)),
            Exp(u) => mul(self.clone(), u.diff(k)),
            Ln(u) => div(u.diff(k), (**u).clone()),
            Sin(u) => mul(Cos(u.clone()), u.diff(k)),
            Cos(u) => neg(mul(Sin(u.clone()), u.diff(k))),
        }
    }

    /// Largest variable index plus one.
    pub fn arity(&self) -> usize {
        match self {
            Const(_) => 0,
            Var(i) => i + 1,
            Add(a, c) | Sub(a, c) | Mul(a, c) | Div(a, c) | Pow(a, c) => a.arity().max(c.arity()),
            Neg(a) | Exp(a) | Ln(a) | Sin(a) | Cos(a) => a.arity(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Const(_) | Var(_) => 1,
            Add(a, c) | Sub(a, c) | Mul(a, c) | Div(a, c) | Pow(a, c) => 1 + a.node_count() + c.node_count(),
            Neg(a) | Exp(a) | Ln(a) | Sin(a) | Cos(a) => 1 + a.node_count(),
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Add(..) | Sub(..) => 1,
            Mul(..) | Div(..) => 2,
            Neg(_) => 3,
            Pow(..) => 4,
            _ => 5,
        }
    }

    fn write_min(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        if self.prec() < min {
            write!(f, "(")?;
            self.write_expr(f)?;
            write!(f, ")")
        } else {
            self.write_expr(f)
        }
    }

    fn write_expr(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => write!(f, "(-{:?})", -c),
            Const(c) => write!(f, "{:?}", c),
            Var(i) => write!(f, "x{}", i + 1),
            Add(a, c) | Sub(a, c) => {
                a.write_min(f, 1)?;
                write!(f, " {} ", if matches!(self, Add(..)) { '+' } else { '-' })?;
                c.write_min(f, 2)
            }
            Mul(a, c) | Div(a, c) => {
                a.write_min(f, 2)?;
                write!(f, "{}", if matches!(self, Mul(..)) { '*' } else { '/' })?;
                c.write_min(f, 3)
            }
            Pow(a, c) => {
                a.write_min(f, 5)?;
                write!(f, "^")?;
                c.write_min(f, 3)
            }
            Neg(a) => {
                write!(f, "-")?;
                a.write_min(f, 3)
            }
            Exp(a) => write!(f, "exp({a})"),
            Ln(a) => write!(f, "ln({a})"),
            Sin(a) => write!(f, "sin({a})"),
            Cos(a) => write!(f, "cos({a})"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_expr(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Parse { col, msg: format!("malformed number '{text}'") })?;
            out.push((Tok::Num(v), col));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Op(c), col));
            i += 1;
        } else {
            return Err(Error::Parse { col, msg: format!("unexpected character '{c}'") });
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dim: usize,
    end_col: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.1).unwrap_or(self.end_col)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { col: self.col(), msg: msg.into() })
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
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
                lhs = Add(b(lhs), b(self.term()?));
            } else if self.eat('-') {
                lhs = Sub(b(lhs), b(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Mul(b(lhs), b(self.unary()?));
            } else if self.eat('/') {
                lhs = Div(b(lhs), b(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            Ok(Neg(b(self.unary()?)))
        } else if self.eat('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat('^') {
            Ok(Pow(b(base), b(self.unary()?)))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Const(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.err("expected ')'");
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(func) = ["exp", "ln", "sin", "cos"].iter().find(|f| **f == name) {
                    if !self.eat('(') {
                        return self.err(format!("expected '(' after {func}"));
                    }
                    let arg = b(self.expr()?);
                    if !self.eat(')') {
                        return self.err("expected ')'");
                    }
                    return Ok(match *func {
                        "exp" => Exp(arg),
                        "ln" => Ln(arg),
                        "sin" => Sin(arg),
                        _ => Cos(arg),
                    });
                }
                if name == "pi" {
                    return Ok(Const(std::f64::consts::PI));
                }
                if let Some(idx) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                    if idx == 0 || idx > self.dim {
                        return Err(Error::Parse {
                            col,
                            msg: format!("variable '{name}' outside dimension {}", self.dim),
                        });
                    }
                    return Ok(Var(idx - 1));
                }
                Err(Error::Parse { col, msg: format!("unknown identifier '{name}'") })
            }
            Some(Tok::Op(c)) => self.err(format!("unexpected '{c}'")),
            None => self.err("unexpected end of expression"),
        }
    }
}

/// Parses an expression in the variables `x1..x{dim}`.
pub fn parse(src: &str, dim: usize) -> Result<Expr> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, dim, end_col: src.chars().count() + 1 };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_rules() {
        let e = parse("-x1^2", 1).unwrap();
        assert_eq!(e, Neg(b(Pow(b(Var(0)), b(Const(2.0))))));
        let e = parse("2*x1^2^3", 1).unwrap();
        assert!((e.eval(&[1.1]) - 2.0 * 1.1f64.powi(8)).abs() < 1e-12);
        let e = parse("1 - 2 - 3", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), -4.0);
        let e = parse("8/4/2", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), 1.0);
        let e = parse("2^-1", 1).unwrap();
        assert_eq!(e.eval(&[0.0]), 0.5);
    }

    #[test]
    fn parse_errors_carry_columns() {
        match parse("x1 + y", 1) {
            Err(Error::Parse { col, msg }) => {
                assert_eq!(col, 6);
                assert!(msg.contains("unknown identifier"));
            }
            other => panic!("{other:?}"),
        }
        match parse("x3", 2) {
            Err(Error::Parse { col: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse("(x1", 1).is_err());
        assert!(parse("x1 x1", 1).is_err());
        assert!(parse("", 1).is_err());
    }

    #[test]
    fn derivatives_of_double_well() {
        let f = parse("(x1^2-1)^2", 1).unwrap();
        let d1 = f.diff(0);
        let d2 = d1.diff(0);
        for &x in &[-1.3, -0.2, 0.0, 0.7] {
            assert!((d1.eval(&[x]) - 4.0 * x * (x * x - 1.0)).abs() < 1e-12);
            assert!((d2.eval(&[x]) - (12.0 * x * x - 4.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn general_power_rule() {
        let f = parse("x1^x2", 2).unwrap();
        let dx2 = f.diff(1);
        let v = dx2.eval(&[2.0, 3.0]);
        assert!((v - 8.0 * 2f64.ln()).abs() < 1e-12);
        assert!(parse("x1^0.5", 1).unwrap().eval(&[-1.0]).is_nan());
    }

    #[test]
    fn printing_round_trips() {
        for src in ["-x1^2", "(x1 - 1)*(x2 + 2)", "x1^-2*3", "-(x1*x2)", "exp(-x1)/(1 + x2^2)", "2^3^x1", "x1 - (x2 - 1)"] {
            let e = parse(src, 2).unwrap();
            let again = parse(&e.to_string(), 2).unwrap();
            assert_eq!(e, again, "{src} -> {e}");
        }
        let e = Mul(b(Const(-2.5)), b(Var(0)));
        assert_eq!(parse(&e.to_string(), 1).unwrap().eval(&[2.0]), -5.0);
    }
}
