//! Small arithmetic expression language used for rewards `g(x)` and for
//! deterministic-time functionals `f(tau)`.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | power
//! power   := primary ('^' ['-'] integer)?
//! primary := number | 'tau' | 'x' | 'x[' integer ']'
//!          | name '(' expr (',' expr)* ')' | '(' expr ')' | '|' expr '|'
//! ```
//!
//! Functions: `abs`, `max`, `min`, `exp`, `sqrt`. A minus sign directly in
//! front of a number literal and a quotient of two literals are folded
//! into one constant while parsing, so `-1/3` is a single exact constant.

use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    Tau,
    /// Component of the node's state vector; `x` is `x[0]`.
    State(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(Scalar),
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Abs(Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Sqrt(Box<Expr>),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("column {column}: {message}")]
pub struct ParseError {
    /// 1-based character column inside the expression text.
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("expression uses tau but no stopping time was supplied")]
    NoTau,
    #[error("state component x[{index}] is missing (state has {len} components)")]
    MissingState { index: usize, len: usize },
}

/// Values bound to the variables during evaluation.
#[derive(Clone, Copy, Debug)]
pub struct Env<'a> {
    pub tau: Option<Scalar>,
    pub state: &'a [Scalar],
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ParseError> {
        let mut p = Parser { chars: text.chars().collect(), pos: 0 };
        p.skip_ws();
        if p.peek().is_none() {
            return Err(p.error("empty expression"));
        }
        let (e, _) = p.expr()?;
        p.skip_ws();
        if let Some(c) = p.peek() {
            return Err(p.error(format!("unexpected '{c}'")));
        }
        Ok(e)
    }

    pub fn eval(&self, env: &Env) -> Result<Scalar, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::Tau) => env.tau.ok_or(EvalError::NoTau)?,
            Expr::Var(Var::State(i)) => *env
                .state
                .get(*i)
                .ok_or(EvalError::MissingState { index: *i, len: env.state.len() })?,
            Expr::Neg(e) => -e.eval(env)?,
            Expr::Add(a, b) => a.eval(env)? + b.eval(env)?,
            Expr::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            Expr::Mul(a, b) => a.eval(env)? * b.eval(env)?,
            Expr::Div(a, b) => a.eval(env)? / b.eval(env)?,
            Expr::Pow(e, n) => e.eval(env)?.powi(*n),
            Expr::Abs(e) => e.eval(env)?.abs(),
            Expr::Max(a, b) => a.eval(env)?.max(b.eval(env)?),
            Expr::Min(a, b) => a.eval(env)?.min(b.eval(env)?),
            Expr::Exp(e) => {
                let v = e.eval(env)?;
                if v.is_zero() {
                    Scalar::ONE
                } else {
                    Scalar::Approx(v.to_f64().exp())
                }
            }
            Expr::Sqrt(e) => sqrt(e.eval(env)?),
        })
    }

    pub fn uses(&self, var: Var) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= *e == Expr::Var(var));
        found
    }

    pub fn uses_state(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Var(Var::State(_))));
        found
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Neg(e) | Expr::Pow(e, _) | Expr::Abs(e) | Expr::Exp(e) | Expr::Sqrt(e) => e.visit(f),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Max(a, b)
            | Expr::Min(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// True when the expression is, as a function of `tau`, continuous and
    /// piecewise linear with finitely many pieces.
    pub fn is_piecewise_linear_in_tau(&self) -> bool {
        pl_class(self).is_some()
    }
}

/// `Some(depends_on_tau)` for piecewise-linear expressions, `None` otherwise.
fn pl_class(e: &Expr) -> Option<bool> {
    match e {
        Expr::Const(_) | Expr::Var(Var::State(_)) => Some(false),
        Expr::Var(Var::Tau) => Some(true),
        Expr::Neg(a) | Expr::Abs(a) => pl_class(a),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Max(a, b) | Expr::Min(a, b) => {
            Some(pl_class(a)? | pl_class(b)?)
        }
        Expr::Mul(a, b) => {
            let (x, y) = (pl_class(a)?, pl_class(b)?);
            (!(x && y)).then_some(x || y)
        }
        Expr::Div(a, b) => {
            let x = pl_class(a)?;
            (!pl_class(b)?).then_some(x)
        }
        Expr::Pow(a, n) => {
            let x = pl_class(a)?;
            (!x || *n == 1).then_some(x && *n != 0)
        }
        Expr::Exp(a) | Expr::Sqrt(a) => (!pl_class(a)?).then_some(false),
    }
}

fn sqrt(v: Scalar) -> Scalar {
    if let Some(r) = v.as_rational() {
        let (n, d) = (*r.numer(), *r.denom());
        if n >= 0 {
            if let (Some(a), Some(b)) = (isqrt(n), isqrt(d)) {
                return Scalar::Exact(crate::scalar::Rational::new(a, b));
            }
        }
    }
    Scalar::Approx(v.to_f64().sqrt())
}

fn isqrt(n: i128) -> Option<i128> {
    let r = (n as f64).sqrt().round() as i128;
    (r.checked_mul(r) == Some(n)).then_some(r)
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError { column: self.pos + 1, message: message.into() }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
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

    fn expect(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{c}'")))
        }
    }

    // The boolean says whether the result is a bare literal, which is what
    // the constant folding looks at.
    fn expr(&mut self) -> Result<(Expr, bool), ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                let (r, _) = self.term()?;
                lhs = (Expr::Add(Box::new(lhs.0), Box::new(r)), false);
            } else if self.eat('-') {
                let (r, _) = self.term()?;
                lhs = (Expr::Sub(Box::new(lhs.0), Box::new(r)), false);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<(Expr, bool), ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                let (r, _) = self.unary()?;
                lhs = (Expr::Mul(Box::new(lhs.0), Box::new(r)), false);
            } else if self.eat('/') {
                let at = self.pos;
                let (r, r_lit) = self.unary()?;
                lhs = match (lhs, r) {
                    ((Expr::Const(a), true), Expr::Const(b)) if r_lit => {
                        if b.is_zero() {
                            self.pos = at;
                            return Err(self.error("division by zero"));
                        }
                        (Expr::Const(a / b), true)
                    }
                    ((l, _), r) => (Expr::Div(Box::new(l), Box::new(r)), false),
                };
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<(Expr, bool), ParseError> {
        if self.eat('-') {
            self.skip_ws();
            if self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
                let (e, lit) = self.power()?;
                return Ok(match e {
                    Expr::Const(c) if lit => (Expr::Const(-c), true),
                    e => (Expr::Neg(Box::new(e)), false),
                });
            }
            let (e, _) = self.unary()?;
            return Ok((Expr::Neg(Box::new(e)), false));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<(Expr, bool), ParseError> {
        let base = self.primary()?;
        if !self.eat('^') {
            return Ok(base);
        }
        self.skip_ws();
        let start = self.pos;
        if self.peek() == Some('-') {
            self.pos += 1;
        }
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        let n: i32 = text.parse().map_err(|_| {
            self.pos = start;
            self.error("exponent must be an integer")
        })?;
        Ok((Expr::Pow(Box::new(base.0), n), false))
    }

    fn primary(&mut self) -> Result<(Expr, bool), ParseError> {
        self.skip_ws();
        let Some(c) = self.peek() else {
            return Err(self.error("unexpected end of expression"));
        };
        if c.is_ascii_digit() || c == '.' {
            return self.number();
        }
        if c == '(' {
            self.pos += 1;
            let (e, _) = self.expr()?;
            self.expect(')')?;
            return Ok((e, false));
        }
        if c == '|' {
            self.pos += 1;
            let (e, _) = self.expr()?;
            self.expect('|')?;
            return Ok((Expr::Abs(Box::new(e)), false));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = self.pos;
            while self.peek().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_') {
                self.pos += 1;
            }
            let name: String = self.chars[start..self.pos].iter().collect();
            return self.named(&name, start);
        }
        Err(self.error(format!("unexpected '{c}'")))
    }

    fn named(&mut self, name: &str, start: usize) -> Result<(Expr, bool), ParseError> {
        match name {
            "tau" => return Ok((Expr::Var(Var::Tau), false)),
            "x" => {
                if !self.eat('[') {
                    return Ok((Expr::Var(Var::State(0)), false));
                }
                self.skip_ws();
                let s = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
                let text: String = self.chars[s..self.pos].iter().collect();
                let i: usize = text.parse().map_err(|_| self.error("expected a state index"))?;
                self.expect(']')?;
                return Ok((Expr::Var(Var::State(i)), false));
            }
            _ => {}
        }
        let arity = match name {
            "abs" | "exp" | "sqrt" => 1,
            "max" | "min" => 2,
            _ => {
                self.pos = start;
                return Err(self.error(format!("unknown name '{name}'")));
            }
        };
        self.expect('(')?;
        let mut args = vec![self.expr()?.0];
        while args.len() < arity {
            self.expect(',')?;
            args.push(self.expr()?.0);
        }
        self.expect(')')?;
        let mut it = args.into_iter().map(Box::new);
        let a = it.next().unwrap();
        let e = match name {
            "abs" => Expr::Abs(a),
            "exp" => Expr::Exp(a),
            "sqrt" => Expr::Sqrt(a),
            "max" => Expr::Max(a, it.next().unwrap()),
            _ => Expr::Min(a, it.next().unwrap()),
        };
        Ok((e, false))
    }

    fn number(&mut self) -> Result<(Expr, bool), ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
            self.pos += 1;
        }
        // Exponent part, only when followed by digits.
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+' | '-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        match Scalar::parse(&text) {
            Some(v) => Ok((Expr::Const(v), true)),
            None => {
                self.pos = start;
                Err(self.error(format!("bad number '{text}'")))
            }
        }
    }
}

const PREC_SUM: u8 = 1;
const PREC_PRODUCT: u8 = 2;
const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 5;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => PREC_SUM,
        Expr::Mul(..) | Expr::Div(..) => PREC_PRODUCT,
        Expr::Neg(_) => PREC_UNARY,
        Expr::Pow(..) => 4,
        // Negative and non-terminating constants are printed in parentheses.
        Expr::Const(_) | Expr::Var(_) | Expr::Abs(_) | Expr::Max(..) | Expr::Min(..) | Expr::Exp(_) | Expr::Sqrt(_) => {
            PREC_ATOM
        }
    }
}

fn write_at(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if prec(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: &Scalar) -> fmt::Result {
    let text = c.to_string();
    if text.starts_with('-') || text.contains('/') {
        write!(f, "({text})")
    } else {
        f.write_str(&text)
    }
}

/// Prints in a form that parses back to an equal tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write_const(f, c),
            Expr::Var(Var::Tau) => f.write_str("tau"),
            Expr::Var(Var::State(0)) => f.write_str("x"),
            Expr::Var(Var::State(i)) => write!(f, "x[{i}]"),
            Expr::Neg(e) => {
                // "-3" would fold into a constant, so keep the parentheses.
                if matches!(**e, Expr::Const(_)) {
                    write!(f, "-({e})")
                } else {
                    f.write_str("-")?;
                    write_at(f, e, PREC_UNARY)
                }
            }
            Expr::Add(a, b) => {
                write_at(f, a, PREC_SUM)?;
                f.write_str(" + ")?;
                write_at(f, b, PREC_PRODUCT)
            }
            Expr::Sub(a, b) => {
                write_at(f, a, PREC_SUM)?;
                f.write_str(" - ")?;
                write_at(f, b, PREC_PRODUCT)
            }
            Expr::Mul(a, b) => {
                write_at(f, a, PREC_PRODUCT)?;
                f.write_str(" * ")?;
                write_at(f, b, PREC_UNARY)
            }
            Expr::Div(a, b) => {
                if let (Expr::Const(_), Expr::Const(_)) = (&**a, &**b) {
                    write!(f, "({a})")?;
                } else {
                    write_at(f, a, PREC_PRODUCT)?;
                }
                f.write_str(" / ")?;
                write_at(f, b, PREC_UNARY)
            }
            Expr::Pow(e, n) => {
                write_at(f, e, PREC_ATOM)?;
                write!(f, "^{n}")
            }
            Expr::Abs(e) => write!(f, "|{e}|"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Exp(e) => write!(f, "exp({e})"),
            Expr::Sqrt(e) => write!(f, "sqrt({e})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_tau(e: &str, tau: Scalar) -> Scalar {
        Expr::parse(e).unwrap().eval(&Env { tau: Some(tau), state: &[] }).unwrap()
    }

    #[test]
    fn evaluates_functionals_exactly() {
        assert_eq!(eval_tau("5 - |tau - 0|*1", Scalar::int(4)), Scalar::int(1));
        assert_eq!(eval_tau("|tau - 3.2|", Scalar::int(5)), Scalar::ratio(9, 5));
        assert_eq!(eval_tau("5 - |tau - 2|", Scalar::int(1)), Scalar::int(4));
        assert_eq!(eval_tau("-1/3 * tau", Scalar::int(3)), Scalar::int(-1));
        assert_eq!(eval_tau("2^-1 + tau^2", Scalar::int(3)), Scalar::ratio(19, 2));
    }

    #[test]
    fn state_variables() {
        let e = Expr::parse("abs(x) + x[1]*2").unwrap();
        let st = [Scalar::int(-3), Scalar::ratio(1, 4)];
        assert_eq!(e.eval(&Env { tau: None, state: &st }).unwrap(), Scalar::ratio(7, 2));
        assert!(e.uses_state());
        assert!(!e.uses(Var::Tau));
        let err = e.eval(&Env { tau: None, state: &st[..1] }).unwrap_err();
        assert_eq!(err, EvalError::MissingState { index: 1, len: 1 });
    }

    #[test]
    fn folds_negative_and_fraction_literals() {
        assert_eq!(Expr::parse("-3").unwrap(), Expr::Const(Scalar::int(-3)));
        assert_eq!(Expr::parse("-1/3").unwrap(), Expr::Const(Scalar::ratio(-1, 3)));
        assert_eq!(Expr::parse("(1)/3").unwrap(), Expr::Div(Box::new(Expr::Const(Scalar::ONE)), Box::new(Expr::Const(Scalar::int(3)))));
        assert!(matches!(Expr::parse("-(3)").unwrap(), Expr::Neg(_)));
    }

    #[test]
    fn nested_bars() {
        assert_eq!(eval_tau("|tau - |tau - 4||", Scalar::int(1)), Scalar::int(2));
        assert_eq!(eval_tau("||tau| - 4| * |2|", Scalar::int(1)), Scalar::int(6));
    }

    #[test]
    fn errors_carry_columns() {
        assert_eq!(Expr::parse("").unwrap_err().column, 1);
        assert_eq!(Expr::parse("1 +").unwrap_err().column, 4);
        assert_eq!(Expr::parse("foo(1)").unwrap_err().column, 1);
        assert_eq!(Expr::parse("tau )").unwrap_err().column, 5);
        assert_eq!(Expr::parse("tau^x").unwrap_err().column, 5);
        assert!(Expr::parse("1/0").is_err());
    }

    #[test]
    fn piecewise_linearity() {
        for ok in ["5 - |tau - 1|", "max(tau, 2) - min(tau, 1)/2", "3*tau", "tau*exp(1)", "tau^1"] {
            assert!(Expr::parse(ok).unwrap().is_piecewise_linear_in_tau(), "{ok}");
        }
        for bad in ["tau*tau", "tau^2", "1/tau", "exp(tau)", "sqrt(tau)"] {
            assert!(!Expr::parse(bad).unwrap().is_piecewise_linear_in_tau(), "{bad}");
        }
    }

    #[test]
    fn print_parse_round_trip() {
        for text in [
            "5 - |tau - 0| * 1",
            "-(3) + (-3)",
            "(1/3) * tau - (-7/6)",
            "(1) / 3",
            "x[2]^-2 + sqrt(x) * exp(-x)",
            "max(tau, 1) - (tau - (1 - tau))",
            "--tau",
            "(-2)^2",
            "1 / (2 / tau)",
            "0.25 - tau / 2 * 3",
        ] {
            let e = Expr::parse(text).unwrap();
            let printed = e.to_string();
            assert_eq!(Expr::parse(&printed).unwrap(), e, "{text} -> {printed}");
        }
    }
}
