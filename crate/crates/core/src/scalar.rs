//! Numbers that stay exact while the inputs allow it.
//!
//! Model files mostly contain decimal or fractional literals, every one of
//! which is a rational number. Preference values computed from them (path
//! probabilities, hyperbolic discount factors, piecewise-linear rewards) are
//! rational too, so the strict inequality that drives the stopping map can be
//! decided exactly. As soon as a float enters (an exponential discount, a
//! user flow returning `f64`, an `i128` overflow) the value degrades to
//! [`Scalar::Approx`] and comparisons fall back to the tolerance
//! [`CMP_TOL`], with ties treated as non-strict.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_rational::Ratio;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, Signed, ToPrimitive, Zero};

pub type Rational = Ratio<i128>;

/// Comparison tolerance used whenever one side of a comparison is inexact.
pub const CMP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug)]
pub enum Scalar {
    Exact(Rational),
    Approx(f64),
}

impl Scalar {
    pub const ZERO: Scalar = Scalar::Exact(Ratio::new_raw(0, 1));
    pub const ONE: Scalar = Scalar::Exact(Ratio::new_raw(1, 1));

    pub fn int(n: i64) -> Self {
        Scalar::Exact(Rational::from_integer(n as i128))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        assert!(den != 0, "zero denominator");
        Scalar::Exact(Rational::new(num as i128, den as i128))
    }

    pub fn float(x: f64) -> Self {
        Scalar::Approx(x)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Scalar::Exact(_))
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Scalar::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            Scalar::Approx(x) => *x,
        }
    }

    pub fn as_rational(&self) -> Option<Rational> {
        match self {
            Scalar::Exact(r) => Some(*r),
            Scalar::Approx(_) => None,
        }
    }

    pub fn abs(self) -> Self {
        match self {
            Scalar::Exact(r) => Scalar::Exact(r.abs()),
            Scalar::Approx(x) => Scalar::Approx(x.abs()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Scalar::Exact(r) => r.is_zero(),
            Scalar::Approx(x) => *x == 0.0,
        }
    }

    pub fn max(self, other: Self) -> Self {
        if self.cmp_tol(&other) == Ordering::Less {
            other
        } else {
            self
        }
    }

    pub fn min(self, other: Self) -> Self {
        if other.cmp_tol(&self) == Ordering::Less {
            other
        } else {
            self
        }
    }

    /// Integer power; negative exponents invert.
    pub fn powi(self, exp: i32) -> Self {
        let mut acc = Scalar::ONE;
        for _ in 0..exp.unsigned_abs() {
            acc = acc * self;
        }
        if exp < 0 {
            Scalar::ONE / acc
        } else {
            acc
        }
    }

    /// Three-way comparison. Exact against exact is decided exactly; anything
    /// else is `Equal` when the values are within [`CMP_TOL`].
    pub fn cmp_tol(&self, other: &Scalar) -> Ordering {
        match (self, other) {
            (Scalar::Exact(a), Scalar::Exact(b)) => a.cmp(b),
            _ => {
                let (a, b) = (self.to_f64(), other.to_f64());
                if (a - b).abs() <= CMP_TOL {
                    Ordering::Equal
                } else if a < b {
                    Ordering::Less
                } else {
                    Ordering::Greater
                }
            }
        }
    }

    pub fn gt(&self, other: &Scalar) -> bool {
        self.cmp_tol(other) == Ordering::Greater
    }

    pub fn ge(&self, other: &Scalar) -> bool {
        self.cmp_tol(other) != Ordering::Less
    }

    pub fn tol_eq(&self, other: &Scalar) -> bool {
        self.cmp_tol(other) == Ordering::Equal
    }

    /// Parses `12`, `-0.25`, `+1`, `3/8`, `1e-3` into an exact value where
    /// possible.
    pub fn parse(text: &str) -> Option<Scalar> {
        let text = text.trim();
        if let Some((num, den)) = text.split_once('/') {
            let num = parse_decimal(num.trim())?;
            let den = parse_decimal(den.trim())?;
            if den.is_zero() {
                return None;
            }
            return Some(Scalar::Exact(num) / Scalar::Exact(den));
        }
        if let Some(r) = parse_decimal(text) {
            return Some(Scalar::Exact(r));
        }
        text.parse::<f64>().ok().filter(|x| x.is_finite()).map(Scalar::Approx)
    }
}

/// Exact decimal literal parser: optional sign, digits, optional fraction,
/// optional exponent.
fn parse_decimal(text: &str) -> Option<Rational> {
    let (neg, body) = match text.as_bytes().first()? {
        b'-' => (true, &text[1..]),
        b'+' => (false, &text[1..]),
        _ => (false, text),
    };
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], body[i + 1..].parse::<i32>().ok()?),
        None => (body, 0),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().chain(frac_part.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut num: i128 = digits.trim_start_matches('0').parse().unwrap_or(0);
    if digits.trim_start_matches('0').len() > 36 {
        return None;
    }
    let scale = exponent - frac_part.len() as i32;
    if scale.unsigned_abs() > 36 {
        return None;
    }
    let pow = 10i128.checked_pow(scale.unsigned_abs())?;
    if neg {
        num = -num;
    }
    if scale >= 0 {
        Some(Rational::from_integer(num.checked_mul(pow)?))
    } else {
        Some(Rational::new(num, pow))
    }
}

macro_rules! exact_or_float {
    ($trait:ident, $method:ident, $checked:ident, $op:tt) => {
        impl $trait for Scalar {
            type Output = Scalar;
            fn $method(self, rhs: Scalar) -> Scalar {
                if let (Scalar::Exact(a), Scalar::Exact(b)) = (self, rhs) {
                    if let Some(r) = a.$checked(&b) {
                        return Scalar::Exact(r);
                    }
                }
                Scalar::Approx(self.to_f64() $op rhs.to_f64())
            }
        }
    };
}

exact_or_float!(Add, add, checked_add, +);
exact_or_float!(Sub, sub, checked_sub, -);
exact_or_float!(Mul, mul, checked_mul, *);

impl Div for Scalar {
    type Output = Scalar;
    fn div(self, rhs: Scalar) -> Scalar {
        if let (Scalar::Exact(a), Scalar::Exact(b)) = (self, rhs) {
            if !b.is_zero() {
                if let Some(r) = a.checked_div(&b) {
                    return Scalar::Exact(r);
                }
            }
        }
        Scalar::Approx(self.to_f64() / rhs.to_f64())
    }
}

impl Neg for Scalar {
    type Output = Scalar;
    fn neg(self) -> Scalar {
        match self {
            Scalar::Exact(r) => Scalar::Exact(-r),
            Scalar::Approx(x) => Scalar::Approx(-x),
        }
    }
}

/// Structural equality: exact values compare by value, floats by value, and
/// an exact value never equals a float. Use [`Scalar::cmp_tol`] for numeric
/// comparisons.
impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Exact(a), Scalar::Exact(b)) => a == b,
            (Scalar::Approx(a), Scalar::Approx(b)) => a == b,
            _ => false,
        }
    }
}

impl std::iter::Sum for Scalar {
    fn sum<I: Iterator<Item = Scalar>>(iter: I) -> Scalar {
        iter.fold(Scalar::ZERO, |a, b| a + b)
    }
}

impl From<f64> for Scalar {
    fn from(x: f64) -> Self {
        Scalar::Approx(x)
    }
}

impl From<i64> for Scalar {
    fn from(n: i64) -> Self {
        Scalar::int(n)
    }
}

/// Exact values print as integers, terminating decimals, or `p/q`; the
/// output is accepted back by [`Scalar::parse`].
impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Exact(r) => {
                if r.is_integer() {
                    return write!(f, "{}", r.numer());
                }
                match terminating_decimal(r) {
                    Some(s) => f.write_str(&s),
                    None => write!(f, "{}/{}", r.numer(), r.denom()),
                }
            }
            Scalar::Approx(x) => write!(f, "{x:?}"),
        }
    }
}

fn terminating_decimal(r: &Rational) -> Option<String> {
    let mut den = *r.denom();
    let (mut twos, mut fives) = (0u32, 0u32);
    while den % 2 == 0 {
        den /= 2;
        twos += 1;
    }
    while den % 5 == 0 {
        den /= 5;
        fives += 1;
    }
    if den != 1 {
        return None;
    }
    let places = twos.max(fives);
    let scale = 10i128.checked_pow(places)?;
    let scaled = r.numer().checked_mul(&(scale / r.denom()))?;
    let sign = if scaled < 0 { "-" } else { "" };
    let digits = scaled.unsigned_abs().to_string();
    let places = places as usize;
    let padded = format!("{digits:0>width$}", width = places + 1);
    let (int_part, frac_part) = padded.split_at(padded.len() - places);
    Some(format!("{sign}{int_part}.{frac_part}"))
}
