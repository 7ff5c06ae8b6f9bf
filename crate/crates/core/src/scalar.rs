//! Operator coefficients: exact Gaussian rationals when the data is rational,
//! complex floats otherwise.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub type ExactComplex = Complex<BigRational>;

#[derive(Clone, Debug)]
pub enum Value {
    Exact(ExactComplex),
    Float(Complex64),
}

impl Value {
    pub fn zero() -> Self {
        Value::Exact(ExactComplex::zero())
    }

    pub fn one() -> Self {
        Value::int(1)
    }

    pub fn int(n: i64) -> Self {
        Value::Exact(Complex::new(BigRational::from_integer(n.into()), BigRational::zero()))
    }

    pub fn rational(r: BigRational) -> Self {
        Value::Exact(Complex::new(r, BigRational::zero()))
    }

    pub fn ratio(p: i64, q: i64) -> Self {
        Value::rational(BigRational::new(p.into(), q.into()))
    }

    pub fn exact(re: BigRational, im: BigRational) -> Self {
        Value::Exact(Complex::new(re, im))
    }

    pub fn float(x: f64) -> Self {
        Value::Float(Complex64::new(x, 0.0))
    }

    pub fn complex(z: Complex64) -> Self {
        Value::Float(z)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Value::Exact(_))
    }

    pub fn as_exact(&self) -> Option<&ExactComplex> {
        match self {
            Value::Exact(z) => Some(z),
            Value::Float(_) => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Value::Exact(z) => z.is_zero(),
            Value::Float(z) => *z == Complex64::new(0.0, 0.0),
        }
    }

    pub fn is_real(&self) -> bool {
        match self {
            Value::Exact(z) => z.im.is_zero(),
            Value::Float(z) => z.im == 0.0,
        }
    }

    /// Whether the value is a Gaussian integer.
    pub fn is_gaussian_integer(&self) -> bool {
        match self {
            Value::Exact(z) => z.re.is_integer() && z.im.is_integer(),
            Value::Float(_) => false,
        }
    }

    pub fn to_c64(&self) -> Complex64 {
        match self {
            Value::Exact(z) => Complex64::new(rat_to_f64(&z.re), rat_to_f64(&z.im)),
            Value::Float(z) => *z,
        }
    }

    pub fn re_f64(&self) -> f64 {
        self.to_c64().re
    }

    pub fn conj(&self) -> Self {
        match self {
            Value::Exact(z) => Value::Exact(z.conj()),
            Value::Float(z) => Value::Float(z.conj()),
        }
    }

    pub fn neg(&self) -> Self {
        match self {
            Value::Exact(z) => Value::Exact(-z.clone()),
            Value::Float(z) => Value::Float(-z),
        }
    }

    pub fn add(&self, other: &Value) -> Value {
        match (self, other) {
            (Value::Exact(a), Value::Exact(b)) => Value::Exact(a + b),
            _ => Value::Float(self.to_c64() + other.to_c64()),
        }
    }

    pub fn sub(&self, other: &Value) -> Value {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Value) -> Value {
        match (self, other) {
            (Value::Exact(a), Value::Exact(b)) => Value::Exact(a * b),
            _ => Value::Float(self.to_c64() * other.to_c64()),
        }
    }

    pub fn scale_f64(&self, x: f64) -> Complex64 {
        self.to_c64() * x
    }

    /// Modulus as a float, for diagnostics only.
    pub fn abs_f64(&self) -> f64 {
        self.to_c64().norm()
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Exact(a), Value::Exact(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Exact(z) if z.im.is_zero() => write!(f, "{}", z.re),
            Value::Exact(z) if z.re.is_zero() => write!(f, "{}i", z.im),
            Value::Exact(z) if z.im.is_negative() => write!(f, "{}-{}i", z.re, -z.im.clone()),
            Value::Exact(z) => write!(f, "{}+{}i", z.re, z.im),
            Value::Float(z) if z.im == 0.0 => write!(f, "{:?}", z.re),
            Value::Float(z) => write!(f, "{:?}{:+?}i", z.re, z.im),
        }
    }
}

impl FromStr for Value {
    type Err = Error;

    /// Accepts `p`, `p/q`, finite decimals (all exact), `sqrt(x)` (float),
    /// and complex forms `a+bi`, `a-bi`, `bi`, `i`.
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if t.is_empty() {
            return Err(Error::Config("empty number".into()));
        }
        if let Some(body) = t.strip_suffix('i') {
            // split at the last sign that is not at the start and not inside sqrt()
            let bytes = body.as_bytes();
            let mut split = None;
            let mut depth = 0i32;
            for (k, &c) in bytes.iter().enumerate() {
                match c {
                    b'(' => depth += 1,
                    b')' => depth -= 1,
                    b'+' | b'-' if k > 0 && depth == 0 && bytes[k - 1] != b'e' && bytes[k - 1] != b'E' => {
                        split = Some(k)
                    }
                    _ => {}
                }
            }
            let (re, im) = match split {
                Some(k) => (parse_real(&body[..k])?, &body[k..]),
                None => (Value::zero(), body),
            };
            let im = match im {
                "" | "+" => Value::one(),
                "-" => Value::int(-1),
                other => parse_real(other)?,
            };
            let i = Value::exact(BigRational::zero(), BigRational::one());
            return Ok(re.add(&im.mul(&i)));
        }
        parse_real(&t)
    }
}

fn parse_real(s: &str) -> Result<Value> {
    let bad = || Error::Config(format!("cannot parse number `{s}`"));
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let v = if let Some(inner) = body.strip_prefix("sqrt(").and_then(|r| r.strip_suffix(')')) {
        let x = parse_real(inner)?.re_f64();
        if x < 0.0 {
            return Err(bad());
        }
        Value::float(x.sqrt())
    } else if let Some((p, q)) = body.split_once('/') {
        let p: BigInt = p.parse().map_err(|_| bad())?;
        let q: BigInt = q.parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(bad());
        }
        Value::rational(BigRational::new(p, q))
    } else if body.contains(['e', 'E']) || body.eq_ignore_ascii_case("inf") || body.eq_ignore_ascii_case("nan") {
        let x: f64 = body.parse().map_err(|_| bad())?;
        if !x.is_finite() {
            return Err(bad());
        }
        Value::float(x)
    } else {
        Value::rational(parse_decimal(body).ok_or_else(bad)?)
    };
    Ok(if neg { v.neg() } else { v })
}

fn parse_decimal(s: &str) -> Option<BigRational> {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int}{frac}");
    let num: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    let den = num_traits::pow(BigInt::from(10), frac.len());
    Some(BigRational::new(num, den))
}

/// Nearest float to a rational, robust for huge numerators and denominators.
pub fn rat_to_f64(r: &BigRational) -> f64 {
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            return n / d;
        }
    }
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact rational value of a finite float.
pub fn f64_to_rat(x: f64) -> Option<BigRational> {
    BigRational::from_float(x)
}
