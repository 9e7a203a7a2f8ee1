//! Scalar values with exact numeric semantics.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::Arc;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::EvalError;

/// Declared column type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnType {
    Int,
    Dec,
    Str,
}

impl ColumnType {
    pub fn name(self) -> &'static str {
        match self {
            ColumnType::Int => "Int",
            ColumnType::Dec => "Dec",
            ColumnType::Str => "Str",
        }
    }

    /// Whether a value may be stored in a column of this type. `Dec`
    /// columns are numeric and also hold `Int` values unchanged.
    pub fn admits(self, v: &Value) -> bool {
        matches!(
            (self, v),
            (_, Value::Null)
                | (ColumnType::Int, Value::Int(_))
                | (ColumnType::Dec, Value::Int(_) | Value::Dec(_))
                | (ColumnType::Str, Value::Str(_))
        )
    }
}

impl fmt::Display for ColumnType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ColumnType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "int" | "integer" => Ok(ColumnType::Int),
            "dec" | "decimal" | "numeric" => Ok(ColumnType::Dec),
            "str" | "text" | "string" => Ok(ColumnType::Str),
            other => Err(format!("unknown column type `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }
}

/// A cell value. `Dec` is always kept reduced (the rational type normalizes).
#[derive(Clone, Debug)]
pub enum Value {
    Null,
    Int(i64),
    Dec(Box<BigRational>),
    Str(Arc<str>),
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }

    pub fn dec(r: BigRational) -> Value {
        Value::Dec(Box::new(r))
    }

    /// `num/den` as a Dec; panics on a zero denominator.
    pub fn ratio(num: i64, den: i64) -> Value {
        Value::dec(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "Null",
            Value::Int(_) => "Int",
            Value::Dec(_) => "Dec",
            Value::Str(_) => "Str",
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Value::Int(_) | Value::Dec(_))
    }

    pub fn to_rational(&self) -> Option<BigRational> {
        match self {
            Value::Int(i) => Some(BigRational::from_integer(BigInt::from(*i))),
            Value::Dec(r) => Some((**r).clone()),
            _ => None,
        }
    }

    /// Comparison used by condition atoms: `None` when either side is Null
    /// or the types are not comparable (Str vs numeric).
    pub fn compare(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Int(a), Value::Dec(b)) => Some(cmp_int_rat(*a, b)),
            (Value::Dec(a), Value::Int(b)) => Some(cmp_int_rat(*b, a).reverse()),
            (Value::Dec(a), Value::Dec(b)) => Some(a.cmp(b)),
            (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }

    pub fn arith(op: ArithOp, a: &Value, b: &Value) -> Result<Value, EvalError> {
        match (a, b) {
            (Value::Str(_), _) | (_, Value::Str(_)) => {
                Err(EvalError::TypeMismatch { op: op.symbol(), left: a.type_name(), right: b.type_name() })
            }
            (Value::Null, _) | (_, Value::Null) => Ok(Value::Null),
            (Value::Int(x), Value::Int(y)) => Ok(match op {
                ArithOp::Add => x.checked_add(*y).map_or(Value::Null, Value::Int),
                ArithOp::Sub => x.checked_sub(*y).map_or(Value::Null, Value::Int),
                ArithOp::Mul => x.checked_mul(*y).map_or(Value::Null, Value::Int),
                ArithOp::Div => {
                    if *y == 0 {
                        Value::Null
                    } else {
                        Value::ratio(*x, *y)
                    }
                }
            }),
            _ => {
                let x = a.to_rational().expect("numeric");
                let y = b.to_rational().expect("numeric");
                Ok(match op {
                    ArithOp::Add => Value::dec(x + y),
                    ArithOp::Sub => Value::dec(x - y),
                    ArithOp::Mul => Value::dec(x * y),
                    ArithOp::Div => {
                        if y.is_zero() {
                            Value::Null
                        } else {
                            Value::dec(x / y)
                        }
                    }
                })
            }
        }
    }

    /// Plain text form used in CSV cells. Null is the empty string.
    pub fn to_plain(&self) -> String {
        match self {
            Value::Null => String::new(),
            Value::Int(i) => i.to_string(),
            Value::Dec(r) => format_rational(r),
            Value::Str(s) => s.to_string(),
        }
    }

    /// Literal text in the statement grammar.
    pub fn to_sql(&self) -> String {
        match self {
            Value::Null => "NULL".to_string(),
            Value::Str(s) => format!("'{}'", s.replace('\'', "''")),
            Value::Dec(r) if r.denom().is_one() || terminates(r) => format_rational(r),
            // Non-terminating decimals have no literal form; a quotient does.
            Value::Dec(r) => format!("({} / {}.0)", r.numer(), r.denom()),
            other => other.to_plain(),
        }
    }

    /// Parse a numeric literal: `42` gives Int, `4.2` or `-1/3` gives Dec.
    pub fn parse_number(text: &str) -> Option<Value> {
        let t = text.trim();
        if t.is_empty() {
            return None;
        }
        if let Some((n, d)) = t.split_once('/') {
            let n = BigInt::from_str(n.trim()).ok()?;
            let d = BigInt::from_str(d.trim()).ok()?;
            if d.is_zero() {
                return None;
            }
            return Some(Value::dec(BigRational::new(n, d)));
        }
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        if body.is_empty() || !body.chars().all(|c| c.is_ascii_digit() || c == '.') {
            return None;
        }
        match body.split_once('.') {
            None => {
                let i: i64 = t.parse().ok()?;
                Some(Value::Int(i))
            }
            Some((int_part, frac)) => {
                if frac.contains('.') || (int_part.is_empty() && frac.is_empty()) {
                    return None;
                }
                let digits = format!("{int_part}{frac}");
                let mut n = BigInt::from_str(if digits.is_empty() { "0" } else { &digits }).ok()?;
                if neg {
                    n = -n;
                }
                let d = num_traits::pow(BigInt::from(10), frac.len());
                Some(Value::dec(BigRational::new(n, d)))
            }
        }
    }

    /// Parse a CSV cell for a column of the given type.
    pub fn parse_typed(text: &str, ty: ColumnType) -> Result<Value, String> {
        if text.is_empty() {
            return Ok(Value::Null);
        }
        match ty {
            ColumnType::Str => Ok(Value::str(text)),
            ColumnType::Int => match text.trim().parse::<i64>() {
                Ok(i) => Ok(Value::Int(i)),
                Err(_) => Err(format!("`{text}` is not an Int")),
            },
            ColumnType::Dec => Value::parse_number(text).ok_or_else(|| format!("`{text}` is not a number")),
        }
    }
}

fn cmp_int_rat(a: i64, b: &BigRational) -> Ordering {
    BigRational::from_integer(BigInt::from(a)).cmp(b)
}

/// True when the rational has a finite decimal expansion.
fn terminates(r: &BigRational) -> bool {
    let mut d = r.denom().clone();
    for p in [2u32, 5] {
        let p = BigInt::from(p);
        while (&d % &p).is_zero() {
            d /= &p;
        }
    }
    d.is_one()
}

/// Exact decimal text (`9000.0`, `0.4`, `-1.25`) or `num/den` when the
/// expansion does not terminate.
pub fn format_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        return format!("{}.0", r.numer());
    }
    if !terminates(r) {
        return format!("{}/{}", r.numer(), r.denom());
    }
    let den = r.denom();
    let mut k = 0usize;
    let mut scale = BigInt::one();
    while !(&scale % den).is_zero() {
        scale *= 10;
        k += 1;
    }
    let scaled = r.numer() * (&scale / den);
    let neg = scaled.is_negative();
    let digits = scaled.abs().to_string();
    let digits = if digits.len() <= k { format!("{}{}", "0".repeat(k + 1 - digits.len()), digits) } else { digits };
    let (ip, fp) = digits.split_at(digits.len() - k);
    format!("{}{}.{}", if neg { "-" } else { "" }, ip, fp)
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Total order for collections: Null < numbers < strings.
impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        fn rank(v: &Value) -> u8 {
            match v {
                Value::Null => 0,
                Value::Int(_) | Value::Dec(_) => 1,
                Value::Str(_) => 2,
            }
        }
        match self.compare(other) {
            Some(o) => o,
            None => rank(self).cmp(&rank(other)),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            Value::Null => 0u8.hash(state),
            Value::Int(i) => {
                1u8.hash(state);
                i.hash(state);
            }
            Value::Dec(r) => {
                1u8.hash(state);
                match (r.denom().is_one(), r.numer().to_i64()) {
                    (true, Some(i)) => i.hash(state),
                    _ => {
                        r.numer().hash(state);
                        r.denom().hash(state);
                    }
                }
            }
            Value::Str(s) => {
                2u8.hash(state);
                s.hash(state);
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            other => f.write_str(&other.to_plain()),
        }
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::str(s)
    }
}

// JSON form: null, integer, string, or {"dec": "<exact text>"}.
impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            Value::Null => s.serialize_none(),
            Value::Int(i) => s.serialize_i64(*i),
            Value::Str(v) => s.serialize_str(v),
            Value::Dec(r) => {
                let mut m = s.serialize_map(Some(1))?;
                m.serialize_entry("dec", &format_rational(r))?;
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = serde_json::Value::deserialize(d)?;
        match raw {
            serde_json::Value::Null => Ok(Value::Null),
            serde_json::Value::String(s) => Ok(Value::str(&s)),
            serde_json::Value::Number(n) => {
                n.as_i64().map(Value::Int).ok_or_else(|| D::Error::custom("integer out of range"))
            }
            serde_json::Value::Object(m) => match m.get("dec").and_then(|v| v.as_str()) {
                Some(text) => match Value::parse_number(text) {
                    Some(Value::Int(i)) => Ok(Value::dec(BigRational::from_integer(i.into()))),
                    Some(v) => Ok(v),
                    None => Err(D::Error::custom(format!("bad decimal `{text}`"))),
                },
                None => Err(D::Error::custom("expected {\"dec\": ...}")),
            },
            other => Err(D::Error::custom(format!("unsupported value {other}"))),
        }
    }
}

/// `gcd`-reduced check, exposed for tests of the storage invariant.
pub fn is_reduced(r: &BigRational) -> bool {
    r.numer().gcd(r.denom()).is_one() && r.denom().is_positive()
}
