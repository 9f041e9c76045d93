use core::cmp::Ordering;
use core::fmt;

use thiserror::Error;

/// 64-bit integer extended with signed infinities.
///
/// The derived ordering places `NegInf` below every finite value and
/// `PosInf` above, so `min`/`max` are total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExtInt {
    NegInf,
    Fin(i64),
    PosInf,
}

/// Element type of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    Int,
    Float,
    Bool,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::Int => "int",
            DType::Float => "float",
            DType::Bool => "bool",
        }
    }

    pub fn from_name(s: &str) -> Option<DType> {
        match s {
            "int" => Some(DType::Int),
            "float" => Some(DType::Float),
            "bool" => Some(DType::Bool),
            _ => None,
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A tensor element.
#[derive(Clone, Copy, Debug)]
pub enum Scalar {
    Int(ExtInt),
    Real(f64),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScalarError {
    #[error("indefinite sum of +inf and -inf")]
    IndefiniteSum,
    #[error("integer overflow in {0}")]
    Overflow(&'static str),
    #[error("operator {op} is not defined for {left} and {right}")]
    TypeMismatch {
        op: &'static str,
        left: DType,
        right: DType,
    },
    #[error("operator {op} is not defined for {dtype}")]
    Unsupported { op: &'static str, dtype: DType },
    #[error("cannot cast {value} to int")]
    BadCast { value: f64 },
}

// NaN equals NaN so that fixpoint checks terminate on NaN-carrying tensors.
impl PartialEq for Scalar {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (Scalar::Real(a), Scalar::Real(b)) => a == b || (a.is_nan() && b.is_nan()),
            (Scalar::Bool(a), Scalar::Bool(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Scalar {}

impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int(ExtInt::Fin(v))
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Real(v)
    }
}

impl Scalar {
    pub const INF: Scalar = Scalar::Int(ExtInt::PosInf);
    pub const NEG_INF: Scalar = Scalar::Int(ExtInt::NegInf);

    pub fn int(v: i64) -> Scalar {
        Scalar::Int(ExtInt::Fin(v))
    }

    pub fn dtype(&self) -> DType {
        match self {
            Scalar::Int(_) => DType::Int,
            Scalar::Real(_) => DType::Float,
            Scalar::Bool(_) => DType::Bool,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Scalar::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Scalar::Int(ExtInt::Fin(v)) => Some(*v),
            _ => None,
        }
    }

    /// Numeric "truthiness": non-zero numbers and `true`.
    pub fn truthy(&self) -> bool {
        match self {
            Scalar::Int(ExtInt::Fin(v)) => *v != 0,
            Scalar::Int(_) => true,
            Scalar::Real(v) => *v != 0.0,
            Scalar::Bool(b) => *b,
        }
    }

    /// Ordering between two scalars of the same dtype. Reals use IEEE total order.
    pub fn try_cmp(&self, other: &Scalar) -> Result<Ordering, ScalarError> {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => Ok(a.cmp(b)),
            (Scalar::Real(a), Scalar::Real(b)) => Ok(a.total_cmp(b)),
            (Scalar::Bool(a), Scalar::Bool(b)) => Ok(a.cmp(b)),
            _ => Err(self.mismatch("compare", other)),
        }
    }

    fn mismatch(&self, op: &'static str, other: &Scalar) -> ScalarError {
        ScalarError::TypeMismatch {
            op,
            left: self.dtype(),
            right: other.dtype(),
        }
    }

    pub fn add(&self, other: &Scalar) -> Result<Scalar, ScalarError> {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => ext_add(*a, *b).map(Scalar::Int),
            (Scalar::Real(a), Scalar::Real(b)) => Ok(Scalar::Real(a + b)),
            (Scalar::Bool(a), Scalar::Bool(b)) => Ok(Scalar::Bool(*a || *b)),
            _ => Err(self.mismatch("add", other)),
        }
    }

    pub fn mul(&self, other: &Scalar) -> Result<Scalar, ScalarError> {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => ext_mul(*a, *b).map(Scalar::Int),
            (Scalar::Real(a), Scalar::Real(b)) => {
                if *a == 0.0 || *b == 0.0 {
                    Ok(Scalar::Real(0.0))
                } else {
                    Ok(Scalar::Real(a * b))
                }
            }
            (Scalar::Bool(a), Scalar::Bool(b)) => Ok(Scalar::Bool(*a && *b)),
            _ => Err(self.mismatch("mul", other)),
        }
    }

    pub fn min(&self, other: &Scalar) -> Result<Scalar, ScalarError> {
        Ok(if self.try_cmp(other)? == Ordering::Greater {
            *other
        } else {
            *self
        })
    }

    pub fn max(&self, other: &Scalar) -> Result<Scalar, ScalarError> {
        Ok(if self.try_cmp(other)? == Ordering::Less {
            *other
        } else {
            *self
        })
    }

    pub fn neg(&self) -> Result<Scalar, ScalarError> {
        match self {
            Scalar::Int(ExtInt::Fin(v)) => v
                .checked_neg()
                .map(Scalar::int)
                .ok_or(ScalarError::Overflow("neg")),
            Scalar::Int(ExtInt::PosInf) => Ok(Scalar::NEG_INF),
            Scalar::Int(ExtInt::NegInf) => Ok(Scalar::INF),
            Scalar::Real(v) => Ok(Scalar::Real(-v)),
            Scalar::Bool(_) => Err(ScalarError::Unsupported {
                op: "neg",
                dtype: DType::Bool,
            }),
        }
    }

    /// Converts to `target`. `source_empty` decides truth when casting numbers to bool.
    pub fn cast(&self, target: DType, source_empty: &Scalar) -> Result<Scalar, ScalarError> {
        match (self, target) {
            (_, t) if t == self.dtype() => Ok(*self),
            (_, DType::Bool) => Ok(Scalar::Bool(self != source_empty)),
            (Scalar::Bool(b), DType::Int) => Ok(Scalar::int(*b as i64)),
            (Scalar::Bool(b), DType::Float) => Ok(Scalar::Real(if *b { 1.0 } else { 0.0 })),
            (Scalar::Int(v), DType::Float) => Ok(Scalar::Real(match v {
                ExtInt::NegInf => f64::NEG_INFINITY,
                ExtInt::Fin(x) => *x as f64,
                ExtInt::PosInf => f64::INFINITY,
            })),
            (Scalar::Real(v), DType::Int) => real_to_int(*v).map(Scalar::Int),
            _ => unreachable!("same-dtype casts handled above"),
        }
    }

    /// Parses a literal of the given dtype as written in dumps and programs.
    pub fn parse_as(text: &str, dtype: DType) -> Option<Scalar> {
        match dtype {
            DType::Int => match text {
                "inf" | "+inf" => Some(Scalar::INF),
                "-inf" => Some(Scalar::NEG_INF),
                _ => text.parse::<i64>().ok().map(Scalar::int),
            },
            DType::Float => match text {
                "inf" | "+inf" => Some(Scalar::Real(f64::INFINITY)),
                "-inf" => Some(Scalar::Real(f64::NEG_INFINITY)),
                "nan" => Some(Scalar::Real(f64::NAN)),
                _ => text.parse::<f64>().ok().map(Scalar::Real),
            },
            DType::Bool => match text {
                "true" => Some(Scalar::Bool(true)),
                "false" => Some(Scalar::Bool(false)),
                _ => None,
            },
        }
    }
}

fn ext_add(a: ExtInt, b: ExtInt) -> Result<ExtInt, ScalarError> {
    use ExtInt::*;
    match (a, b) {
        (PosInf, NegInf) | (NegInf, PosInf) => Err(ScalarError::IndefiniteSum),
        (PosInf, _) | (_, PosInf) => Ok(PosInf),
        (NegInf, _) | (_, NegInf) => Ok(NegInf),
        (Fin(x), Fin(y)) => x.checked_add(y).map(Fin).ok_or(ScalarError::Overflow("add")),
    }
}

fn ext_mul(a: ExtInt, b: ExtInt) -> Result<ExtInt, ScalarError> {
    use ExtInt::*;
    let sign = |v: ExtInt| match v {
        NegInf => -1,
        PosInf => 1,
        Fin(x) => x.signum(),
    };
    match (a, b) {
        (Fin(0), _) | (_, Fin(0)) => Ok(Fin(0)),
        (Fin(x), Fin(y)) => x.checked_mul(y).map(Fin).ok_or(ScalarError::Overflow("mul")),
        _ => Ok(if sign(a) * sign(b) > 0 { PosInf } else { NegInf }),
    }
}

fn real_to_int(v: f64) -> Result<ExtInt, ScalarError> {
    if v.is_nan() {
        return Err(ScalarError::BadCast { value: v });
    }
    if v == f64::INFINITY {
        return Ok(ExtInt::PosInf);
    }
    if v == f64::NEG_INFINITY {
        return Ok(ExtInt::NegInf);
    }
    let t = libm::trunc(v);
    // i64::MAX is not exactly representable; 2^63 is the first out-of-range value.
    if !(-9_223_372_036_854_775_808.0..9_223_372_036_854_775_808.0).contains(&t) {
        return Err(ScalarError::BadCast { value: v });
    }
    Ok(ExtInt::Fin(t as i64))
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Int(ExtInt::Fin(v)) => write!(f, "{v}"),
            Scalar::Int(ExtInt::PosInf) => f.write_str("inf"),
            Scalar::Int(ExtInt::NegInf) => f.write_str("-inf"),
            Scalar::Real(v) if v.is_nan() => f.write_str("nan"),
            Scalar::Real(v) if *v == f64::INFINITY => f.write_str("inf"),
            Scalar::Real(v) if *v == f64::NEG_INFINITY => f.write_str("-inf"),
            Scalar::Real(v) => write!(f, "{v:?}"),
            Scalar::Bool(b) => write!(f, "{b}"),
        }
    }
}
