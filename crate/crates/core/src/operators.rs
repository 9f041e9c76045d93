//! Merge tables, compute/unary/coordinate operators, and the registry that names them.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::fibertree::{Coord, DType, ExtInt, Scalar, ScalarError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpError {
    #[error(transparent)]
    Scalar(#[from] ScalarError),
    #[error("unknown {kind} operator `{name}`")]
    Unknown { kind: OpKind, name: String },
    #[error("{kind} operator `{name}` is already registered")]
    Duplicate { kind: OpKind, name: String },
    #[error("operator `{name}` claims to be {property} but {witness}")]
    FlagViolation {
        name: String,
        property: &'static str,
        witness: String,
    },
    #[error("coordinate operator `{0}` requires a positive count argument")]
    MissingCount(String),
    #[error("{0}")]
    User(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Merge,
    Binary,
    Unary,
    Coordinate,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::Merge => "merge",
            OpKind::Binary => "compute",
            OpKind::Unary => "unary",
            OpKind::Coordinate => "coordinate",
        })
    }
}

/// One of the sixteen existence truth tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MergeOp {
    name: &'static str,
    /// Indexed by `2 * left + right`: FF, FT, TF, TT.
    table: [bool; 4],
}

impl MergeOp {
    pub fn name(self) -> &'static str {
        self.name
    }

    pub fn table(self) -> [bool; 4] {
        self.table
    }

    pub fn eval(self, left: bool, right: bool) -> bool {
        self.table[2 * left as usize + right as usize]
    }

    pub fn by_name(name: &str) -> Option<MergeOp> {
        MERGE_OPS.iter().copied().find(|m| m.name == name)
    }

    pub const PASS: MergeOp = MERGE_OPS[0];
    pub const CAP: MergeOp = MERGE_OPS[2];
    pub const CUP: MergeOp = MERGE_OPS[8];
}

const N: bool = false;
const Y: bool = true;

/// All merge operators in their canonical order.
pub const MERGE_OPS: [MergeOp; 16] = [
    MergeOp { name: "pass", table: [Y, Y, Y, Y] },
    MergeOp { name: "none", table: [N, N, N, N] },
    MergeOp { name: "cap", table: [N, N, N, Y] },
    MergeOp { name: "lonly", table: [N, N, Y, N] },
    MergeOp { name: "left", table: [N, N, Y, Y] },
    MergeOp { name: "ronly", table: [N, Y, N, N] },
    MergeOp { name: "right", table: [N, Y, N, Y] },
    MergeOp { name: "xor", table: [N, Y, Y, N] },
    MergeOp { name: "cup", table: [N, Y, Y, Y] },
    MergeOp { name: "nor", table: [Y, N, N, N] },
    MergeOp { name: "eqv", table: [Y, N, N, Y] },
    MergeOp { name: "notr", table: [Y, N, Y, N] },
    MergeOp { name: "bimpa", table: [Y, N, Y, Y] },
    MergeOp { name: "notl", table: [Y, Y, N, N] },
    MergeOp { name: "aimpb", table: [Y, Y, N, Y] },
    MergeOp { name: "nand", table: [Y, Y, Y, N] },
];

pub fn merge_eval(name: &str, left: bool, right: bool) -> Result<bool, OpError> {
    MergeOp::by_name(name)
        .map(|m| m.eval(left, right))
        .ok_or_else(|| OpError::Unknown {
            kind: OpKind::Merge,
            name: name.to_string(),
        })
}

/// What a compute operator sees besides its two operands.
#[derive(Clone, Copy, Debug)]
pub struct OpCtx<'a> {
    /// Current iteration point, in the statement's canonical variable order.
    pub point: &'a [Coord],
    pub left_empty: Scalar,
    pub right_empty: Scalar,
    pub out_empty: Scalar,
}

impl<'a> OpCtx<'a> {
    pub fn uniform(point: &'a [Coord], empty: Scalar) -> Self {
        OpCtx {
            point,
            left_empty: empty,
            right_empty: empty,
            out_empty: empty,
        }
    }
}

pub type BinaryFn = dyn Fn(&OpCtx<'_>, Scalar, Scalar) -> Result<Scalar, OpError> + Send + Sync;
pub type UnaryFn = dyn Fn(Scalar) -> Result<Scalar, OpError> + Send + Sync;
pub type CoordFn = dyn Fn(&CoordCall<'_>) -> Result<Vec<Vec<Coord>>, OpError> + Send + Sync;

#[derive(Clone)]
pub struct ComputeOp {
    name: String,
    f: Arc<BinaryFn>,
    commutative: bool,
    associative: bool,
    sample: DType,
}

impl ComputeOp {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&OpCtx<'_>, Scalar, Scalar) -> Result<Scalar, OpError> + Send + Sync + 'static,
    {
        ComputeOp {
            name: name.into(),
            f: Arc::new(f),
            commutative: false,
            associative: false,
            sample: DType::Int,
        }
    }

    pub fn commutative(mut self) -> Self {
        self.commutative = true;
        self
    }

    pub fn associative(mut self) -> Self {
        self.associative = true;
        self
    }

    /// The dtype used when checking the claimed flags.
    pub fn sampled_over(mut self, dtype: DType) -> Self {
        self.sample = dtype;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_commutative(&self) -> bool {
        self.commutative
    }

    pub fn is_associative(&self) -> bool {
        self.associative
    }

    pub fn apply(&self, ctx: &OpCtx<'_>, left: Scalar, right: Scalar) -> Result<Scalar, OpError> {
        (self.f)(ctx, left, right)
    }

    /// Checks the claimed flags on 1000 random samples.
    pub fn verify_flags(&self) -> Result<(), OpError> {
        const SAMPLES: usize = 1000;
        let mut rng = SmallRng::seed_from_u64(0x5eed_f1a9);
        let empty = match self.sample {
            DType::Int => Scalar::int(0),
            DType::Float => Scalar::Real(0.0),
            DType::Bool => Scalar::Bool(false),
        };
        let ctx = OpCtx::uniform(&[], empty);
        let draw = |rng: &mut SmallRng| match self.sample {
            DType::Int => match rng.gen_range(0..20) {
                0 => Scalar::INF,
                _ => Scalar::int(rng.gen_range(-20..=20)),
            },
            DType::Float => Scalar::Real(rng.gen_range(-20..=20) as f64),
            DType::Bool => Scalar::Bool(rng.gen()),
        };
        let violation = |property, a: &Scalar, b: &Scalar, c: Option<&Scalar>| OpError::FlagViolation {
            name: self.name.clone(),
            property,
            witness: match c {
                Some(c) => alloc::format!("fails on ({a}, {b}, {c})"),
                None => alloc::format!("fails on ({a}, {b})"),
            },
        };
        for _ in 0..SAMPLES {
            let (a, b, c) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            if self.commutative {
                if let (Ok(x), Ok(y)) = (self.apply(&ctx, a, b), self.apply(&ctx, b, a)) {
                    if x != y {
                        return Err(violation("commutative", &a, &b, None));
                    }
                }
            }
            if self.associative {
                let l = self.apply(&ctx, a, b).and_then(|ab| self.apply(&ctx, ab, c));
                let r = self.apply(&ctx, b, c).and_then(|bc| self.apply(&ctx, a, bc));
                if let (Ok(x), Ok(y)) = (l, r) {
                    if x != y {
                        return Err(violation("associative", &a, &b, Some(&c)));
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for ComputeOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComputeOp")
            .field("name", &self.name)
            .field("commutative", &self.commutative)
            .field("associative", &self.associative)
            .finish()
    }
}

#[derive(Clone)]
pub struct UnaryOp {
    name: String,
    f: Arc<UnaryFn>,
}

impl UnaryOp {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(Scalar) -> Result<Scalar, OpError> + Send + Sync + 'static,
    {
        UnaryOp {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn apply(&self, v: Scalar) -> Result<Scalar, OpError> {
        (self.f)(v)
    }
}

impl fmt::Debug for UnaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("UnaryOp").field(&self.name).finish()
    }
}

/// Arguments to a coordinate operator.
#[derive(Clone, Copy, Debug)]
pub struct CoordCall<'a> {
    pub point: &'a [Coord],
    /// The `k` in `minval(k)` and friends.
    pub count: Option<u64>,
    pub rhs_coord: &'a [Coord],
    pub rhs_value: Scalar,
    /// Current output fiber, coordinate-ascending.
    pub fiber: &'a [(Vec<Coord>, Scalar)],
}

impl CoordCall<'_> {
    /// The fiber with the RHS entry inserted (replacing an equal coordinate).
    pub fn candidates(&self) -> Vec<(Vec<Coord>, Scalar)> {
        let mut out: Vec<(Vec<Coord>, Scalar)> = self
            .fiber
            .iter()
            .filter(|(c, _)| c.as_slice() != self.rhs_coord)
            .cloned()
            .collect();
        out.push((self.rhs_coord.to_vec(), self.rhs_value));
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }
}

#[derive(Clone)]
pub struct CoordOp {
    name: String,
    f: Arc<CoordFn>,
}

impl CoordOp {
    pub fn new<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&CoordCall<'_>) -> Result<Vec<Vec<Coord>>, OpError> + Send + Sync + 'static,
    {
        CoordOp {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Surviving coordinates, ascending.
    pub fn apply(&self, call: &CoordCall<'_>) -> Result<Vec<Vec<Coord>>, OpError> {
        let mut out = (self.f)(call)?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Debug for CoordOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("CoordOp").field(&self.name).finish()
    }
}

/// Named operators available to programs.
#[derive(Clone, Debug, Default)]
pub struct OperatorRegistry {
    binary: BTreeMap<String, ComputeOp>,
    unary: BTreeMap<String, UnaryOp>,
    coord: BTreeMap<String, CoordOp>,
}

impl OperatorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut r = Self::default();
        for op in builtin_binary() {
            r.binary.insert(op.name.clone(), op);
        }
        for op in builtin_unary() {
            r.unary.insert(op.name.clone(), op);
        }
        for op in builtin_coord() {
            r.coord.insert(op.name.clone(), op);
        }
        r
    }

    pub fn register_binary(&mut self, op: ComputeOp) -> Result<(), OpError> {
        if self.binary.contains_key(&op.name) {
            return Err(OpError::Duplicate {
                kind: OpKind::Binary,
                name: op.name,
            });
        }
        op.verify_flags()?;
        self.binary.insert(op.name.clone(), op);
        Ok(())
    }

    pub fn register_unary(&mut self, op: UnaryOp) -> Result<(), OpError> {
        if self.unary.contains_key(&op.name) {
            return Err(OpError::Duplicate {
                kind: OpKind::Unary,
                name: op.name,
            });
        }
        self.unary.insert(op.name.clone(), op);
        Ok(())
    }

    pub fn register_coord(&mut self, op: CoordOp) -> Result<(), OpError> {
        if self.coord.contains_key(&op.name) {
            return Err(OpError::Duplicate {
                kind: OpKind::Coordinate,
                name: op.name,
            });
        }
        self.coord.insert(op.name.clone(), op);
        Ok(())
    }

    /// Swaps the implementation of an existing compute operator. Used for fault injection.
    pub fn replace_binary(&mut self, op: ComputeOp) -> Result<(), OpError> {
        match self.binary.get_mut(&op.name) {
            Some(slot) => {
                *slot = op;
                Ok(())
            }
            None => Err(unknown(OpKind::Binary, &op.name)),
        }
    }

    pub fn binary(&self, name: &str) -> Result<&ComputeOp, OpError> {
        self.binary.get(name).ok_or_else(|| unknown(OpKind::Binary, name))
    }

    pub fn unary(&self, name: &str) -> Result<&UnaryOp, OpError> {
        self.unary.get(name).ok_or_else(|| unknown(OpKind::Unary, name))
    }

    pub fn coord(&self, name: &str) -> Result<&CoordOp, OpError> {
        self.coord.get(name).ok_or_else(|| unknown(OpKind::Coordinate, name))
    }

    pub fn has_binary(&self, name: &str) -> bool {
        self.binary.contains_key(name)
    }

    pub fn has_unary(&self, name: &str) -> bool {
        self.unary.contains_key(name)
    }

    pub fn has_coord(&self, name: &str) -> bool {
        self.coord.contains_key(name)
    }

    pub fn binary_names(&self) -> impl Iterator<Item = &str> {
        self.binary.keys().map(String::as_str)
    }
}

fn unknown(kind: OpKind, name: &str) -> OpError {
    OpError::Unknown {
        kind,
        name: name.to_string(),
    }
}

pub fn cast(v: Scalar, target: DType, source_empty: Scalar) -> Result<Scalar, OpError> {
    Ok(v.cast(target, &source_empty)?)
}

fn int_pow(base: ExtInt, exp: ExtInt) -> Result<ExtInt, ScalarError> {
    let e = match exp {
        ExtInt::Fin(e) if e >= 0 => e,
        _ => {
            return Err(ScalarError::Unsupported {
                op: "pow with a negative or infinite exponent",
                dtype: DType::Int,
            })
        }
    };
    if e == 0 {
        return Ok(ExtInt::Fin(1));
    }
    match base {
        ExtInt::Fin(b) => u32::try_from(e)
            .ok()
            .and_then(|e| b.checked_pow(e))
            .map(ExtInt::Fin)
            .ok_or(ScalarError::Overflow("pow")),
        ExtInt::PosInf => Ok(ExtInt::PosInf),
        ExtInt::NegInf => Ok(if e % 2 == 0 { ExtInt::PosInf } else { ExtInt::NegInf }),
    }
}

fn builtin_binary() -> Vec<ComputeOp> {
    let mismatch = |op, a: Scalar, b: Scalar| {
        OpError::Scalar(ScalarError::TypeMismatch {
            op,
            left: a.dtype(),
            right: b.dtype(),
        })
    };
    Vec::from([
        ComputeOp::new("add", |_, a, b| Ok(a.add(&b)?)).commutative().associative(),
        ComputeOp::new("mul", |_, a, b| Ok(a.mul(&b)?)).commutative().associative(),
        ComputeOp::new("min", |_, a, b| Ok(a.min(&b)?)).commutative().associative(),
        ComputeOp::new("max", |_, a, b| Ok(a.max(&b)?)).commutative().associative(),
        ComputeOp::new("and", move |ctx, a, b| match (a, b) {
            (Scalar::Bool(x), Scalar::Bool(y)) => Ok(Scalar::Bool(x && y)),
            _ if a.dtype() == b.dtype() => Ok(if a != ctx.left_empty && b != ctx.right_empty {
                a
            } else {
                ctx.out_empty
            }),
            _ => Err(mismatch("and", a, b)),
        })
        .commutative()
        .associative()
        .sampled_over(DType::Bool),
        ComputeOp::new("or", move |ctx, a, b| match (a, b) {
            (Scalar::Bool(x), Scalar::Bool(y)) => Ok(Scalar::Bool(x || y)),
            _ if a.dtype() == b.dtype() => Ok(if a != ctx.left_empty { a } else { b }),
            _ => Err(mismatch("or", a, b)),
        })
        .commutative()
        .associative()
        .sampled_over(DType::Bool),
        ComputeOp::new("any", |_, a, _| Ok(a)),
        ComputeOp::new("takeleft", |_, a, _| Ok(a)),
        ComputeOp::new("takeright", |_, _, b| Ok(b)),
        ComputeOp::new("pass1", |_, _, b| Ok(b)),
        ComputeOp::new("update", |ctx, a, b| {
            Ok(if a == ctx.left_empty {
                b
            } else if b == ctx.right_empty {
                a
            } else {
                b
            })
        }),
        ComputeOp::new("ifeq", |ctx, a, b| Ok(if a == b { a } else { ctx.out_empty })),
        ComputeOp::new("leqsel", |ctx, a, b| {
            Ok(if b.try_cmp(&a)? != Ordering::Greater {
                b
            } else {
                ctx.out_empty
            })
        }),
        ComputeOp::new("ltsel", |ctx, a, b| {
            Ok(if b.try_cmp(&a)? == Ordering::Less {
                b
            } else {
                ctx.out_empty
            })
        }),
        ComputeOp::new("pow", move |_, a, b| match (a, b) {
            (Scalar::Int(x), Scalar::Int(y)) => Ok(Scalar::Int(int_pow(x, y)?)),
            (Scalar::Real(x), Scalar::Real(y)) => Ok(Scalar::Real(libm::pow(x, y))),
            _ => Err(mismatch("pow", a, b)),
        }),
    ])
}

fn builtin_unary() -> Vec<UnaryOp> {
    Vec::from([
        UnaryOp::new("pass", Ok),
        UnaryOp::new("not", |v| {
            Ok(match v {
                Scalar::Bool(b) => Scalar::Bool(!b),
                Scalar::Int(_) => Scalar::int(!v.truthy() as i64),
                Scalar::Real(_) => Scalar::Real(if v.truthy() { 0.0 } else { 1.0 }),
            })
        }),
        UnaryOp::new("eexp", |v| match v {
            Scalar::Real(x) => Ok(Scalar::Real(libm::exp(x))),
            Scalar::Int(_) => match v.cast(DType::Float, &Scalar::int(0))? {
                Scalar::Real(x) => Ok(Scalar::Real(libm::exp(x))),
                _ => unreachable!(),
            },
            Scalar::Bool(_) => Err(OpError::Scalar(ScalarError::Unsupported {
                op: "eexp",
                dtype: DType::Bool,
            })),
        }),
        UnaryOp::new("neg", |v| Ok(v.neg()?)),
    ])
}

fn ranked_keep(
    call: &CoordCall<'_>,
    name: &str,
    key: impl Fn(&(Vec<Coord>, Scalar), &(Vec<Coord>, Scalar)) -> Result<Ordering, ScalarError>,
) -> Result<Vec<Vec<Coord>>, OpError> {
    let k = call
        .count
        .filter(|k| *k > 0)
        .ok_or_else(|| OpError::MissingCount(name.to_string()))? as usize;
    let mut cands = call.candidates();
    let mut err = None;
    cands.sort_by(|a, b| match key(a, b) {
        Ok(o) => o.then_with(|| a.0.cmp(&b.0)),
        Err(e) => {
            err.get_or_insert(e);
            Ordering::Equal
        }
    });
    if let Some(e) = err {
        return Err(e.into());
    }
    cands.truncate(k);
    Ok(cands.into_iter().map(|(c, _)| c).collect())
}

fn builtin_coord() -> Vec<CoordOp> {
    Vec::from([
        CoordOp::new("pass", |call| Ok(call.candidates().into_iter().map(|(c, _)| c).collect())),
        CoordOp::new("minval", |call| ranked_keep(call, "minval", |a, b| a.1.try_cmp(&b.1))),
        CoordOp::new("maxval", |call| ranked_keep(call, "maxval", |a, b| b.1.try_cmp(&a.1))),
        CoordOp::new("mincoord", |call| ranked_keep(call, "mincoord", |_, _| Ok(Ordering::Equal))),
        CoordOp::new("maxcoord", |call| {
            ranked_keep(call, "maxcoord", |a, b| Ok(b.0.cmp(&a.0)))
        }),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ctx(empty: Scalar) -> OpCtx<'static> {
        OpCtx::uniform(&[], empty)
    }

    #[test]
    fn sixteen_distinct_tables() {
        for (i, a) in MERGE_OPS.iter().enumerate() {
            for b in &MERGE_OPS[i + 1..] {
                assert_ne!(a.table, b.table);
                assert_ne!(a.name, b.name);
            }
        }
    }

    #[test]
    fn spot_checks() {
        assert!(merge_eval("cap", true, true).unwrap());
        assert!(!merge_eval("cap", true, false).unwrap());
        assert!(merge_eval("cup", false, true).unwrap());
        assert!(!merge_eval("cup", false, false).unwrap());
        assert!(merge_eval("pass", false, false).unwrap());
        assert!(merge_eval("bogus", false, false).is_err());
    }

    #[test]
    fn lonly_is_cap_with_negated_right() {
        let lonly = MergeOp::by_name("lonly").unwrap();
        for l in [false, true] {
            for r in [false, true] {
                assert_eq!(lonly.eval(l, r), MergeOp::CAP.eval(l, !r));
            }
        }
    }

    #[test]
    fn update_semantics() {
        let reg = OperatorRegistry::builtin();
        let up = reg.binary("update").unwrap();
        let c = ctx(Scalar::INF);
        assert_eq!(up.apply(&c, Scalar::INF, Scalar::int(7)).unwrap(), Scalar::int(7));
        assert_eq!(up.apply(&c, Scalar::int(3), Scalar::INF).unwrap(), Scalar::int(3));
        assert_eq!(up.apply(&c, Scalar::int(3), Scalar::int(7)).unwrap(), Scalar::int(7));
    }

    #[test]
    fn selection_ops() {
        let reg = OperatorRegistry::builtin();
        let c = ctx(Scalar::INF);
        let min = reg.binary("min").unwrap();
        assert_eq!(min.apply(&c, Scalar::INF, Scalar::int(4)).unwrap(), Scalar::int(4));
        let ifeq = reg.binary("ifeq").unwrap();
        assert_eq!(ifeq.apply(&c, Scalar::int(2), Scalar::int(2)).unwrap(), Scalar::int(2));
        assert_eq!(ifeq.apply(&c, Scalar::int(2), Scalar::int(3)).unwrap(), Scalar::INF);
        let leq = reg.binary("leqsel").unwrap();
        assert_eq!(leq.apply(&c, Scalar::INF, Scalar::int(5)).unwrap(), Scalar::int(5));
        assert_eq!(leq.apply(&c, Scalar::int(5), Scalar::int(5)).unwrap(), Scalar::int(5));
        assert_eq!(leq.apply(&c, Scalar::int(4), Scalar::int(5)).unwrap(), Scalar::INF);
        let lt = reg.binary("ltsel").unwrap();
        assert_eq!(lt.apply(&c, Scalar::INF, Scalar::int(5)).unwrap(), Scalar::int(5));
        assert_eq!(lt.apply(&c, Scalar::int(5), Scalar::int(5)).unwrap(), Scalar::INF);
        assert_eq!(lt.apply(&c, Scalar::int(6), Scalar::int(5)).unwrap(), Scalar::int(5));
        let any = reg.binary("any").unwrap();
        assert_eq!(any.apply(&c, Scalar::int(1), Scalar::int(2)).unwrap(), Scalar::int(1));
    }

    #[test]
    fn numeric_and_masks() {
        let reg = OperatorRegistry::builtin();
        let and = reg.binary("and").unwrap();
        let c = ctx(Scalar::int(0));
        assert_eq!(and.apply(&c, Scalar::int(5), Scalar::int(1)).unwrap(), Scalar::int(5));
        assert_eq!(and.apply(&c, Scalar::int(5), Scalar::int(0)).unwrap(), Scalar::int(0));
        assert!(and.apply(&c, Scalar::int(5), Scalar::Bool(true)).is_err());
    }

    #[test]
    fn pow_and_exp() {
        let reg = OperatorRegistry::builtin();
        let pow = reg.binary("pow").unwrap();
        let c = ctx(Scalar::int(0));
        assert_eq!(pow.apply(&c, Scalar::int(2), Scalar::int(10)).unwrap(), Scalar::int(1024));
        assert!(pow.apply(&c, Scalar::int(2), Scalar::int(-1)).is_err());
        assert_eq!(
            pow.apply(&c, Scalar::Real(2.0), Scalar::Real(0.5)).unwrap(),
            Scalar::Real(libm::sqrt(2.0))
        );
        let e = reg.unary("eexp").unwrap();
        assert_eq!(e.apply(Scalar::Real(0.0)).unwrap(), Scalar::Real(1.0));
    }

    #[test]
    fn declared_flags_hold() {
        let reg = OperatorRegistry::builtin();
        for name in ["add", "mul", "min", "max", "and", "or"] {
            let op = reg.binary(name).unwrap();
            assert!(op.is_commutative() && op.is_associative(), "{name}");
            op.verify_flags().unwrap();
        }
        for name in ["any", "update"] {
            let op = reg.binary(name).unwrap();
            assert!(!op.is_commutative() && !op.is_associative(), "{name}");
        }
    }

    #[test]
    fn false_flag_claims_are_rejected() {
        let mut reg = OperatorRegistry::builtin();
        let bad = ComputeOp::new("sub", |_, a, b| Ok(a.add(&b.neg()?)?)).commutative();
        assert!(matches!(reg.register_binary(bad), Err(OpError::FlagViolation { .. })));
    }

    #[test]
    fn duplicate_registration() {
        let mut reg = OperatorRegistry::builtin();
        let err = reg.register_binary(ComputeOp::new("pow", |_, a, _| Ok(a)));
        assert!(matches!(err, Err(OpError::Duplicate { .. })));
        reg.register_binary(ComputeOp::new("mypow", |_, a, _| Ok(a))).unwrap();
        assert!(reg.register_unary(UnaryOp::new("neg", Ok)).is_err());
        assert!(reg.register_coord(CoordOp::new("pass", |_| Ok(vec![]))).is_err());
    }

    fn fiber(entries: &[(u64, i64)]) -> Vec<(Vec<Coord>, Scalar)> {
        entries.iter().map(|(c, v)| (vec![*c], Scalar::int(*v))).collect()
    }

    fn call<'a>(count: u64, rhs: &'a [Coord], v: i64, f: &'a [(Vec<Coord>, Scalar)]) -> CoordCall<'a> {
        CoordCall {
            point: &[],
            count: Some(count),
            rhs_coord: rhs,
            rhs_value: Scalar::int(v),
            fiber: f,
        }
    }

    #[test]
    fn maxval_three() {
        let reg = OperatorRegistry::builtin();
        let f = fiber(&[(0, 5), (2, 1), (3, 4)]);
        let out = reg.coord("maxval").unwrap().apply(&call(3, &[4], 6, &f)).unwrap();
        assert_eq!(out, vec![vec![0], vec![3], vec![4]]);
    }

    #[test]
    fn ties_prefer_smaller_coordinate() {
        let reg = OperatorRegistry::builtin();
        let f = fiber(&[(1, 3), (4, 3)]);
        let out = reg.coord("minval").unwrap().apply(&call(1, &[2], 3, &f)).unwrap();
        assert_eq!(out, vec![vec![1]]);
        let out = reg.coord("maxval").unwrap().apply(&call(2, &[0], 3, &f)).unwrap();
        assert_eq!(out, vec![vec![0], vec![1]]);
    }

    #[test]
    fn coordinate_ranked_ops() {
        let reg = OperatorRegistry::builtin();
        let f = fiber(&[(1, 3), (4, 9)]);
        let mx = reg.coord("maxcoord").unwrap().apply(&call(1, &[2], 0, &f)).unwrap();
        assert_eq!(mx, vec![vec![4]]);
        let mn = reg.coord("mincoord").unwrap().apply(&call(2, &[2], 0, &f)).unwrap();
        assert_eq!(mn, vec![vec![1], vec![2]]);
        let all = reg.coord("pass").unwrap().apply(&call(1, &[2], 0, &f)).unwrap();
        assert_eq!(all.len(), 3);
        let no_k = CoordCall { count: None, ..call(1, &[2], 0, &f) };
        assert!(reg.coord("minval").unwrap().apply(&no_k).is_err());
    }
}
