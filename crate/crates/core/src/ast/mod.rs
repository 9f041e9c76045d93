//! The program model: declarations, initializations, statements, and cascades.

mod desugar;
mod validate;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::fibertree::{DType, Scalar};

pub use desugar::{desugar, desugar_case, desugar_update, DesugarError};
pub use validate::{validate, validate_with, Diagnostic};

pub type Name = String;

#[derive(Clone, Debug, PartialEq)]
pub enum RankExpr {
    Var(Name),
    Const(i64),
    Offset(Name, i64),
    Sum(Name, Name),
    Ternary(Box<BoolCond>, Box<RankExpr>, Box<RankExpr>),
    MinOf(Name, Name),
    MaxOf(Name, Name),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn eval(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }

    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
        }
    }

    /// The operator with its operands swapped.
    pub fn mirror(self) -> CmpOp {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            op => op,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoolCond {
    Compare(RankExpr, CmpOp, RankExpr),
    InList(Name, Name),
    And(Box<BoolCond>, Box<BoolCond>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Subscript {
    pub expr: RankExpr,
    pub constraint: Option<BoolCond>,
    pub mutable: bool,
}

impl Subscript {
    pub fn var(name: &str) -> Self {
        Subscript {
            expr: RankExpr::Var(name.into()),
            constraint: None,
            mutable: false,
        }
    }

    pub fn expr(expr: RankExpr) -> Self {
        Subscript {
            expr,
            constraint: None,
            mutable: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Access {
    pub tensor: Name,
    pub subs: Vec<Subscript>,
    pub unary: Option<Name>,
}

impl Access {
    pub fn new(tensor: &str, subs: Vec<Subscript>) -> Self {
        Access {
            tensor: tensor.into(),
            subs,
            unary: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum RhsExpr {
    Leaf(Access),
    RankVar(Name),
    Lit(Scalar),
    Binary {
        label: u32,
        left: Box<RhsExpr>,
        right: Box<RhsExpr>,
    },
}

impl RhsExpr {
    pub fn binary(label: u32, left: RhsExpr, right: RhsExpr) -> Self {
        RhsExpr::Binary {
            label,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    pub fn labels(&self, out: &mut Vec<u32>) {
        if let RhsExpr::Binary { label, left, right } = self {
            left.labels(out);
            right.labels(out);
            out.push(*label);
        }
    }

    /// Leaf accesses, left to right.
    pub fn accesses(&self) -> Vec<&Access> {
        let mut out = Vec::new();
        self.walk_accesses(&mut out);
        out
    }

    fn walk_accesses<'a>(&'a self, out: &mut Vec<&'a Access>) {
        match self {
            RhsExpr::Leaf(a) => out.push(a),
            RhsExpr::Binary { left, right, .. } => {
                left.walk_accesses(out);
                right.walk_accesses(out);
            }
            _ => {}
        }
    }

    pub fn find_label(&self, l: u32) -> Option<&RhsExpr> {
        match self {
            RhsExpr::Binary { label, left, right } => {
                if *label == l {
                    Some(self)
                } else {
                    left.find_label(l).or_else(|| right.find_label(l))
                }
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoordSpec {
    pub name: Name,
    pub count: Option<u64>,
}

impl CoordSpec {
    pub fn pass() -> Self {
        CoordSpec {
            name: "pass".into(),
            count: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Map {
        label: u32,
        ranks: Vec<Name>,
        compute: Name,
        merge: Name,
    },
    Reduce {
        label: Option<u32>,
        ranks: Vec<Name>,
        compute: Name,
        merge: Name,
    },
    Populate {
        ranks: Vec<Name>,
        compute: Name,
        coord: CoordSpec,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EinsumStmt {
    pub output: Access,
    pub rhs: RhsExpr,
    pub actions: Vec<Action>,
}

impl EinsumStmt {
    pub fn map_for(&self, label: u32) -> Option<&Action> {
        self.actions
            .iter()
            .find(|a| matches!(a, Action::Map { label: l, .. } if *l == label))
    }

    pub fn reduce_for(&self, label: Option<u32>) -> Option<&Action> {
        self.actions
            .iter()
            .find(|a| matches!(a, Action::Reduce { label: l, .. } if *l == label))
    }

    pub fn populate(&self) -> Option<&Action> {
        self.actions.iter().find(|a| matches!(a, Action::Populate { .. }))
    }
}

/// `OUT << RHS :: actions;`
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStmt {
    pub output: Access,
    pub rhs: RhsExpr,
    pub actions: Vec<Action>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseArm {
    /// `None` is the `else` arm.
    pub guard: Option<BoolCond>,
    pub rhs: RhsExpr,
    pub actions: Vec<Action>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseStmt {
    pub output: Access,
    pub arms: Vec<CaseArm>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Statement {
    Einsum(EinsumStmt),
    Update(UpdateStmt),
    Case(CaseStmt),
    Cascade(Cascade),
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopCond {
    OccupancyZero {
        tensor: Name,
        offset: i64,
    },
    TensorEqual {
        left: Name,
        left_offset: i64,
        right: Name,
        right_offset: i64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cascade {
    pub var: Name,
    pub body: Vec<Statement>,
    pub stop: Option<StopCond>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SizeExpr {
    Lit(u64),
    /// A named size such as `|V|`, stored without the bars.
    Param(Name),
    Unbounded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankSpec {
    pub name: Name,
    pub size: SizeExpr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decl {
    pub name: Name,
    pub ranks: Vec<RankSpec>,
    pub dtype: DType,
    pub empty: Scalar,
}

impl Decl {
    pub fn is_generational(&self) -> bool {
        matches!(self.ranks.first(), Some(r) if r.size == SizeExpr::Unbounded)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    User(Name),
    Stmt(EinsumStmt),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub decls: Vec<Decl>,
    pub inits: Vec<Init>,
    pub body: Cascade,
}

impl Program {
    pub fn decl(&self, name: &str) -> Option<&Decl> {
        self.decls.iter().find(|d| d.name == name)
    }

    /// Tensors marked `user` in the init section.
    pub fn user_tensors(&self) -> Vec<&str> {
        self.inits
            .iter()
            .filter_map(|i| match i {
                Init::User(n) => Some(n.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Named size parameters used by declarations, in first-use order.
    pub fn size_params(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for d in &self.decls {
            for r in &d.ranks {
                if let SizeExpr::Param(p) = &r.size {
                    if !out.contains(&p.as_str()) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    /// Named integer lists referenced by `in` constraints, in first-use order.
    pub fn lists(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut add = |a: &Access| {
            for s in &a.subs {
                if let Some(c) = &s.constraint {
                    cond_lists(c, &mut out);
                }
                expr_lists(&s.expr, &mut out);
            }
        };
        for i in &self.inits {
            if let Init::Stmt(s) = i {
                for_each_access(s, &mut add);
            }
        }
        visit_cascade_accesses(&self.body, &mut add);
        out
    }
}

fn for_each_access(s: &EinsumStmt, f: &mut impl FnMut(&Access)) {
    f(&s.output);
    for a in s.rhs.accesses() {
        f(a);
    }
}

fn visit_cascade_accesses(c: &Cascade, f: &mut impl FnMut(&Access)) {
    for st in &c.body {
        match st {
            Statement::Einsum(s) => for_each_access(s, f),
            Statement::Update(u) => {
                f(&u.output);
                for a in u.rhs.accesses() {
                    f(a);
                }
            }
            Statement::Case(cs) => {
                f(&cs.output);
                for arm in &cs.arms {
                    for a in arm.rhs.accesses() {
                        f(a);
                    }
                }
            }
            Statement::Cascade(inner) => visit_cascade_accesses(inner, f),
        }
    }
}

fn cond_lists(c: &BoolCond, out: &mut Vec<String>) {
    match c {
        BoolCond::InList(_, l) => {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
        BoolCond::And(a, b) => {
            cond_lists(a, out);
            cond_lists(b, out);
        }
        BoolCond::Compare(a, _, b) => {
            expr_lists(a, out);
            expr_lists(b, out);
        }
    }
}

fn expr_lists(e: &RankExpr, out: &mut Vec<String>) {
    if let RankExpr::Ternary(c, a, b) = e {
        cond_lists(c, out);
        expr_lists(a, out);
        expr_lists(b, out);
    }
}

impl RankExpr {
    /// Rank variables in order of appearance (with repeats).
    pub fn vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            RankExpr::Var(v) | RankExpr::Offset(v, _) => out.push(v),
            RankExpr::Const(_) => {}
            RankExpr::Sum(a, b) | RankExpr::MinOf(a, b) | RankExpr::MaxOf(a, b) => {
                out.push(a);
                out.push(b);
            }
            RankExpr::Ternary(c, a, b) => {
                c.vars(out);
                a.vars(out);
                b.vars(out);
            }
        }
    }

    /// Evaluates with `lookup` supplying variable values. `None` when a variable is unbound.
    pub fn eval(&self, lookup: &impl Fn(&str) -> Option<i64>) -> Option<i64> {
        Some(match self {
            RankExpr::Var(v) => lookup(v)?,
            RankExpr::Const(c) => *c,
            RankExpr::Offset(v, c) => lookup(v)?.checked_add(*c)?,
            RankExpr::Sum(a, b) => lookup(a)?.checked_add(lookup(b)?)?,
            RankExpr::MinOf(a, b) => lookup(a)?.min(lookup(b)?),
            RankExpr::MaxOf(a, b) => lookup(a)?.max(lookup(b)?),
            RankExpr::Ternary(c, a, b) => {
                if c.eval(lookup)? {
                    a.eval(lookup)?
                } else {
                    b.eval(lookup)?
                }
            }
        })
    }
}

impl BoolCond {
    pub fn vars<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            BoolCond::Compare(a, _, b) => {
                a.vars(out);
                b.vars(out);
            }
            BoolCond::InList(v, _) => out.push(v),
            BoolCond::And(a, b) => {
                a.vars(out);
                b.vars(out);
            }
        }
    }

    /// Evaluates with variable values from `lookup`. List membership is
    /// answered by `in_list(list, value)`.
    pub fn eval_with(
        &self,
        lookup: &impl Fn(&str) -> Option<i64>,
        in_list: &impl Fn(&str, i64) -> bool,
    ) -> Option<bool> {
        Some(match self {
            BoolCond::Compare(a, op, b) => op.eval(a.eval(lookup)?, b.eval(lookup)?),
            BoolCond::InList(v, l) => in_list(l, lookup(v)?),
            BoolCond::And(a, b) => a.eval_with(lookup, in_list)? && b.eval_with(lookup, in_list)?,
        })
    }

    /// Evaluation for ternary conditions, where list membership is not allowed.
    pub fn eval(&self, lookup: &impl Fn(&str) -> Option<i64>) -> Option<bool> {
        self.eval_with(lookup, &|_, _| false)
    }
}

/// Pushes `v` unless already present.
pub(crate) fn push_unique<'a>(out: &mut Vec<&'a str>, v: &'a str) {
    if !out.contains(&v) {
        out.push(v);
    }
}
