//! Seeded random graphs, programs, and tensor stores for property tests.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

use crate::ast::{
    Access, Action, BoolCond, CaseArm, CaseStmt, Cascade, CmpOp, CoordSpec, Decl, EinsumStmt,
    Init, Program, RankExpr, RankSpec, RhsExpr, SizeExpr, Statement, StopCond, Subscript,
    UpdateStmt,
};
use crate::engine::{instantiate, EngineError, Store};
use crate::fibertree::{Coord, DType, Scalar, Shape, Tensor};
use crate::operators::{OperatorRegistry, MERGE_OPS};
use crate::oracle::{cross_check, Agreement, Graph, Mismatch, OracleError};

/// Each ordered pair (self loops included) is an edge with probability
/// `density`; weights are uniform in `weights`.
pub fn random_graph<R: Rng + ?Sized>(
    rng: &mut R,
    n: u64,
    density: f64,
    weights: RangeInclusive<i64>,
) -> Graph {
    let mut g = Graph::new(n);
    for s in 0..n {
        for d in 0..n {
            if rng.gen_bool(density) {
                g.add_edge(s, d, Scalar::int(rng.gen_range(weights.clone())));
            }
        }
    }
    g
}

pub fn path_graph(n: u64) -> Graph {
    let mut g = Graph::new(n);
    for v in 1..n {
        g.add_edge(v - 1, v, Scalar::int(1));
    }
    g
}

/// Edges from vertex 0 to every other vertex.
pub fn star_graph(n: u64) -> Graph {
    let mut g = Graph::new(n);
    for v in 1..n {
        g.add_edge(0, v, Scalar::int(1));
    }
    g
}

/// Every ordered pair of distinct vertices.
pub fn complete_graph(n: u64) -> Graph {
    let mut g = Graph::new(n);
    for s in 0..n {
        for d in 0..n {
            if s != d {
                g.add_edge(s, d, Scalar::int(1));
            }
        }
    }
    g
}

/// A random value of `dtype`. Integers stay small and non-negative so that
/// products and powers cannot overflow; infinities appear occasionally.
pub fn random_scalar<R: Rng + ?Sized>(rng: &mut R, dtype: DType) -> Scalar {
    match dtype {
        DType::Bool => Scalar::Bool(rng.gen()),
        DType::Int if rng.gen_ratio(1, 20) => Scalar::INF,
        DType::Int => Scalar::int(rng.gen_range(0..=6)),
        DType::Float => Scalar::Real(f64::from(rng.gen_range(0u8..=8)) / 2.0),
    }
}

/// Instantiates every declaration of `p` and fills each tensor with random
/// entries at the given density. Generational tensors get generations 0..=2.
/// Every list is bound to a random subset of `0..list_span`.
pub fn random_store<R: Rng + ?Sized>(
    rng: &mut R,
    p: &Program,
    params: &BTreeMap<String, u64>,
    density: f64,
    list_span: u64,
) -> Result<Store, EngineError> {
    let mut store = Store::new();
    for (k, v) in params {
        store.set_param(k, *v);
    }
    for l in p.lists() {
        let items: Vec<Coord> = (0..list_span).filter(|_| rng.gen_bool(0.4)).collect();
        store.set_list(&l, items);
    }
    for d in &p.decls {
        let decl = instantiate(d, &store)?;
        let mut t = Tensor::new(decl.clone());
        let dims: Vec<u64> = decl
            .ranks
            .iter()
            .map(|r| match r.shape {
                Shape::Bounded(n) => n,
                Shape::Unbounded => 3,
            })
            .collect();
        let mut pt = alloc::vec![0u64; dims.len()];
        'points: loop {
            if rng.gen_bool(density) {
                let v = random_scalar(rng, decl.dtype);
                t.set(&pt, v).map_err(EngineError::Tensor)?;
            }
            for i in (0..pt.len()).rev() {
                pt[i] += 1;
                if pt[i] < dims[i] {
                    continue 'points;
                }
                pt[i] = 0;
            }
            break;
        }
        store.insert(t);
    }
    Ok(store)
}

const TENSORS: &[&str] = &["A", "B", "C", "F", "G", "P", "T", "W", "Z", "Degree"];
const VARS: &[&str] = &["m", "n", "k", "s", "d", "q", "av"];
const LISTS: &[&str] = &["id", "roots"];
const PARAMS: &[&str] = &["V", "N", "K"];
const COMPUTES: &[&str] = &[
    "add", "mul", "min", "max", "and", "or", "any", "takeleft", "takeright", "update", "ifeq",
    "leqsel", "ltsel", "pow", "pass1",
];
const UNARIES: &[&str] = &["not", "neg", "eexp"];
const COORDS: &[&str] = &["minval", "maxval", "mincoord", "maxcoord"];

/// Random syntax trees. They exercise every production of the grammar but
/// are not meant to validate.
pub struct AstGen<'r, R: Rng + ?Sized> {
    rng: &'r mut R,
}

impl<'r, R: Rng + ?Sized> AstGen<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        AstGen { rng }
    }

    fn pick<'a>(&mut self, xs: &[&'a str]) -> &'a str {
        xs.choose(self.rng).expect("non-empty")
    }

    fn name(&mut self, xs: &[&str]) -> String {
        self.pick(xs).to_string()
    }

    pub fn program(&mut self) -> Program {
        let decls = (0..self.rng.gen_range(0..5)).map(|_| self.decl()).collect();
        let mut inits = Vec::new();
        for _ in 0..self.rng.gen_range(0..3) {
            inits.push(if self.rng.gen_bool(0.4) {
                Init::User(self.name(TENSORS))
            } else {
                Init::Stmt(self.einsum(true))
            });
        }
        let body = self.cascade("i".to_string(), 0);
        Program { decls, inits, body }
    }

    fn decl(&mut self) -> Decl {
        let mut ranks = Vec::new();
        let n = self.rng.gen_range(0..4);
        let mut names: Vec<&str> = alloc::vec!["S", "D", "M", "N", "K"];
        names.shuffle(self.rng);
        for (i, r) in names.into_iter().take(n).enumerate() {
            let size = match self.rng.gen_range(0..3) {
                0 if i == 0 => SizeExpr::Unbounded,
                0 | 1 => SizeExpr::Lit(self.rng.gen_range(1..100)),
                _ => SizeExpr::Param(self.name(PARAMS)),
            };
            ranks.push(RankSpec {
                name: r.to_string(),
                size,
            });
        }
        let dtype = *[DType::Int, DType::Float, DType::Bool].choose(self.rng).expect("non-empty");
        let empty = match dtype {
            DType::Int => *[Scalar::int(0), Scalar::INF, Scalar::NEG_INF, Scalar::int(7)]
                .choose(self.rng)
                .expect("non-empty"),
            _ => self.literal(dtype),
        };
        Decl {
            name: self.name(TENSORS),
            ranks,
            dtype,
            empty,
        }
    }

    fn literal(&mut self, dtype: DType) -> Scalar {
        match dtype {
            DType::Bool => Scalar::Bool(self.rng.gen()),
            DType::Int => match self.rng.gen_range(0..6) {
                0 => Scalar::INF,
                _ => Scalar::int(self.rng.gen_range(0..1000)),
            },
            DType::Float => Scalar::Real(f64::from(self.rng.gen_range(0u16..400)) / 8.0),
        }
    }

    fn cascade(&mut self, var: String, depth: u32) -> Cascade {
        let mut body = Vec::new();
        for _ in 0..self.rng.gen_range(1..4) {
            let st = match self.rng.gen_range(0..10) {
                0..=5 => Statement::Einsum(self.einsum(false)),
                6 => Statement::Update(UpdateStmt {
                    output: self.access(true),
                    rhs: self.rhs(&mut 1, 2),
                    actions: self.actions(),
                }),
                7 | 8 => Statement::Case(self.case()),
                _ if depth < 2 => {
                    let v = ["j", "jj"][depth as usize].to_string();
                    Statement::Cascade(self.cascade(v, depth + 1))
                }
                _ => Statement::Einsum(self.einsum(false)),
            };
            body.push(st);
        }
        let stop = match self.rng.gen_range(0..3) {
            0 => None,
            1 => Some(StopCond::OccupancyZero {
                tensor: self.name(TENSORS),
                offset: self.rng.gen_range(0..=3),
            }),
            _ => Some(StopCond::TensorEqual {
                left: self.name(TENSORS),
                left_offset: self.rng.gen_range(0..=3),
                right: self.name(TENSORS),
                right_offset: self.rng.gen_range(0..=3),
            }),
        };
        Cascade { var, body, stop }
    }

    fn case(&mut self) -> CaseStmt {
        let mut arms = Vec::new();
        for _ in 0..self.rng.gen_range(1..3) {
            arms.push(CaseArm {
                guard: Some(self.cond(1)),
                rhs: self.rhs(&mut 1, 2),
                actions: self.actions(),
            });
        }
        if self.rng.gen_bool(0.5) {
            arms.push(CaseArm {
                guard: None,
                rhs: self.rhs(&mut 1, 2),
                actions: self.actions(),
            });
        }
        CaseStmt {
            output: self.access(true),
            arms,
        }
    }

    fn einsum(&mut self, in_init: bool) -> EinsumStmt {
        let output = self.access(true);
        let rhs = if in_init && self.rng.gen_bool(0.5) {
            RhsExpr::Lit(self.literal(DType::Int))
        } else {
            self.rhs(&mut 1, 3)
        };
        EinsumStmt {
            output,
            rhs,
            actions: self.actions(),
        }
    }

    fn access(&mut self, output: bool) -> Access {
        let n = self.rng.gen_range(0..4);
        let subs = (0..n).map(|_| self.subscript(output)).collect();
        let unary = if !output && self.rng.gen_bool(0.2) {
            Some(self.name(UNARIES))
        } else {
            None
        };
        Access {
            tensor: self.name(TENSORS),
            subs,
            unary,
        }
    }

    fn subscript(&mut self, output: bool) -> Subscript {
        if self.rng.gen_bool(0.1) {
            let v = self.name(VARS);
            return Subscript {
                expr: RankExpr::Var(v.clone()),
                constraint: Some(BoolCond::InList(v, self.name(LISTS))),
                mutable: false,
            };
        }
        let expr = self.rank_expr(1);
        let mutable = output && matches!(expr, RankExpr::Var(_)) && self.rng.gen_bool(0.2);
        let constraint = if self.rng.gen_bool(0.25) {
            Some(self.cond(1))
        } else {
            None
        };
        Subscript {
            expr,
            constraint,
            mutable,
        }
    }

    fn rank_expr(&mut self, depth: u32) -> RankExpr {
        let v = self.name(VARS);
        match self.rng.gen_range(0..10) {
            0 => RankExpr::Const(self.rng.gen_range(0..50)),
            1 => {
                let k = self.rng.gen_range(1..5);
                RankExpr::Offset(v, if self.rng.gen() { k } else { -k })
            }
            2 => RankExpr::Sum(v, self.name(VARS)),
            3 => RankExpr::MinOf(v, self.name(VARS)),
            4 => RankExpr::MaxOf(v, self.name(VARS)),
            5 if depth > 0 => RankExpr::Ternary(
                Box::new(self.cond(depth - 1)),
                Box::new(self.rank_expr(depth - 1)),
                Box::new(self.rank_expr(depth - 1)),
            ),
            _ => RankExpr::Var(v),
        }
    }

    /// Conjunctions are built left-associated, the form the parser produces.
    fn cond(&mut self, depth: u32) -> BoolCond {
        let mut c = self.atom(depth);
        while self.rng.gen_bool(0.2) {
            c = BoolCond::And(Box::new(c), Box::new(self.atom(depth)));
        }
        c
    }

    fn atom(&mut self, depth: u32) -> BoolCond {
        if self.rng.gen_bool(0.15) {
            return BoolCond::InList(self.name(VARS), self.name(LISTS));
        }
        let op = *[CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge, CmpOp::Eq, CmpOp::Ne]
            .choose(self.rng)
            .expect("non-empty");
        BoolCond::Compare(self.rank_expr(depth), op, self.rank_expr(depth))
    }

    fn rhs(&mut self, next_label: &mut u32, depth: u32) -> RhsExpr {
        if depth > 0 && self.rng.gen_bool(0.45) {
            let left = self.rhs(next_label, depth - 1);
            let right = self.rhs(next_label, depth - 1);
            let label = *next_label;
            *next_label += 1;
            return RhsExpr::binary(label, left, right);
        }
        match self.rng.gen_range(0..10) {
            0 => RhsExpr::RankVar(self.name(VARS)),
            1 => {
                let dt = *[DType::Int, DType::Float, DType::Bool].choose(self.rng).expect("non-empty");
                RhsExpr::Lit(self.literal(dt))
            }
            _ => RhsExpr::Leaf(self.access(false)),
        }
    }

    fn ranks(&mut self) -> Vec<String> {
        (0..self.rng.gen_range(1..3)).map(|_| self.name(VARS)).collect()
    }

    fn actions(&mut self) -> Vec<Action> {
        let mut out = Vec::new();
        for _ in 0..self.rng.gen_range(0..4) {
            let a = match self.rng.gen_range(0..3) {
                0 => Action::Map {
                    label: self.rng.gen_range(1..4),
                    ranks: self.ranks(),
                    compute: self.name(COMPUTES),
                    merge: self.merge(),
                },
                1 => Action::Reduce {
                    label: if self.rng.gen() { Some(self.rng.gen_range(1..4)) } else { None },
                    ranks: self.ranks(),
                    compute: self.name(COMPUTES),
                    merge: self.merge(),
                },
                _ => Action::Populate {
                    ranks: self.ranks(),
                    compute: if self.rng.gen() { "pass".into() } else { self.name(UNARIES) },
                    coord: if self.rng.gen() {
                        CoordSpec::pass()
                    } else {
                        CoordSpec {
                            name: self.name(COORDS),
                            count: Some(self.rng.gen_range(1..5)),
                        }
                    },
                },
            };
            out.push(a);
        }
        out
    }

    fn merge(&mut self) -> String {
        MERGE_OPS
            .choose(self.rng).expect("non-empty").name().to_string()
    }
}

/// A `name=value` listing of parameters, for messages.
pub fn describe_params(params: &BTreeMap<String, u64>) -> String {
    let parts: Vec<String> = params.iter().map(|(k, v)| format!("|{k}|={v}")).collect();
    parts.join(" ")
}

/// Tally of a [`sweep`] over many seeds.
#[derive(Clone, Debug, Default)]
pub struct SweepReport {
    /// Seeds where both evaluators produced identical tensors.
    pub agreed: u64,
    /// Seeds where both evaluators rejected the input with the same error kind.
    pub both_failed: u64,
    /// Seeds where the evaluators disagreed, with the parameters used.
    pub mismatches: Vec<(u64, String, Mismatch)>,
}

/// Cross-checks a single-pass program on one random store per seed. Size
/// parameters are drawn from `1..=max_size` and densities from 0.1 to 0.9.
pub fn sweep(
    p: &Program,
    seeds: core::ops::Range<u64>,
    max_size: u64,
    reg: &OperatorRegistry,
    cap: u64,
) -> Result<SweepReport, OracleError> {
    let mut report = SweepReport::default();
    for seed in seeds {
        let mut rng = SmallRng::seed_from_u64(seed);
        let params: BTreeMap<String, u64> = p
            .size_params()
            .into_iter()
            .map(|k| (k.to_string(), rng.gen_range(1..=max_size)))
            .collect();
        let density = rng.gen_range(1..=9) as f64 / 10.0;
        let store = random_store(&mut rng, p, &params, density, max_size)?;
        match cross_check(p, store, reg, cap)? {
            Ok(Agreement::Outputs) => report.agreed += 1,
            Ok(Agreement::Errors(_)) => report.both_failed += 1,
            Err(m) => report.mismatches.push((seed, describe_params(&params), m)),
        }
    }
    Ok(report)
}
