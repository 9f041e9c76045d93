//! Program execution: sparse statement evaluation, populate folds, and cascades.

mod eval;
mod populate;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::ast::{
    desugar, validate_with, Cascade, Decl, DesugarError, Diagnostic, EinsumStmt, Init, Program,
    RankExpr, SizeExpr, Statement, StopCond,
};
use crate::fibertree::{Coord, RankDecl, Shape, Tensor, TensorDecl, TensorError};
use crate::operators::{OpError, OperatorRegistry};

pub use eval::{eval_map, eval_reduce, eval_stmt, NodeVal, StmtOutput};
pub use populate::{eval_populate, PopulateStep};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("program has {} diagnostic(s); first: {}", .0.len(), .0.first().map(|d| d.message.as_str()).unwrap_or(""))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Desugar(#[from] DesugarError),
    #[error("user tensor `{0}` was not supplied")]
    MissingUser(String),
    #[error("size parameter `|{0}|` is not bound")]
    MissingParam(String),
    #[error("list `{0}` is not bound")]
    MissingList(String),
    #[error("supplied tensor `{name}` does not match its declaration: {reason}")]
    BadInput { name: String, reason: String },
    #[error("cascade over `{var}` ran {limit} generations without meeting its stop condition")]
    GenerationLimit { var: String, limit: u64 },
    #[error("statement `{stmt}` exceeds the iteration cap of {cap} points")]
    IterationCap { stmt: String, cap: u64 },
    #[error("statement `{stmt}` writes coordinate {coords:?} outside the shape of `{tensor}`")]
    OutOfShape {
        stmt: String,
        tensor: String,
        coords: Vec<i64>,
    },
    #[error("coordinate operator `{op}` kept coordinate {coord:?}, which is neither in the fiber nor the new point")]
    PopulateSubset { op: String, coord: Vec<Coord> },
    #[error("statement `{stmt}`: {source}")]
    Op { stmt: String, source: OpError },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Execution limits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunLimits {
    /// Passes a cascade may run without its stop condition firing.
    pub max_generations: u64,
    /// Iteration-space points one statement may visit.
    pub max_points: u64,
    /// Drop generations that no later pass can read.
    pub evict: bool,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            max_generations: 100_000,
            max_points: 1_000_000_000,
            evict: false,
        }
    }
}

/// Tensors plus the run-time bindings a program needs.
#[derive(Clone, Debug, Default)]
pub struct Store {
    tensors: BTreeMap<String, Tensor>,
    lists: BTreeMap<String, Vec<Coord>>,
    params: BTreeMap<String, u64>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, t: Tensor) {
        self.tensors.insert(t.name().to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.values()
    }

    pub fn set_list(&mut self, name: &str, items: Vec<Coord>) {
        self.lists.insert(name.to_string(), items);
    }

    pub fn list(&self, name: &str) -> Option<&[Coord]> {
        self.lists.get(name).map(|v| v.as_slice())
    }

    pub fn set_param(&mut self, name: &str, v: u64) {
        self.params.insert(name.to_string(), v);
    }

    pub fn param(&self, name: &str) -> Option<u64> {
        self.params.get(name).copied()
    }

    /// Generation `g` of a generational tensor, or the whole tensor otherwise.
    pub fn slice(&self, name: &str, g: Option<Coord>) -> Option<Tensor> {
        let t = self.tensors.get(name)?;
        Some(match g {
            Some(g) => t.slice(g),
            None => t.clone(),
        })
    }
}

/// Resolves a declaration's symbolic sizes.
pub fn instantiate(d: &Decl, store: &Store) -> Result<TensorDecl, EngineError> {
    let mut ranks = Vec::new();
    for r in &d.ranks {
        let shape = match &r.size {
            SizeExpr::Lit(n) => Shape::Bounded(*n),
            SizeExpr::Param(p) => {
                Shape::Bounded(store.param(p).ok_or_else(|| EngineError::MissingParam(p.clone()))?)
            }
            SizeExpr::Unbounded => Shape::Unbounded,
        };
        ranks.push(RankDecl::new(r.name.clone(), shape));
    }
    Ok(TensorDecl::new(d.name.clone(), ranks, d.dtype, d.empty)?)
}

/// Runs a program with the builtin operators.
pub fn run(p: &Program, seed: Store, limits: RunLimits) -> Result<Store, EngineError> {
    run_with(p, seed, limits, &OperatorRegistry::builtin())
}

pub fn run_with(
    p: &Program,
    seed: Store,
    limits: RunLimits,
    reg: &OperatorRegistry,
) -> Result<Store, EngineError> {
    let diags = validate_with(p, reg);
    if !diags.is_empty() {
        return Err(EngineError::Invalid(diags));
    }
    let p = desugar(p)?;
    let mut store = prepare(&p, seed)?;
    let mut ex = Exec {
        p: &p,
        reg,
        limits,
        env: BTreeMap::new(),
    };
    for init in &p.inits {
        if let Init::Stmt(s) = init {
            ex.exec(s, &mut store)?;
        }
    }
    ex.cascade(&p.body, &mut store)?;
    Ok(store)
}

/// Checks bindings and builds every declared tensor, adopting user inputs.
fn prepare(p: &Program, mut seed: Store) -> Result<Store, EngineError> {
    for l in p.lists() {
        if seed.list(&l).is_none() {
            return Err(EngineError::MissingList(l));
        }
    }
    let users = p.user_tensors();
    let mut store = Store {
        tensors: BTreeMap::new(),
        lists: core::mem::take(&mut seed.lists),
        params: core::mem::take(&mut seed.params),
    };
    for d in &p.decls {
        let decl = instantiate(d, &store)?;
        let mut t = Tensor::new(decl.clone());
        if users.contains(&d.name.as_str()) {
            let given = seed
                .remove(&d.name)
                .ok_or_else(|| EngineError::MissingUser(d.name.clone()))?;
            let bad = |reason: String| EngineError::BadInput {
                name: d.name.clone(),
                reason,
            };
            if given.rank_count() != decl.rank_count() {
                return Err(bad(alloc::format!(
                    "{} ranks instead of {}",
                    given.rank_count(),
                    decl.rank_count()
                )));
            }
            if given.dtype() != decl.dtype {
                return Err(bad(alloc::format!("type {} instead of {}", given.dtype(), decl.dtype)));
            }
            for (pt, v) in given.iter() {
                t.set(&pt, v).map_err(|e| bad(e.to_string()))?;
            }
        }
        store.insert(t);
    }
    Ok(store)
}

struct Exec<'a> {
    p: &'a Program,
    reg: &'a OperatorRegistry,
    limits: RunLimits,
    env: BTreeMap<String, i64>,
}

impl Exec<'_> {
    fn exec(&mut self, s: &EinsumStmt, store: &mut Store) -> Result<(), EngineError> {
        let out = eval_stmt(s, store, &self.env, self.reg, &self.limits)?;
        let t = store
            .tensors
            .get_mut(&s.output.tensor)
            .expect("validated output tensor");
        match out.generation {
            Some(g) => t.set_slice(g, out.tensor),
            None => *t = out.tensor,
        }
        Ok(())
    }

    fn cascade(&mut self, c: &Cascade, store: &mut Store) -> Result<(), EngineError> {
        self.env.insert(c.var.clone(), 0);
        let mut passes = 0u64;
        loop {
            for st in &c.body {
                match st {
                    Statement::Einsum(s) => self.exec(s, store)?,
                    Statement::Cascade(inner) => self.cascade(inner, store)?,
                    Statement::Update(_) | Statement::Case(_) => {
                        unreachable!("sugar is removed before execution")
                    }
                }
            }
            passes += 1;
            let g = self.env[&c.var];
            let done = match &c.stop {
                None => true,
                Some(s) => eval_stop(s, store, g)?,
            };
            if done {
                return Ok(());
            }
            if passes >= self.limits.max_generations {
                return Err(EngineError::GenerationLimit {
                    var: c.var.clone(),
                    limit: self.limits.max_generations,
                });
            }
            if self.limits.evict {
                evict(self.p, c, store, g);
            }
            self.env.insert(c.var.clone(), g + 1);
        }
    }
}

/// Evaluates a stop condition at generation `g` of its cascade.
pub fn eval_stop(s: &StopCond, store: &Store, g: i64) -> Result<bool, EngineError> {
    let slice = |t: &str, off: i64| -> Result<Tensor, EngineError> {
        let gen = (g + off).max(0) as Coord;
        store
            .slice(t, Some(gen))
            .ok_or_else(|| EngineError::MissingUser(t.to_string()))
    };
    Ok(match s {
        StopCond::OccupancyZero { tensor, offset } => slice(tensor, *offset)?.occupancy() == 0,
        StopCond::TensorEqual {
            left,
            left_offset,
            right,
            right_offset,
        } => slice(left, *left_offset)?.equals(&slice(right, *right_offset)?)?,
    })
}

/// Drops generations of tensors indexed only by `c.var` that the next pass
/// (generation `g + 1`) and later cannot read.
fn evict(p: &Program, c: &Cascade, store: &mut Store, g: i64) {
    let mut min_off: BTreeMap<String, Option<i64>> = BTreeMap::new();
    let mut note = |t: &str, e: Option<&RankExpr>| {
        let off = match e {
            Some(RankExpr::Var(v)) if *v == c.var => Some(0),
            Some(RankExpr::Offset(v, k)) if *v == c.var => Some(*k),
            _ => None,
        };
        let entry = min_off.entry(t.to_string()).or_insert(off);
        *entry = match (*entry, off) {
            (Some(a), Some(b)) => Some(a.min(b)),
            _ => None,
        };
    };
    visit_gen_accesses(p, &p.body, &mut note);
    for s in [c.stop.as_ref()].into_iter().flatten() {
        let refs: Vec<(&str, i64)> = match s {
            StopCond::OccupancyZero { tensor, offset } => alloc::vec![(tensor.as_str(), *offset)],
            StopCond::TensorEqual {
                left,
                left_offset,
                right,
                right_offset,
            } => alloc::vec![(left.as_str(), *left_offset), (right.as_str(), *right_offset)],
        };
        for (t, k) in refs {
            if let Some(e) = min_off.get_mut(t) {
                *e = e.map(|m| m.min(k));
            }
        }
    }
    for (name, off) in min_off {
        let Some(off) = off else { continue };
        let keep_from = g + 1 + off;
        if let Some(t) = store.tensors.get_mut(&name) {
            let old: Vec<Coord> = t.generations().filter(|&x| (x as i64) < keep_from).collect();
            for x in old {
                t.remove_slice(x);
            }
        }
    }
}

/// Calls `f` with the generation subscript of every generational access in the body.
fn visit_gen_accesses<'a>(
    p: &'a Program,
    c: &'a Cascade,
    f: &mut impl FnMut(&'a str, Option<&'a RankExpr>),
) {
    for st in &c.body {
        match st {
            Statement::Einsum(s) => {
                let mut accs = alloc::vec![&s.output];
                accs.extend(s.rhs.accesses());
                for a in accs {
                    if p.decl(&a.tensor).is_some_and(|d| d.is_generational()) {
                        f(&a.tensor, a.subs.first().map(|s| &s.expr));
                    }
                }
            }
            Statement::Cascade(inner) => {
                visit_gen_accesses(p, inner, f);
                if let Some(s) = &inner.stop {
                    // Stop conditions of other cascades read through their own variable.
                    match s {
                        StopCond::OccupancyZero { tensor, .. } => f(tensor, None),
                        StopCond::TensorEqual { left, right, .. } => {
                            f(left, None);
                            f(right, None);
                        }
                    }
                }
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests;
