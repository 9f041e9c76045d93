//! Literal statement evaluation: every point of the iteration space is visited.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ast::{Access, Action, BoolCond, EinsumStmt, RankExpr, RhsExpr};
use crate::engine::{EngineError, StmtOutput, Store};
use crate::fibertree::{Coord, DType, Scalar, Shape, Tensor, TensorDecl};
use crate::operators::{MergeOp, OpCtx, OpError, OperatorRegistry};
use crate::parser::statement_text;

/// Evaluates `s` by brute force. Fails when the full iteration space exceeds `cap` points.
pub fn dense_eval_stmt(
    s: &EinsumStmt,
    store: &Store,
    env: &BTreeMap<String, i64>,
    reg: &OperatorRegistry,
    cap: u64,
) -> Result<StmtOutput, EngineError> {
    Dense::new(s, store, env, reg)?.run(cap)
}

enum V {
    Culled,
    Empty,
    Val(Scalar),
}

struct Dense<'a> {
    s: &'a EinsumStmt,
    store: &'a Store,
    env: &'a BTreeMap<String, i64>,
    reg: &'a OperatorRegistry,
    vars: Vec<&'a str>,
    size: Vec<i64>,
    /// Constraints attached to each labeled operation.
    at_label: BTreeMap<u32, Vec<&'a BoolCond>>,
    at_top: Vec<&'a BoolCond>,
}

fn err(s: &EinsumStmt, e: impl Into<OpError>) -> EngineError {
    EngineError::Op {
        stmt: statement_text(s),
        source: e.into(),
    }
}

fn bound(shape: Shape) -> u64 {
    match shape {
        Shape::Bounded(n) => n,
        Shape::Unbounded => u64::MAX,
    }
}

impl<'a> Dense<'a> {
    fn new(
        s: &'a EinsumStmt,
        store: &'a Store,
        env: &'a BTreeMap<String, i64>,
        reg: &'a OperatorRegistry,
    ) -> Result<Self, EngineError> {
        let mut d = Dense {
            s,
            store,
            env,
            reg,
            vars: Vec::new(),
            size: Vec::new(),
            at_label: BTreeMap::new(),
            at_top: Vec::new(),
        };
        let mut all: Vec<&Access> = alloc::vec![&s.output];
        all.extend(s.rhs.accesses());
        // First pass names variables; sizes come from bare appearances when possible.
        let mut fallback: Vec<Option<i64>> = Vec::new();
        let mut bare: Vec<Option<i64>> = Vec::new();
        for a in &all {
            let t = d.tensor(&a.tensor)?;
            let first = t.decl().is_generational() as usize;
            for k in first..a.subs.len() {
                let n = t.decl().ranks.get(k).map_or(0, |r| bound(r.shape) as i64);
                let e = &a.subs[k].expr;
                let mut names = Vec::new();
                e.vars(&mut names);
                for v in names {
                    let i = match d.vars.iter().position(|x| *x == v) {
                        Some(i) => i,
                        None => {
                            d.vars.push(v);
                            fallback.push(None);
                            bare.push(None);
                            d.vars.len() - 1
                        }
                    };
                    if fallback[i].is_none() {
                        fallback[i] = Some(n);
                    }
                    if bare[i].is_none() && *e == RankExpr::Var(v.into()) {
                        bare[i] = Some(n);
                    }
                }
            }
        }
        d.size = (0..d.vars.len())
            .map(|i| bare[i].or(fallback[i]).unwrap_or(0))
            .collect();
        for a in &all {
            for sub in &a.subs {
                if let Some(c) = &sub.constraint {
                    let mut names = Vec::new();
                    c.vars(&mut names);
                    match d.home(&s.rhs, &names) {
                        Some(l) => d.at_label.entry(l).or_default().push(c),
                        None => d.at_top.push(c),
                    }
                }
            }
        }
        Ok(d)
    }

    fn tensor(&self, name: &str) -> Result<&'a Tensor, EngineError> {
        self.store
            .get(name)
            .ok_or_else(|| EngineError::MissingUser(name.into()))
    }

    fn id(&self, v: &str) -> usize {
        self.vars.iter().position(|x| *x == v).unwrap_or(usize::MAX)
    }

    fn reduced(&self, label: u32) -> Vec<usize> {
        match self.s.reduce_for(Some(label)) {
            Some(Action::Reduce { ranks, .. }) => ranks.iter().map(|r| self.id(r)).collect(),
            _ => Vec::new(),
        }
    }

    /// Variables an expression's value depends on (after its own reductions).
    fn free(&self, e: &RhsExpr) -> Vec<usize> {
        let mut out = match e {
            RhsExpr::Leaf(a) => {
                let first = self
                    .store
                    .get(&a.tensor)
                    .is_some_and(|t| t.decl().is_generational()) as usize;
                let mut names = Vec::new();
                for sub in &a.subs[first..] {
                    sub.expr.vars(&mut names);
                }
                names.iter().map(|v| self.id(v)).collect()
            }
            RhsExpr::RankVar(v) => alloc::vec![self.id(v)],
            RhsExpr::Lit(_) => Vec::new(),
            RhsExpr::Binary { label, .. } => {
                let r = self.reduced(*label);
                self.before_reduce(e).into_iter().filter(|v| !r.contains(v)).collect()
            }
        };
        out.sort_unstable();
        out.dedup();
        out
    }

    fn before_reduce(&self, e: &RhsExpr) -> Vec<usize> {
        let RhsExpr::Binary { left, right, .. } = e else {
            return self.free(e);
        };
        let mut out = self.free(left);
        out.extend(self.free(right));
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Label of the deepest operation (left first) that binds every name in `names`.
    fn home(&self, e: &RhsExpr, names: &[&str]) -> Option<u32> {
        let RhsExpr::Binary { label, left, right } = e else {
            return None;
        };
        if let Some(l) = self.home(left, names).or_else(|| self.home(right, names)) {
            return Some(l);
        }
        let pre = self.before_reduce(e);
        names.iter().all(|v| pre.contains(&self.id(v))).then_some(*label)
    }

    fn look<'b>(&'b self, asg: &'b [i64]) -> impl Fn(&str) -> Option<i64> + 'b {
        move |n: &str| match self.vars.iter().position(|x| *x == n) {
            Some(i) => Some(asg[i]),
            None => self.env.get(n).copied(),
        }
    }

    fn check(&self, c: &BoolCond, asg: &[i64]) -> bool {
        let member = |l: &str, v: i64| {
            v >= 0 && self.store.list(l).is_some_and(|xs| xs.contains(&(v as Coord)))
        };
        c.eval_with(&self.look(asg), &member) == Some(true)
    }

    fn empty_of(&self, e: &RhsExpr) -> Result<Scalar, EngineError> {
        Ok(match e {
            RhsExpr::Leaf(a) => {
                let te = self.tensor(&a.tensor)?.empty();
                match &a.unary {
                    None => te,
                    Some(u) => {
                        let u = self.reg.unary(u).map_err(|x| err(self.s, x))?;
                        let dt = u.apply(te).map_err(|x| err(self.s, x))?.dtype();
                        te.cast(dt, &te).map_err(|x| err(self.s, x))?
                    }
                }
            }
            RhsExpr::RankVar(_) => Scalar::int(0),
            RhsExpr::Lit(v) => match v.dtype() {
                DType::Int => Scalar::int(0),
                DType::Float => Scalar::Real(0.0),
                DType::Bool => Scalar::Bool(false),
            },
            RhsExpr::Binary { .. } => self.tensor(&self.s.output.tensor)?.empty(),
        })
    }

    fn read(&self, a: &Access, asg: &[i64]) -> Result<Scalar, EngineError> {
        let t = self.tensor(&a.tensor)?;
        let look = self.look(asg);
        let mut p: Vec<Coord> = Vec::new();
        let mut ok = true;
        for (k, sub) in a.subs.iter().enumerate() {
            let gen = k == 0 && t.decl().is_generational();
            let c = if gen {
                sub.expr.eval(&|n: &str| self.env.get(n).copied())
            } else {
                sub.expr.eval(&look)
            };
            match c {
                Some(c) if c >= 0 && (gen || (c as u64) < bound(t.decl().ranks[k].shape)) => {
                    p.push(c as Coord)
                }
                _ => ok = false,
            }
        }
        Ok(if ok {
            t.stored(&p).unwrap_or(t.empty())
        } else {
            t.empty()
        })
    }

    fn eval(&self, e: &RhsExpr, asg: &mut Vec<i64>) -> Result<V, EngineError> {
        match e {
            RhsExpr::Leaf(a) => {
                let raw = self.read(a, asg)?;
                let v = match &a.unary {
                    Some(u) => self
                        .reg
                        .unary(u)
                        .and_then(|u| u.apply(raw))
                        .map_err(|x| err(self.s, x))?,
                    None => raw,
                };
                Ok(if v == self.empty_of(e)? { V::Empty } else { V::Val(v) })
            }
            RhsExpr::RankVar(v) => Ok(V::Val(Scalar::int(asg[self.id(v)]))),
            RhsExpr::Lit(v) => Ok(V::Val(*v)),
            RhsExpr::Binary { label, .. } => {
                let Some(Action::Reduce { compute, merge, .. }) = self.s.reduce_for(Some(*label)) else {
                    return self.combine(e, asg);
                };
                let compute = self.reg.binary(compute).map_err(|x| err(self.s, x))?;
                let merge = MergeOp::by_name(merge).expect("validated merge");
                let r = self.reduced(*label);
                let empty = self.empty_of(e)?;
                let pre: Vec<usize> = self.before_reduce(e);
                let mut acc: Option<Option<Scalar>> = None;
                for point in lex(&r.iter().map(|&v| self.size[v]).collect::<Vec<_>>()) {
                    for (k, &v) in r.iter().enumerate() {
                        asg[v] = point[k];
                    }
                    let x = match self.combine(e, asg)? {
                        V::Culled => continue,
                        V::Empty => None,
                        V::Val(v) => Some(v),
                    };
                    let at: Vec<Coord> = pre.iter().map(|&v| asg[v] as Coord).collect();
                    let ctx = OpCtx::uniform(&at, empty);
                    let state = acc.unwrap_or(None);
                    acc = Some(fold(compute, merge, &ctx, state, x).map_err(|x| err(self.s, x))?);
                }
                Ok(match acc {
                    None => V::Culled,
                    Some(None) => V::Empty,
                    Some(Some(v)) => V::Val(v),
                })
            }
        }
    }

    /// The map step of a labeled operation at a fully assigned point.
    fn combine(&self, e: &RhsExpr, asg: &mut Vec<i64>) -> Result<V, EngineError> {
        let RhsExpr::Binary { label, left, right } = e else {
            unreachable!()
        };
        let lv = self.eval(left, asg)?;
        let rv = self.eval(right, asg)?;
        if matches!(lv, V::Culled) || matches!(rv, V::Culled) {
            return Ok(V::Culled);
        }
        if let Some(cs) = self.at_label.get(label) {
            if !cs.iter().all(|c| self.check(c, asg)) {
                return Ok(V::Culled);
            }
        }
        let (compute, merge) = match self.s.map_for(*label) {
            Some(Action::Map { compute, merge, .. }) => (compute.as_str(), merge.as_str()),
            _ => ("mul", "pass"),
        };
        let merge = MergeOp::by_name(merge).expect("validated merge");
        let (le, re) = (matches!(lv, V::Val(_)), matches!(rv, V::Val(_)));
        if !merge.eval(le, re) {
            return Ok(V::Culled);
        }
        let out = self.tensor(&self.s.output.tensor)?;
        let (dt, out_empty) = (out.dtype(), out.empty());
        let (lempty, rempty) = (self.empty_of(left)?, self.empty_of(right)?);
        let to_out = |v: Scalar, src: Scalar| v.cast(dt, &src).map_err(|x| err(self.s, x));
        let ctx_l = to_out(lempty, lempty)?;
        let ctx_r = to_out(rempty, rempty)?;
        let a = match lv {
            V::Val(v) => to_out(v, lempty)?,
            _ => ctx_l,
        };
        let b = match rv {
            V::Val(v) => to_out(v, rempty)?,
            _ => ctx_r,
        };
        let at: Vec<Coord> = self.before_reduce(e).iter().map(|&v| asg[v] as Coord).collect();
        let ctx = OpCtx {
            point: &at,
            left_empty: ctx_l,
            right_empty: ctx_r,
            out_empty,
        };
        let v = self
            .reg
            .binary(compute)
            .and_then(|op| op.apply(&ctx, a, b))
            .map_err(|x| err(self.s, x))?;
        Ok(if v == out_empty { V::Empty } else { V::Val(v) })
    }

    fn run(&self, cap: u64) -> Result<StmtOutput, EngineError> {
        let total = self
            .size
            .iter()
            .fold(1u64, |a, &n| a.saturating_mul(n.max(0) as u64));
        if total > cap {
            return Err(EngineError::IterationCap {
                stmt: statement_text(self.s),
                cap,
            });
        }
        let out_t = self.tensor(&self.s.output.tensor)?;
        let gen_out = out_t.decl().is_generational();
        let generation = if gen_out {
            let g = self.s.output.subs[0]
                .expr
                .eval(&|n: &str| self.env.get(n).copied())
                .unwrap_or(-1);
            if g < 0 {
                return Err(EngineError::OutOfShape {
                    stmt: statement_text(self.s),
                    tensor: out_t.name().into(),
                    coords: Vec::new(),
                });
            }
            Some(g as Coord)
        } else {
            None
        };
        let first = gen_out as usize;

        // Statement-level variables: everything not folded by a labeled reduce,
        // plus anything a leftover constraint needs.
        let mut labels = Vec::new();
        self.s.rhs.labels(&mut labels);
        let folded: Vec<usize> = labels.iter().flat_map(|l| self.reduced(*l)).collect();
        let mut space: Vec<usize> = (0..self.vars.len()).filter(|v| !folded.contains(v)).collect();
        for c in &self.at_top {
            let mut names = Vec::new();
            c.vars(&mut names);
            space.extend(names.iter().map(|v| self.id(v)));
        }
        space.sort_unstable();
        space.dedup();

        let (compute, merge) = match self.s.reduce_for(None) {
            Some(Action::Reduce { compute, merge, .. }) => (compute.as_str(), merge.as_str()),
            _ => ("add", "pass"),
        };
        let compute = self.reg.binary(compute).map_err(|x| err(self.s, x))?;
        let merge = MergeOp::by_name(merge).expect("validated merge");
        let top_empty = self.empty_of(&self.s.rhs)?;
        let (dt, out_empty) = (out_t.dtype(), out_t.empty());

        let mut groups: BTreeMap<Vec<i64>, Option<Scalar>> = BTreeMap::new();
        let mut asg = alloc::vec![0i64; self.vars.len()];
        for point in lex(&space.iter().map(|&v| self.size[v]).collect::<Vec<_>>()) {
            for (k, &v) in space.iter().enumerate() {
                asg[v] = point[k];
            }
            if !self.at_top.iter().all(|c| self.check(c, &asg)) {
                continue;
            }
            let x = match self.eval(&self.s.rhs, &mut asg)? {
                V::Culled => continue,
                V::Empty => None,
                V::Val(v) => {
                    let c = v.cast(dt, &top_empty).map_err(|x| err(self.s, x))?;
                    if c == out_empty {
                        None
                    } else {
                        Some(c)
                    }
                }
            };
            let look = self.look(&asg);
            let key: Vec<i64> = self.s.output.subs[first..]
                .iter()
                .map(|sub| sub.expr.eval(&look).unwrap_or(-1))
                .collect();
            let at: Vec<Coord> = point.iter().map(|&c| c as Coord).collect();
            let ctx = OpCtx::uniform(&at, out_empty);
            let slot = groups.entry(key).or_insert(None);
            *slot = fold(compute, merge, &ctx, *slot, x).map_err(|x| err(self.s, x))?;
        }

        let decl: TensorDecl = if gen_out {
            out_t.decl().slice_decl()
        } else {
            out_t.decl().clone()
        };
        let mut written: Vec<(Vec<Coord>, Scalar)> = Vec::new();
        for (key, v) in groups {
            let Some(v) = v else { continue };
            if key.iter().any(|&c| c < 0) || !decl.in_shape(&key.iter().map(|&c| c as Coord).collect::<Vec<_>>()) {
                return Err(EngineError::OutOfShape {
                    stmt: statement_text(self.s),
                    tensor: out_t.name().into(),
                    coords: key,
                });
            }
            written.push((key.iter().map(|&c| c as Coord).collect(), v));
        }
        let tensor = match self.s.populate() {
            Some(Action::Populate { compute, coord, .. }) => {
                let mutable: Vec<bool> = self.s.output.subs[first..].iter().map(|s| s.mutable).collect();
                self.populate(decl, &mutable, compute, &coord.name, coord.count, &written)?
            }
            _ => {
                let mut t = Tensor::new(decl);
                for (p, v) in written {
                    t.set(&p, v)?;
                }
                t
            }
        };
        Ok(StmtOutput { generation, tensor })
    }

    fn populate(
        &self,
        decl: TensorDecl,
        mutable: &[bool],
        compute: &str,
        coord: &str,
        count: Option<u64>,
        written: &[(Vec<Coord>, Scalar)],
    ) -> Result<Tensor, EngineError> {
        let unary = self.reg.unary(compute).map_err(|x| err(self.s, x))?;
        let op = self.reg.coord(coord).map_err(|x| err(self.s, x))?;
        let mut t = Tensor::new(decl.clone());
        for (p, v) in written {
            // The fiber is every stored point agreeing with `p` on the fixed ranks.
            let fixed = |q: &[Coord]| q.iter().zip(p).zip(mutable).all(|((a, b), m)| *m || a == b);
            let pick = |q: &[Coord]| -> Vec<Coord> {
                q.iter().zip(mutable).filter(|(_, m)| **m).map(|(c, _)| *c).collect()
            };
            let fiber: Vec<(Vec<Coord>, Scalar)> =
                t.iter().filter(|(q, _)| fixed(q)).map(|(q, x)| (pick(&q), x)).collect();
            let mine = pick(p);
            let keep = op
                .apply(&crate::operators::CoordCall {
                    point: p,
                    count,
                    rhs_coord: &mine,
                    rhs_value: *v,
                    fiber: &fiber,
                })
                .map_err(|x| err(self.s, x))?;
            for k in &keep {
                if *k != mine && !fiber.iter().any(|(c, _)| c == k) {
                    return Err(EngineError::PopulateSubset {
                        op: coord.into(),
                        coord: k.clone(),
                    });
                }
            }
            let full = |m: &[Coord]| -> Vec<Coord> {
                let mut it = m.iter();
                p.iter()
                    .zip(mutable)
                    .map(|(c, is_m)| if *is_m { *it.next().expect("arity") } else { *c })
                    .collect()
            };
            for (c, _) in &fiber {
                if !keep.contains(c) {
                    t.set(&full(c), decl.empty)?;
                }
            }
            if keep.contains(&mine) {
                let nv = unary.apply(*v).map_err(|x| err(self.s, x))?;
                t.set(&full(&mine), nv)?;
            }
        }
        Ok(t)
    }
}

/// One reduction step, written out independently of the engine.
fn fold(
    compute: &crate::operators::ComputeOp,
    merge: MergeOp,
    ctx: &OpCtx<'_>,
    state: Option<Scalar>,
    x: Option<Scalar>,
) -> Result<Option<Scalar>, OpError> {
    let admitted = merge.table()[2 * state.is_some() as usize + x.is_some() as usize];
    if !admitted {
        return Ok(None);
    }
    match (state, x) {
        (Some(a), Some(b)) => {
            let v = compute.apply(ctx, a, b)?;
            Ok(if v == ctx.out_empty { None } else { Some(v) })
        }
        (Some(a), None) => Ok(Some(a)),
        (None, Some(b)) => Ok(Some(b)),
        (None, None) => Ok(None),
    }
}

/// Every point of the box `[0, sizes)` in lexicographic order.
fn lex(sizes: &[i64]) -> Vec<Vec<i64>> {
    let mut out = alloc::vec![Vec::new()];
    for &n in sizes {
        let mut next = Vec::with_capacity(out.len() * n.max(0) as usize);
        for p in &out {
            for c in 0..n.max(0) {
                let mut q = p.clone();
                q.push(c);
                next.push(q);
            }
        }
        out = next;
    }
    out
}
