//! Sparse statement evaluation.
//!
//! A statement is planned into a tree of nodes mirroring its right-hand side.
//! Each node is evaluated into a partial tensor over its free variables, visiting
//! only the points its merge operator can admit. Points that are never visited
//! are known to be culled, so the result equals a dense walk of the whole
//! iteration space.

use alloc::borrow::Cow;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use super::populate::eval_populate;
use super::{EngineError, RunLimits, Store};
use crate::ast::{Access, Action, BoolCond, EinsumStmt, RankExpr, RhsExpr, Subscript};
use crate::fibertree::{Coord, DType, Scalar, Shape, Tensor};
use crate::operators::{ComputeOp, MergeOp, OpCtx, OpError, OperatorRegistry, UnaryOp};
use crate::parser::statement_text;

/// Value of a node at one iteration point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeVal {
    /// Culled by a merge or a rank constraint; contributes nothing downstream.
    Aborted,
    /// Visited, but the value equals the node's empty value.
    Absent,
    Value(Scalar),
}

/// Applies a map action to one operand pair. Operands must already have the
/// output dtype; an absent operand reads as its side's empty value.
pub fn eval_map(
    compute: &ComputeOp,
    merge: MergeOp,
    ctx: &OpCtx<'_>,
    left: Option<Scalar>,
    right: Option<Scalar>,
) -> Result<NodeVal, OpError> {
    if !merge.eval(left.is_some(), right.is_some()) {
        return Ok(NodeVal::Aborted);
    }
    let v = compute.apply(
        ctx,
        left.unwrap_or(ctx.left_empty),
        right.unwrap_or(ctx.right_empty),
    )?;
    Ok(if v == ctx.out_empty {
        NodeVal::Absent
    } else {
        NodeVal::Value(v)
    })
}

/// One reduce step: folds `x` into the running `state`.
pub fn eval_reduce(
    compute: &ComputeOp,
    merge: MergeOp,
    ctx: &OpCtx<'_>,
    state: Option<Scalar>,
    x: Option<Scalar>,
) -> Result<Option<Scalar>, OpError> {
    if !merge.eval(state.is_some(), x.is_some()) {
        return Ok(None);
    }
    Ok(match (state, x) {
        (Some(t), Some(x)) => {
            let v = compute.apply(ctx, t, x)?;
            (v != ctx.out_empty).then_some(v)
        }
        (Some(t), None) => Some(t),
        (None, x) => x,
    })
}

/// Result of one statement: the generation written (if any) and its content.
#[derive(Clone, Debug, PartialEq)]
pub struct StmtOutput {
    pub generation: Option<Coord>,
    pub tensor: Tensor,
}

/// Evaluates one desugared statement against `store`. Cascade variables are
/// read from `env`.
pub fn eval_stmt(
    s: &EinsumStmt,
    store: &Store,
    env: &BTreeMap<String, i64>,
    reg: &OperatorRegistry,
    limits: &RunLimits,
) -> Result<StmtOutput, EngineError> {
    let mut ev = Eval::plan(s, store, env, reg, limits.max_points)?;
    ev.run(store, reg)
}

pub(crate) fn zero_of(d: DType) -> Scalar {
    match d {
        DType::Int => Scalar::int(0),
        DType::Float => Scalar::Real(0.0),
        DType::Bool => Scalar::Bool(false),
    }
}

struct LeafPlan<'a> {
    src: Cow<'a, Tensor>,
    subs: &'a [Subscript],
    shape: Vec<u64>,
    unary: Option<&'a UnaryOp>,
}

struct ReducePlan<'a> {
    vars: Vec<usize>,
    compute: &'a ComputeOp,
    merge: MergeOp,
}

enum Kind<'a> {
    Leaf(LeafPlan<'a>),
    RankVar(usize),
    Lit(Scalar),
    Binary {
        left: usize,
        right: usize,
        compute: &'a ComputeOp,
        merge: MergeOp,
        reduce: Option<ReducePlan<'a>>,
    },
}

struct Node<'a> {
    kind: Kind<'a>,
    /// Free variables before this node's labeled reduce, ascending id.
    pre: Vec<usize>,
    /// Free variables of the node's value, ascending id.
    post: Vec<usize>,
    empty: Scalar,
    constraints: Vec<usize>,
}

struct Constraint<'a> {
    cond: &'a BoolCond,
    vars: Vec<usize>,
}

/// A node's evaluated content over its `post` variables.
enum Part {
    /// Every non-culled point is present; `None` marks an absent value.
    Complete(BTreeMap<Vec<i64>, Option<Scalar>>),
    /// Only values are present; every other point is absent, never culled.
    Incomplete(BTreeMap<Vec<i64>, Scalar>),
    /// Evaluated on demand.
    Lazy,
}

/// A set of points over `vars`; `None` is the full product of their domains.
struct KeySet {
    vars: Vec<usize>,
    keys: Option<Vec<Vec<i64>>>,
}

struct Eval<'a> {
    stmt: &'a EinsumStmt,
    env: &'a BTreeMap<String, i64>,
    names: Vec<&'a str>,
    dom: Vec<i64>,
    nodes: Vec<Node<'a>>,
    constraints: Vec<Constraint<'a>>,
    stmt_constraints: Vec<usize>,
    lists: BTreeMap<&'a str, BTreeSet<i64>>,
    out_subs: &'a [Subscript],
    out_shape: Vec<u64>,
    out_dtype: DType,
    out_empty: Scalar,
    generation: Option<i64>,
    used: u64,
    cap: u64,
}

fn is_generational(t: &Tensor) -> bool {
    t.decl().is_generational()
}

fn union_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = a.iter().chain(b).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}

impl<'a> Eval<'a> {
    fn plan(
        s: &'a EinsumStmt,
        store: &'a Store,
        env: &'a BTreeMap<String, i64>,
        reg: &'a OperatorRegistry,
        cap: u64,
    ) -> Result<Self, EngineError> {
        let tensor = |name: &str| {
            store
                .get(name)
                .ok_or_else(|| EngineError::MissingUser(name.into()))
        };
        let out_t = tensor(&s.output.tensor)?;
        let out_gen = is_generational(out_t);
        let env_look = |n: &str| env.get(n).copied();
        let generation = if out_gen {
            Some(
                s.output.subs[0]
                    .expr
                    .eval(&env_look)
                    .filter(|g| *g >= 0)
                    .ok_or_else(|| EngineError::OutOfShape {
                        stmt: statement_text(s),
                        tensor: s.output.tensor.clone(),
                        coords: Vec::new(),
                    })?,
            )
        } else {
            None
        };

        // Variables in canonical order, with the domain of the rank each is bound to.
        let mut accesses: Vec<&Access> = alloc::vec![&s.output];
        accesses.extend(s.rhs.accesses());
        let mut names: Vec<&str> = Vec::new();
        let mut bare: Vec<Option<i64>> = Vec::new();
        let mut any: Vec<Option<i64>> = Vec::new();
        for a in &accesses {
            let t = tensor(&a.tensor)?;
            let skip = is_generational(t) as usize;
            for (k, sub) in a.subs.iter().enumerate().skip(skip) {
                let size = match t.decl().ranks.get(k).map(|r| r.shape) {
                    Some(Shape::Bounded(n)) => n as i64,
                    _ => 0,
                };
                let mut vs = Vec::new();
                sub.expr.vars(&mut vs);
                for v in vs {
                    let id = match names.iter().position(|n| *n == v) {
                        Some(id) => id,
                        None => {
                            names.push(v);
                            bare.push(None);
                            any.push(None);
                            names.len() - 1
                        }
                    };
                    any[id].get_or_insert(size);
                    if matches!(&sub.expr, RankExpr::Var(_)) {
                        bare[id].get_or_insert(size);
                    }
                }
            }
        }
        let dom = bare
            .iter()
            .zip(&any)
            .map(|(b, a)| b.or(*a).unwrap_or(0))
            .collect();

        let out_skip = out_gen as usize;
        let mut ev = Eval {
            stmt: s,
            env,
            names,
            dom,
            nodes: Vec::new(),
            constraints: Vec::new(),
            stmt_constraints: Vec::new(),
            lists: BTreeMap::new(),
            out_subs: &s.output.subs[out_skip..],
            out_shape: out_t.decl().ranks[out_skip..]
                .iter()
                .map(|r| match r.shape {
                    Shape::Bounded(n) => n,
                    Shape::Unbounded => u64::MAX,
                })
                .collect(),
            out_dtype: out_t.dtype(),
            out_empty: out_t.empty(),
            generation,
            used: 0,
            cap,
        };
        let root = ev.build(&s.rhs, store, reg)?;
        debug_assert_eq!(root, ev.nodes.len() - 1);

        // Constraints: output subscripts first, then leaves left to right.
        let mut conds: Vec<&'a BoolCond> = Vec::new();
        for a in &accesses {
            for sub in &a.subs {
                if let Some(c) = &sub.constraint {
                    conds.push(c);
                }
            }
        }
        for c in conds {
            let mut vs = Vec::new();
            c.vars(&mut vs);
            let mut ids: Vec<usize> = vs.iter().filter_map(|v| ev.var_id(v)).collect();
            ids.sort_unstable();
            ids.dedup();
            collect_lists(c, &mut |l| {
                if !ev.lists.contains_key(l) {
                    let items = store
                        .list(l)
                        .ok_or_else(|| EngineError::MissingList(l.into()))?;
                    ev.lists.insert(l, items.iter().map(|&x| x as i64).collect());
                }
                Ok(())
            })?;
            let idx = ev.constraints.len();
            ev.constraints.push(Constraint { cond: c, vars: ids });
            match ev.place(root, idx) {
                Some(n) => ev.nodes[n].constraints.push(idx),
                None => ev.stmt_constraints.push(idx),
            }
        }
        Ok(ev)
    }

    fn var_id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| *n == name)
    }

    fn op_err(&self, e: OpError) -> EngineError {
        EngineError::Op {
            stmt: statement_text(self.stmt),
            source: e,
        }
    }

    fn cap_err(&self) -> EngineError {
        EngineError::IterationCap {
            stmt: statement_text(self.stmt),
            cap: self.cap,
        }
    }

    fn charge(&mut self, n: u64) -> Result<(), EngineError> {
        self.used = self.used.saturating_add(n);
        if self.used > self.cap {
            Err(self.cap_err())
        } else {
            Ok(())
        }
    }

    fn dense_size(&self, vars: &[usize]) -> u64 {
        vars.iter()
            .fold(1u64, |acc, &v| acc.saturating_mul(self.dom[v].max(0) as u64))
    }

    fn build(
        &mut self,
        e: &'a RhsExpr,
        store: &'a Store,
        reg: &'a OperatorRegistry,
    ) -> Result<usize, EngineError> {
        let node = match e {
            RhsExpr::Leaf(a) => {
                let t = store
                    .get(&a.tensor)
                    .ok_or_else(|| EngineError::MissingUser(a.tensor.clone()))?;
                let gen = is_generational(t);
                let src = if gen {
                    let env = self.env;
                    match a.subs[0].expr.eval(&|n: &str| env.get(n).copied()) {
                        Some(g) if g >= 0 => Cow::Owned(t.slice(g as Coord)),
                        _ => Cow::Owned(Tensor::new(t.decl().slice_decl())),
                    }
                } else {
                    Cow::Borrowed(t)
                };
                let subs = &a.subs[gen as usize..];
                let shape = src
                    .decl()
                    .ranks
                    .iter()
                    .map(|r| match r.shape {
                        Shape::Bounded(n) => n,
                        Shape::Unbounded => u64::MAX,
                    })
                    .collect();
                let unary = match &a.unary {
                    Some(u) => Some(reg.unary(u).map_err(|e| self.op_err(e))?),
                    None => None,
                };
                let t_empty = t.empty();
                let empty = match unary {
                    Some(u) => {
                        let d = u.apply(t_empty).map_err(|e| self.op_err(e))?.dtype();
                        t_empty.cast(d, &t_empty).map_err(|e| self.op_err(e.into()))?
                    }
                    None => t_empty,
                };
                let mut vars = Vec::new();
                for sub in subs {
                    let mut vs = Vec::new();
                    sub.expr.vars(&mut vs);
                    vars.extend(vs.iter().filter_map(|v| self.var_id(v)));
                }
                vars.sort_unstable();
                vars.dedup();
                Node {
                    kind: Kind::Leaf(LeafPlan {
                        src,
                        subs,
                        shape,
                        unary,
                    }),
                    pre: vars.clone(),
                    post: vars,
                    empty,
                    constraints: Vec::new(),
                }
            }
            RhsExpr::RankVar(v) => {
                let id = self.var_id(v).unwrap_or(0);
                Node {
                    kind: Kind::RankVar(id),
                    pre: alloc::vec![id],
                    post: alloc::vec![id],
                    empty: Scalar::int(0),
                    constraints: Vec::new(),
                }
            }
            RhsExpr::Lit(s) => Node {
                kind: Kind::Lit(*s),
                pre: Vec::new(),
                post: Vec::new(),
                empty: zero_of(s.dtype()),
                constraints: Vec::new(),
            },
            RhsExpr::Binary { label, left, right } => {
                let l = self.build(left, store, reg)?;
                let r = self.build(right, store, reg)?;
                let (compute, merge) = match self.stmt.map_for(*label) {
                    Some(Action::Map { compute, merge, .. }) => (compute.as_str(), merge.as_str()),
                    _ => ("mul", "pass"),
                };
                let compute = reg.binary(compute).map_err(|e| self.op_err(e))?;
                let merge = self.merge(merge)?;
                let pre = union_sorted(&self.nodes[l].post, &self.nodes[r].post);
                let reduce = match self.stmt.reduce_for(Some(*label)) {
                    Some(Action::Reduce {
                        ranks,
                        compute,
                        merge,
                        ..
                    }) => {
                        let mut vars: Vec<usize> =
                            ranks.iter().filter_map(|r| self.var_id(r)).collect();
                        vars.sort_unstable();
                        Some(ReducePlan {
                            vars,
                            compute: reg.binary(compute).map_err(|e| self.op_err(e))?,
                            merge: self.merge(merge)?,
                        })
                    }
                    _ => None,
                };
                let post = match &reduce {
                    Some(rp) => pre.iter().copied().filter(|v| !rp.vars.contains(v)).collect(),
                    None => pre.clone(),
                };
                Node {
                    kind: Kind::Binary {
                        left: l,
                        right: r,
                        compute,
                        merge,
                        reduce,
                    },
                    pre,
                    post,
                    empty: self.out_empty,
                    constraints: Vec::new(),
                }
            }
        };
        self.nodes.push(node);
        Ok(self.nodes.len() - 1)
    }

    fn merge(&self, name: &str) -> Result<MergeOp, EngineError> {
        MergeOp::by_name(name).ok_or_else(|| {
            self.op_err(OpError::Unknown {
                kind: crate::operators::OpKind::Merge,
                name: name.into(),
            })
        })
    }

    /// The lowest binary node whose free variables cover the constraint,
    /// searching left subtrees first.
    fn place(&self, n: usize, c: usize) -> Option<usize> {
        let node = &self.nodes[n];
        let Kind::Binary { left, right, .. } = node.kind else {
            return None;
        };
        self.place(left, c).or_else(|| self.place(right, c)).or_else(|| {
            self.constraints[c]
                .vars
                .iter()
                .all(|v| node.pre.contains(v))
                .then_some(n)
        })
    }

    fn lookup<'b>(&'b self, vals: &'b [i64]) -> impl Fn(&str) -> Option<i64> + 'b {
        move |n: &str| match self.var_id(n) {
            Some(i) => Some(vals[i]),
            None => self.env.get(n).copied(),
        }
    }

    fn holds(&self, c: usize, vals: &[i64]) -> bool {
        let look = self.lookup(vals);
        let in_list = |l: &str, v: i64| self.lists.get(l).is_some_and(|s| s.contains(&v));
        self.constraints[c].cond.eval_with(&look, &in_list) == Some(true)
    }

    fn leaf_at(&self, n: usize, leaf: &LeafPlan<'_>, vals: &[i64]) -> Result<NodeVal, EngineError> {
        let look = self.lookup(vals);
        let mut coords = Vec::with_capacity(leaf.subs.len());
        let mut inside = true;
        for (sub, &size) in leaf.subs.iter().zip(&leaf.shape) {
            match sub.expr.eval(&look) {
                Some(c) if c >= 0 && (c as u64) < size => coords.push(c as Coord),
                _ => inside = false,
            }
        }
        let t_empty = leaf.src.empty();
        let raw = if inside {
            leaf.src.stored(&coords).unwrap_or(t_empty)
        } else {
            t_empty
        };
        let v = match leaf.unary {
            Some(u) => u.apply(raw).map_err(|e| self.op_err(e))?,
            None => raw,
        };
        Ok(if v == self.nodes[n].empty {
            NodeVal::Absent
        } else {
            NodeVal::Value(v)
        })
    }

    fn value(&self, n: usize, parts: &[Part], vals: &[i64]) -> Result<NodeVal, EngineError> {
        let node = &self.nodes[n];
        let key = || node.post.iter().map(|&v| vals[v]).collect::<Vec<i64>>();
        Ok(match &parts[n] {
            Part::Complete(m) => match m.get(&key()) {
                None => NodeVal::Aborted,
                Some(None) => NodeVal::Absent,
                Some(Some(v)) => NodeVal::Value(*v),
            },
            Part::Incomplete(m) => match m.get(&key()) {
                None => NodeVal::Absent,
                Some(v) => NodeVal::Value(*v),
            },
            Part::Lazy => match &node.kind {
                Kind::Leaf(l) => self.leaf_at(n, l, vals)?,
                Kind::RankVar(v) => NodeVal::Value(Scalar::int(vals[*v])),
                Kind::Lit(s) => NodeVal::Value(*s),
                Kind::Binary { .. } => unreachable!("binary nodes are always materialized"),
            },
        })
    }

    /// Points of node `n` that may hold a value (`exists`) or be absent (`!exists`).
    fn side_set(&self, n: usize, parts: &[Part], exists: bool) -> KeySet {
        let node = &self.nodes[n];
        let vars = node.post.clone();
        let keys = match (&parts[n], exists) {
            (Part::Complete(m), e) => Some(
                m.iter()
                    .filter(|(_, v)| v.is_some() == e)
                    .map(|(k, _)| k.clone())
                    .collect(),
            ),
            (Part::Incomplete(m), true) => Some(m.keys().cloned().collect()),
            (Part::Lazy, false) if matches!(node.kind, Kind::Lit(_) | Kind::RankVar(_)) => {
                Some(Vec::new())
            }
            _ => None,
        };
        KeySet { vars, keys }
    }

    /// Points of node `n` that are not culled.
    fn live_set(&self, n: usize, parts: &[Part]) -> KeySet {
        let vars = self.nodes[n].post.clone();
        let keys = match &parts[n] {
            Part::Complete(m) => Some(m.keys().cloned().collect()),
            _ => None,
        };
        KeySet { vars, keys }
    }

    fn dense_keys(&mut self, vars: &[usize]) -> Result<Vec<Vec<i64>>, EngineError> {
        self.charge(self.dense_size(vars))?;
        Ok(self.product(vars))
    }

    /// All points over `vars` in lexicographic order.
    fn product(&self, vars: &[usize]) -> Vec<Vec<i64>> {
        let mut out = Vec::new();
        if vars.iter().any(|&v| self.dom[v] <= 0) {
            return out;
        }
        let mut cur: Vec<i64> = alloc::vec![0; vars.len()];
        loop {
            out.push(cur.clone());
            let mut k = vars.len();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                cur[k] += 1;
                if cur[k] < self.dom[vars[k]] {
                    break;
                }
                cur[k] = 0;
            }
        }
    }

    /// Natural join of two point sets; dense sides extend over their domains.
    fn join(&mut self, a: KeySet, b: KeySet) -> Result<KeySet, EngineError> {
        let vars = union_sorted(&a.vars, &b.vars);
        let (a, b) = match (a.keys.is_some(), b.keys.is_some()) {
            (false, false) => return Ok(KeySet { vars, keys: None }),
            (false, true) => (b, a),
            _ => (a, b),
        };
        let ak = a.keys.unwrap_or_default();
        // Where each output variable comes from: (from_a, index).
        let src: Vec<(bool, usize)> = vars
            .iter()
            .map(|v| match a.vars.iter().position(|x| x == v) {
                Some(i) => (true, i),
                None => (false, b.vars.iter().position(|x| x == v).unwrap_or(0)),
            })
            .collect();
        let combine = |ka: &[i64], kb: &[i64]| -> Vec<i64> {
            src.iter()
                .map(|&(from_a, i)| if from_a { ka[i] } else { kb[i] })
                .collect()
        };
        let mut out = Vec::new();
        match b.keys {
            None => {
                let extra: Vec<usize> = b.vars.iter().copied().filter(|v| !a.vars.contains(v)).collect();
                let n = (ak.len() as u64).saturating_mul(self.dense_size(&extra));
                self.charge(n)?;
                let ext = self.product(&extra);
                let mut full_b = alloc::vec![0i64; b.vars.len()];
                for ka in &ak {
                    for e in &ext {
                        for (j, v) in b.vars.iter().enumerate() {
                            full_b[j] = match a.vars.iter().position(|x| x == v) {
                                Some(i) => ka[i],
                                None => e[extra.iter().position(|x| x == v).unwrap_or(0)],
                            };
                        }
                        out.push(combine(ka, &full_b));
                    }
                }
            }
            Some(bk) => {
                let shared: Vec<usize> = a.vars.iter().copied().filter(|v| b.vars.contains(v)).collect();
                let pa: Vec<usize> = shared
                    .iter()
                    .map(|v| a.vars.iter().position(|x| x == v).unwrap_or(0))
                    .collect();
                let pb: Vec<usize> = shared
                    .iter()
                    .map(|v| b.vars.iter().position(|x| x == v).unwrap_or(0))
                    .collect();
                let mut index: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
                for (i, k) in bk.iter().enumerate() {
                    index.entry(pb.iter().map(|&j| k[j]).collect()).or_default().push(i);
                }
                for ka in &ak {
                    let probe: Vec<i64> = pa.iter().map(|&j| ka[j]).collect();
                    if let Some(hits) = index.get(&probe) {
                        self.charge(hits.len() as u64)?;
                        for &i in hits {
                            out.push(combine(ka, &bk[i]));
                        }
                    }
                }
            }
        }
        Ok(KeySet {
            vars,
            keys: Some(out),
        })
    }

    fn eval_binary(&mut self, n: usize, parts: &[Part]) -> Result<Part, EngineError> {
        let Kind::Binary {
            left,
            right,
            compute,
            merge,
            ..
        } = self.nodes[n].kind
        else {
            unreachable!()
        };
        let pre = self.nodes[n].pre.clone();
        let mut cands: BTreeSet<Vec<i64>> = BTreeSet::new();
        let mut dense = false;
        for (le, re) in [(true, true), (true, false), (false, true), (false, false)] {
            if !merge.eval(le, re) {
                continue;
            }
            let a = self.side_set(left, parts, le);
            let b = self.side_set(right, parts, re);
            match self.join(a, b)?.keys {
                Some(keys) => cands.extend(keys),
                None => {
                    dense = true;
                    break;
                }
            }
        }
        let points: Vec<Vec<i64>> = if dense {
            self.dense_keys(&pre)?
        } else {
            cands.into_iter().collect()
        };

        let out_dtype = self.out_dtype;
        let node_empty = self.nodes[n].empty;
        let cast = |v: Scalar, src_empty: Scalar| v.cast(out_dtype, &src_empty);
        let (l_empty, r_empty) = (self.nodes[left].empty, self.nodes[right].empty);
        let cl = cast(l_empty, l_empty).map_err(|e| self.op_err(e.into()))?;
        let cr = cast(r_empty, r_empty).map_err(|e| self.op_err(e.into()))?;

        let mut vals = alloc::vec![0i64; self.names.len()];
        let mut map: BTreeMap<Vec<i64>, Option<Scalar>> = BTreeMap::new();
        let mut upoint: Vec<Coord> = Vec::with_capacity(pre.len());
        for p in points {
            for (k, &v) in pre.iter().enumerate() {
                vals[v] = p[k];
            }
            let lv = self.value(left, parts, &vals)?;
            let rv = self.value(right, parts, &vals)?;
            if lv == NodeVal::Aborted || rv == NodeVal::Aborted {
                continue;
            }
            if !self.nodes[n].constraints.iter().all(|&c| self.holds(c, &vals)) {
                continue;
            }
            let operand = |v: NodeVal, src_empty: Scalar| -> Result<Option<Scalar>, EngineError> {
                match v {
                    NodeVal::Value(x) => Ok(Some(cast(x, src_empty).map_err(|e| self.op_err(e.into()))?)),
                    _ => Ok(None),
                }
            };
            let lo = operand(lv, l_empty)?;
            let ro = operand(rv, r_empty)?;
            upoint.clear();
            upoint.extend(p.iter().map(|&c| c as Coord));
            let ctx = OpCtx {
                point: &upoint,
                left_empty: cl,
                right_empty: cr,
                out_empty: node_empty,
            };
            match eval_map(compute, merge, &ctx, lo, ro).map_err(|e| self.op_err(e))? {
                NodeVal::Aborted => {}
                NodeVal::Absent => {
                    map.insert(p, None);
                }
                NodeVal::Value(v) => {
                    map.insert(p, Some(v));
                }
            }
        }

        let Kind::Binary {
            reduce: Some(rp), ..
        } = &self.nodes[n].kind
        else {
            return Ok(Part::Complete(map));
        };
        let keep: Vec<usize> = (0..pre.len()).filter(|&i| !rp.vars.contains(&pre[i])).collect();
        let mut out: BTreeMap<Vec<i64>, Option<Scalar>> = BTreeMap::new();
        for (p, x) in map {
            let key: Vec<i64> = keep.iter().map(|&i| p[i]).collect();
            upoint.clear();
            upoint.extend(p.iter().map(|&c| c as Coord));
            let ctx = OpCtx::uniform(&upoint, node_empty);
            let st = out.entry(key).or_insert(None);
            *st = eval_reduce(rp.compute, rp.merge, &ctx, *st, x).map_err(|e| self.op_err(e))?;
        }
        Ok(Part::Complete(out))
    }

    fn eval_leaf(&self, n: usize) -> Result<Part, EngineError> {
        let node = &self.nodes[n];
        let Kind::Leaf(leaf) = &node.kind else {
            return Ok(Part::Lazy);
        };
        let mut pos = Vec::with_capacity(leaf.subs.len());
        for sub in leaf.subs {
            match &sub.expr {
                RankExpr::Var(v) => match self.var_id(v) {
                    Some(id) if !pos.contains(&id) => pos.push(id),
                    _ => return Ok(Part::Lazy),
                },
                _ => return Ok(Part::Lazy),
            }
        }
        let t_empty = leaf.src.empty();
        if let Some(u) = leaf.unary {
            if u.apply(t_empty).map_err(|e| self.op_err(e))? != node.empty {
                return Ok(Part::Lazy);
            }
        }
        // Position in the stored coordinate of each post variable.
        let order: Vec<usize> = node
            .post
            .iter()
            .map(|v| pos.iter().position(|x| x == v).unwrap_or(0))
            .collect();
        let mut m = BTreeMap::new();
        'entries: for (pt, v) in leaf.src.iter() {
            for (k, &id) in pos.iter().enumerate() {
                if pt[k] as i64 >= self.dom[id] {
                    continue 'entries;
                }
            }
            let v = match leaf.unary {
                Some(u) => u.apply(v).map_err(|e| self.op_err(e))?,
                None => v,
            };
            if v != node.empty {
                m.insert(order.iter().map(|&k| pt[k] as i64).collect(), v);
            }
        }
        Ok(Part::Incomplete(m))
    }

    fn run(&mut self, store: &Store, reg: &OperatorRegistry) -> Result<StmtOutput, EngineError> {
        let mut parts: Vec<Part> = Vec::with_capacity(self.nodes.len());
        for n in 0..self.nodes.len() {
            let p = match self.nodes[n].kind {
                Kind::Binary { .. } => self.eval_binary(n, &parts)?,
                _ => self.eval_leaf(n)?,
            };
            parts.push(p);
        }
        let top = self.nodes.len() - 1;

        let (red_compute, red_merge) = match self.stmt.reduce_for(None) {
            Some(Action::Reduce { compute, merge, .. }) => (compute.as_str(), merge.as_str()),
            _ => ("add", "pass"),
        };
        let red_compute = reg.binary(red_compute).map_err(|e| self.op_err(e))?;
        let red_merge = self.merge(red_merge)?;

        let mut space = self.nodes[top].post.clone();
        for sub in self.out_subs {
            let mut vs = Vec::new();
            sub.expr.vars(&mut vs);
            space.extend(vs.iter().filter_map(|v| self.var_id(v)));
        }
        for &c in &self.stmt_constraints {
            space.extend(self.constraints[c].vars.iter().copied());
        }
        space.sort_unstable();
        space.dedup();

        // An absent value only matters when it can clear a running reduction.
        let base = if red_merge.eval(true, false) {
            self.side_set(top, &parts, true)
        } else {
            self.live_set(top, &parts)
        };
        let full = KeySet {
            vars: space.clone(),
            keys: None,
        };
        let points = match self.join(base, full)?.keys {
            Some(mut keys) => {
                keys.sort_unstable();
                keys
            }
            None => self.dense_keys(&space)?,
        };

        let top_empty = self.nodes[top].empty;
        let mut vals = alloc::vec![0i64; self.names.len()];
        let mut groups: BTreeMap<Vec<i64>, Option<Scalar>> = BTreeMap::new();
        let mut upoint: Vec<Coord> = Vec::with_capacity(space.len());
        for p in points {
            for (k, &v) in space.iter().enumerate() {
                vals[v] = p[k];
            }
            if !self.stmt_constraints.iter().all(|&c| self.holds(c, &vals)) {
                continue;
            }
            let x = match self.value(top, &parts, &vals)? {
                NodeVal::Aborted => continue,
                NodeVal::Absent => None,
                NodeVal::Value(v) => {
                    let c = v
                        .cast(self.out_dtype, &top_empty)
                        .map_err(|e| self.op_err(e.into()))?;
                    (c != self.out_empty).then_some(c)
                }
            };
            let look = self.lookup(&vals);
            let coords: Vec<i64> = self
                .out_subs
                .iter()
                .map(|s| s.expr.eval(&look).unwrap_or(-1))
                .collect();
            upoint.clear();
            upoint.extend(p.iter().map(|&c| c as Coord));
            let ctx = OpCtx::uniform(&upoint, self.out_empty);
            let st = groups.entry(coords).or_insert(None);
            *st = eval_reduce(red_compute, red_merge, &ctx, *st, x).map_err(|e| self.op_err(e))?;
        }

        let mut entries: Vec<(Vec<Coord>, Scalar)> = Vec::new();
        for (coords, v) in groups {
            let Some(v) = v else { continue };
            let inside = coords
                .iter()
                .zip(&self.out_shape)
                .all(|(&c, &n)| c >= 0 && (c as u64) < n);
            if !inside {
                return Err(EngineError::OutOfShape {
                    stmt: statement_text(self.stmt),
                    tensor: self.stmt.output.tensor.clone(),
                    coords,
                });
            }
            entries.push((coords.iter().map(|&c| c as Coord).collect(), v));
        }

        let out_t = store
            .get(&self.stmt.output.tensor)
            .ok_or_else(|| EngineError::MissingUser(self.stmt.output.tensor.clone()))?;
        let decl = if self.generation.is_some() {
            out_t.decl().slice_decl()
        } else {
            out_t.decl().clone()
        };
        let tensor = match self.stmt.populate() {
            Some(Action::Populate { compute, coord, .. }) => {
                let mutable: Vec<bool> = self.out_subs.iter().map(|s| s.mutable).collect();
                let compute = reg.unary(compute).map_err(|e| self.op_err(e))?;
                let cop = reg.coord(&coord.name).map_err(|e| self.op_err(e))?;
                eval_populate(&decl, &mutable, compute, cop, coord.count, &entries)
                    .map_err(|e| match e {
                        EngineError::Op { source, .. } => self.op_err(source),
                        other => other,
                    })?
                    .0
            }
            _ => {
                let mut t = Tensor::new(decl);
                for (pt, v) in entries {
                    t.set(&pt, v)?;
                }
                t
            }
        };
        Ok(StmtOutput {
            generation: self.generation.map(|g| g as Coord),
            tensor,
        })
    }
}

fn collect_lists<'a>(
    c: &'a BoolCond,
    f: &mut impl FnMut(&'a str) -> Result<(), EngineError>,
) -> Result<(), EngineError> {
    match c {
        BoolCond::InList(_, l) => f(l),
        BoolCond::And(a, b) => {
            collect_lists(a, f)?;
            collect_lists(b, f)
        }
        BoolCond::Compare(..) => Ok(()),
    }
}
