//! Static checks over a parsed program.
//!
//! Diagnostics carry an item index: declarations, then initializations, then
//! body items in source order (each statement, each nested `cascade` header,
//! each `until` clause). The parser records spans in the same order.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::{
    desugar_case, desugar_update, push_unique, Access, Action, Cascade, CaseStmt, Decl,
    EinsumStmt, Init, Program, RankExpr, RhsExpr, SizeExpr, Statement, StopCond,
};
use crate::operators::{MergeOp, OperatorRegistry};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub message: String,
    pub item: Option<usize>,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Validates against the builtin operator registry.
pub fn validate(p: &Program) -> Vec<Diagnostic> {
    validate_with(p, &OperatorRegistry::builtin())
}

pub fn validate_with(p: &Program, reg: &OperatorRegistry) -> Vec<Diagnostic> {
    let mut v = Validator {
        p,
        reg,
        diags: Vec::new(),
        item: 0,
    };
    v.run();
    v.diags
}

const MAX_OFFSET: i64 = 1 << 31;
const MAX_GEN_OFFSET: i64 = 3;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum GenKey {
    Plain,
    Var(String, i64),
    Const(i64),
}

impl fmt::Display for GenKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenKey::Plain => Ok(()),
            GenKey::Var(v, 0) => write!(f, " generation {v}"),
            GenKey::Var(v, c) => write!(f, " generation {v}+{c}"),
            GenKey::Const(k) => write!(f, " generation {k}"),
        }
    }
}

struct Validator<'a> {
    p: &'a Program,
    reg: &'a OperatorRegistry,
    diags: Vec<Diagnostic>,
    item: usize,
}

impl<'a> Validator<'a> {
    fn err(&mut self, msg: impl Into<String>) {
        self.diags.push(Diagnostic {
            message: msg.into(),
            item: Some(self.item),
        });
    }

    fn run(&mut self) {
        let p = self.p;
        let mut names = BTreeSet::new();
        for d in &p.decls {
            if !names.insert(d.name.as_str()) {
                self.err(format!("tensor `{}` declared more than once", d.name));
            }
            self.check_decl(d);
            self.item += 1;
        }
        let mut assigned = BTreeSet::new();
        for init in &p.inits {
            match init {
                Init::User(n) => {
                    if p.decl(n).is_none() {
                        self.err(format!("unknown tensor `{n}`"));
                    }
                    if !assigned.insert((n.clone(), GenKey::Plain)) {
                        self.err(format!("tensor `{n}` initialized more than once"));
                    }
                }
                Init::Stmt(s) => {
                    if let Some(key) = self.check_stmt(s, &[], true) {
                        if !assigned.insert(key.clone()) {
                            self.err(format!(
                                "tensor `{}`{} initialized more than once",
                                key.0, key.1
                            ));
                        }
                    }
                }
            }
            self.item += 1;
        }
        self.check_cascade(&p.body, &[], true);
    }

    fn check_decl(&mut self, d: &Decl) {
        let mut seen = BTreeSet::new();
        for (i, r) in d.ranks.iter().enumerate() {
            if !seen.insert(r.name.as_str()) {
                self.err(format!("rank `{}` repeated in tensor `{}`", r.name, d.name));
            }
            match r.size {
                SizeExpr::Unbounded if i > 0 => self.err(format!(
                    "generative rank of `{}` must be listed first",
                    d.name
                )),
                SizeExpr::Lit(0) => self.err(format!("rank `{}` of `{}` has size 0", r.name, d.name)),
                _ => {}
            }
        }
        if d.empty.dtype() != d.dtype {
            self.err(format!(
                "empty value of `{}` is not of type {}",
                d.name, d.dtype
            ));
        }
    }

    fn check_cascade(&mut self, c: &'a Cascade, outer: &[&'a str], top: bool) {
        if outer.contains(&c.var.as_str()) {
            self.err(format!("cascade variable `{}` reused by a nested cascade", c.var));
        }
        let mut scope: Vec<&str> = outer.to_vec();
        scope.push(&c.var);
        if !top {
            self.item += 1;
        }
        let mut assigned: BTreeSet<(String, GenKey)> = BTreeSet::new();
        for st in &c.body {
            let key = match st {
                Statement::Einsum(s) => self.check_stmt(s, &scope, false),
                Statement::Update(u) => {
                    let key = self.check_access(&u.output, &scope, true, false).map(|k| (u.output.tensor.clone(), k));
                    if let Some(d) = self.p.decl(&u.output.tensor) {
                        match desugar_update(u, d.is_generational()) {
                            Ok(s) => {
                                self.check_stmt(&s, &scope, false);
                            }
                            Err(e) => self.err(e.to_string()),
                        }
                    }
                    key
                }
                Statement::Case(cs) => self.check_case(cs, &scope),
                Statement::Cascade(inner) => {
                    self.check_cascade(inner, &scope, false);
                    // The inner variable stays bound for the rest of this pass.
                    scope.push(&inner.var);
                    None
                }
            };
            if let Some(key) = key {
                if !assigned.insert(key.clone()) {
                    self.err(format!(
                        "SSA violation: tensor `{}`{} assigned more than once in one pass",
                        key.0, key.1
                    ));
                }
            }
            if !matches!(st, Statement::Cascade(_)) {
                self.item += 1;
            }
        }
        if let Some(stop) = &c.stop {
            self.check_stop(stop);
            self.item += 1;
        }
    }

    fn check_stop(&mut self, s: &StopCond) {
        let refs: Vec<(&str, i64)> = match s {
            StopCond::OccupancyZero { tensor, offset } => alloc::vec![(tensor.as_str(), *offset)],
            StopCond::TensorEqual {
                left,
                left_offset,
                right,
                right_offset,
            } => alloc::vec![(left.as_str(), *left_offset), (right.as_str(), *right_offset)],
        };
        for (t, off) in refs {
            match self.p.decl(t) {
                None => self.err(format!("unknown tensor `{t}`")),
                Some(d) if !d.is_generational() => {
                    self.err(format!("stop condition tensor `{t}` has no generative rank"))
                }
                _ => {}
            }
            if !(0..=MAX_GEN_OFFSET).contains(&off) {
                self.err(format!("generation offset {off} out of range 0..=3"));
            }
        }
    }

    fn check_case(&mut self, cs: &CaseStmt, scope: &[&str]) -> Option<(String, GenKey)> {
        let key = self
            .check_access(&cs.output, scope, true, false)
            .map(|k| (cs.output.tensor.clone(), k));
        let Some(d) = self.p.decl(&cs.output.tensor) else {
            return key;
        };
        match desugar_case(cs, d, &|_| false) {
            Ok((_, stmts)) => {
                let n = stmts.len();
                // Check each arm statement; the final merge is synthetic.
                let arms = if n == 1 { &stmts[..] } else { &stmts[..n - 1] };
                for s in arms {
                    let mut s = s.clone();
                    s.output.tensor = cs.output.tensor.clone();
                    self.check_stmt(&s, scope, false);
                }
            }
            Err(e) => self.err(e.to_string()),
        }
        key
    }

    /// Checks one access and returns its generation key when the tensor is declared.
    fn check_access(
        &mut self,
        a: &Access,
        scope: &[&str],
        is_output: bool,
        in_init: bool,
    ) -> Option<GenKey> {
        let Some(d) = self.p.decl(&a.tensor) else {
            self.err(format!("unknown tensor `{}`", a.tensor));
            return None;
        };
        if a.subs.len() != d.ranks.len() {
            self.err(format!(
                "`{}` has {} ranks but is accessed with {} subscripts",
                a.tensor,
                d.ranks.len(),
                a.subs.len()
            ));
            return None;
        }
        if let Some(u) = &a.unary {
            if is_output {
                self.err(format!("output `{}` cannot apply a unary operator", a.tensor));
            } else if !self.reg.has_unary(u) {
                self.err(format!("unknown unary operator `{u}`"));
            }
        }
        let mut key = GenKey::Plain;
        let mut rest = &a.subs[..];
        if d.is_generational() {
            let g = &a.subs[0];
            rest = &a.subs[1..];
            if g.constraint.is_some() || g.mutable {
                self.err(format!(
                    "generation subscript of `{}` cannot carry a constraint or mutable flag",
                    a.tensor
                ));
            }
            let gk = match &g.expr {
                RankExpr::Const(k) if *k >= 0 => Some(GenKey::Const(*k)),
                RankExpr::Var(v) if !in_init && scope.contains(&v.as_str()) => {
                    Some(GenKey::Var(v.clone(), 0))
                }
                RankExpr::Offset(v, c)
                    if !in_init && scope.contains(&v.as_str()) && (0..=MAX_GEN_OFFSET).contains(c) =>
                {
                    Some(GenKey::Var(v.clone(), *c))
                }
                _ => None,
            };
            match gk {
                Some(k) => key = k,
                None if in_init => self.err(format!(
                    "generation subscript of `{}` must be a constant in an initialization",
                    a.tensor
                )),
                None => self.err(format!(
                    "generation subscript of `{}` must be a cascade variable plus 0..=3 or a constant",
                    a.tensor
                )),
            }
        }
        for s in rest {
            let mut vars = Vec::new();
            s.expr.vars(&mut vars);
            if let Some(c) = &s.constraint {
                c.vars(&mut vars);
            }
            for v in vars {
                if scope.contains(&v) {
                    self.err(format!("cascade variable `{v}` used as a rank variable"));
                }
            }
            if s.mutable && !is_output {
                self.err(format!("mutable flag on input `{}`", a.tensor));
            }
            if s.mutable && !matches!(s.expr, RankExpr::Var(_)) {
                self.err("mutable subscript must be a plain rank variable");
            }
            if let RankExpr::Const(_) = s.expr {
                self.err(format!("constant subscript on non-generative rank of `{}`", a.tensor));
            }
            self.check_offsets(&s.expr);
        }
        Some(key)
    }

    fn check_offsets(&mut self, e: &RankExpr) {
        match e {
            RankExpr::Offset(_, c) if c.unsigned_abs() > MAX_OFFSET as u64 => {
                self.err(format!("offset {c} exceeds 2^31 in magnitude"))
            }
            RankExpr::Ternary(_, a, b) => {
                self.check_offsets(a);
                self.check_offsets(b);
            }
            _ => {}
        }
    }

    /// Returns the (tensor, generation) written when the output is resolvable.
    fn check_stmt(
        &mut self,
        s: &EinsumStmt,
        scope: &[&str],
        in_init: bool,
    ) -> Option<(String, GenKey)> {
        let key = self.check_access(&s.output, scope, true, in_init);
        for a in s.rhs.accesses() {
            self.check_access(a, scope, false, in_init);
        }
        let decls = self.p;
        let skip_of = |a: &Access| -> usize {
            usize::from(decls.decl(&a.tensor).is_some_and(|d| d.is_generational())).min(a.subs.len())
        };

        // Variables bound by subscript expressions.
        let mut out_vars: Vec<&str> = Vec::new();
        for sub in &s.output.subs[skip_of(&s.output)..] {
            sub.expr.vars(&mut out_vars);
        }
        let mut rhs_bound: Vec<&str> = Vec::new();
        for a in s.rhs.accesses() {
            for sub in &a.subs[skip_of(a)..] {
                sub.expr.vars(&mut rhs_bound);
            }
        }
        let mut bound = out_vars.clone();
        bound.extend(rhs_bound.iter().copied());

        let mut used: Vec<&str> = Vec::new();
        let mut all_accesses = alloc::vec![&s.output];
        all_accesses.extend(s.rhs.accesses());
        for a in &all_accesses {
            for sub in &a.subs[skip_of(a)..] {
                if let Some(c) = &sub.constraint {
                    c.vars(&mut used);
                }
            }
        }
        rank_var_leaves(&s.rhs, &mut used);
        for v in used {
            if !bound.contains(&v) && !scope.contains(&v) {
                self.err(format!("rank variable `{v}` is not bound in this statement"));
            }
        }

        let mut labels = Vec::new();
        s.rhs.labels(&mut labels);
        let mut seen = BTreeSet::new();
        for l in &labels {
            if *l == 0 {
                self.err("operation labels must be positive");
            }
            if !seen.insert(*l) {
                self.err(format!("operation label .{l} used more than once"));
            }
        }

        let mut mapped = BTreeSet::new();
        let mut reduced = BTreeSet::new();
        let mut populates = 0;
        let mut populated: Vec<&str> = Vec::new();
        for act in &s.actions {
            match act {
                Action::Map {
                    label,
                    ranks,
                    compute,
                    merge,
                } => {
                    self.check_binary(compute, merge);
                    if !mapped.insert(*label) {
                        self.err(format!("more than one map action for label .{label}"));
                    }
                    match s.rhs.find_label(*label) {
                        None => self.err(format!("map.{label} refers to no operation label")),
                        Some(node) => {
                            let vars = node_vars(node, decls);
                            for r in ranks {
                                if !vars.contains(&r.as_str()) {
                                    self.err(format!(
                                        "map rank `{r}` does not appear in the operands of .{label}"
                                    ));
                                }
                            }
                        }
                    }
                }
                Action::Reduce {
                    label,
                    ranks,
                    compute,
                    merge,
                } => {
                    self.check_binary(compute, merge);
                    if !reduced.insert(*label) {
                        match label {
                            Some(l) => self.err(format!("more than one reduce action for label .{l}")),
                            None => self.err("more than one unlabeled reduce action"),
                        }
                    }
                    let vars = match label {
                        Some(l) => match s.rhs.find_label(*l) {
                            Some(node) => node_vars(node, decls),
                            None => {
                                self.err(format!("reduce.{l} refers to no operation label"));
                                continue;
                            }
                        },
                        None => node_vars(&s.rhs, decls),
                    };
                    let outside = match label {
                        Some(l) => vars_outside(&s.rhs, *l, decls),
                        None => Vec::new(),
                    };
                    for r in ranks {
                        if out_vars.contains(&r.as_str()) {
                            self.err(format!("reduced rank `{r}` appears in output"));
                        } else if !vars.contains(&r.as_str()) {
                            self.err(format!("reduced rank `{r}` does not appear on the right-hand side"));
                        } else if outside.contains(&r.as_str()) {
                            self.err(format!(
                                "reduced rank `{r}` is also used outside operation .{}",
                                label.unwrap_or(0)
                            ));
                        }
                    }
                }
                Action::Populate {
                    ranks,
                    compute,
                    coord,
                } => {
                    populates += 1;
                    if !self.reg.has_unary(compute) {
                        self.err(format!("unknown unary operator `{compute}`"));
                    }
                    if !self.reg.has_coord(&coord.name) {
                        self.err(format!("unknown coordinate operator `{}`", coord.name));
                    }
                    for r in ranks {
                        let mutable = s.output.subs.iter().any(|sub| {
                            sub.mutable && matches!(&sub.expr, RankExpr::Var(v) if v == r)
                        });
                        if !mutable {
                            self.err(format!("populate rank `{r}` is not mutable in the output"));
                        }
                        populated.push(r);
                    }
                }
            }
        }
        if populates > 1 {
            self.err("more than one populate action");
        }
        for sub in &s.output.subs {
            if let (true, RankExpr::Var(v)) = (sub.mutable, &sub.expr) {
                if !populated.contains(&v.as_str()) {
                    self.err(format!("mutable rank `{v}` has no populate action"));
                }
            }
        }
        let computed_output = s.output.subs[skip_of(&s.output)..].iter().any(|sub| {
            matches!(
                sub.expr,
                RankExpr::Ternary(..) | RankExpr::MinOf(..) | RankExpr::MaxOf(..)
            )
        });
        if computed_output && !reduced.contains(&None) {
            self.err("computed output coordinate needs a reduce action to resolve collisions");
        }
        key.map(|k| (s.output.tensor.clone(), k))
    }

    fn check_binary(&mut self, compute: &str, merge: &str) {
        if !self.reg.has_binary(compute) {
            self.err(format!("unknown compute operator `{compute}`"));
        }
        if MergeOp::by_name(merge).is_none() {
            self.err(format!("unknown merge operator `{merge}`"));
        }
    }
}

fn rank_var_leaves<'a>(e: &'a RhsExpr, out: &mut Vec<&'a str>) {
    match e {
        RhsExpr::RankVar(v) => out.push(v),
        RhsExpr::Binary { left, right, .. } => {
            rank_var_leaves(left, out);
            rank_var_leaves(right, out);
        }
        _ => {}
    }
}

/// Non-generation variables mentioned by the subscripts and rank-variable leaves of a subtree.
/// Variables of `e` outside the subtree labeled `label`.
fn vars_outside<'a>(e: &'a RhsExpr, label: u32, p: &Program) -> Vec<&'a str> {
    match e {
        RhsExpr::Binary { label: l, .. } if *l == label => Vec::new(),
        RhsExpr::Binary { left, right, .. } => {
            let mut out = vars_outside(left, label, p);
            for v in vars_outside(right, label, p) {
                push_unique(&mut out, v);
            }
            out
        }
        leaf => node_vars(leaf, p),
    }
}

fn node_vars<'a>(e: &'a RhsExpr, p: &Program) -> Vec<&'a str> {
    let mut out = Vec::new();
    for a in e.accesses() {
        let skip = usize::from(p.decl(&a.tensor).is_some_and(|d| d.is_generational()));
        for sub in a.subs.iter().skip(skip) {
            let mut v = Vec::new();
            sub.expr.vars(&mut v);
            for x in v {
                push_unique(&mut out, x);
            }
        }
    }
    rank_var_leaves(e, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn diags(body: &str) -> Vec<String> {
        let src = alloc::format!(
            "tensors {{
              A[M=4, K=4]: int, empty=0;
              B[K=4, N=4]: int, empty=0;
              Z[M=4, N=4]: int, empty=0;
              Y[M=4]: int, empty=0;
              F[I=*, M=4]: int, empty=0;
            }}
            init {{ A = user; B = user; }}
            einsum {{ {body} }}"
        );
        validate(&parse(&src).unwrap()).into_iter().map(|d| d.message).collect()
    }

    fn has(body: &str, needle: &str) -> bool {
        let d = diags(body);
        d.iter().any(|m| m.contains(needle)) || panic!("no `{needle}` in {d:?}")
    }

    #[test]
    fn clean_gemm() {
        assert_eq!(
            diags("Z[m, n] = A[m, k] .1 B[k, n] :: map.1(k; mul; cap) reduce(k; add; cup);"),
            Vec::<String>::new()
        );
    }

    #[test]
    fn reduce_scope() {
        assert!(has("Z[m, n] = A[m, k] .1 B[k, n] :: reduce(m; add; cup);", "appears in output"));
        assert!(has("Z[m, n] = A[m, k] .1 B[k, n] :: reduce(q; add; cup);", "does not appear"));
        assert!(has(
            "Y[m] = (A[m, k] .1 B[k, n]) .2 A[n, k] :: reduce.1(k; add; cup) reduce(n; add; cup);",
            "outside operation .1"
        ));
    }

    #[test]
    fn labels_and_operators() {
        assert!(has("Z[m, n] = A[m, n] .1 B[m, n] :: map.2(m; mul);", "no operation label"));
        assert!(has("Z[m, n] = A[m, n] .1 B[m, n] :: map.1(m; frobnicate);", "frobnicate"));
        assert!(has("Z[m, n] = A[m, n] .1 B[m, n] :: map.1(m; mul; bogus);", "bogus"));
    }

    #[test]
    fn ssa_and_populate() {
        assert!(has("Y[m] = A[m, k] :: reduce(k; add; cup); Y[m] = A[m, k] :: reduce(k; min; cup);", "SSA"));
        assert!(has("Y[m*] = A[m, 0];", "no populate action"));
        assert!(has("Y[m] = A[m, 0] :: populate(m*);", "not mutable"));
    }

    #[test]
    fn generation_subscripts() {
        assert!(has("F[j+1, m] = F[i, m];", "generation subscript of `F`"));
        assert!(has("F[i+9, m] = F[i, m];", "plus 0..=3"));
        assert!(has("F[i+1, m] = F[i, m+i];", "cascade variable `i` used as a rank variable"));
        assert!(has("Y[m] = A[m, 7];", "constant subscript"));
        assert!(has("Y[m] = A[m];", "has 2 ranks"));
    }
}
