use alloc::format;
use alloc::string::String;
use core::fmt::Write;

use crate::ast::{
    Access, Action, BoolCond, Cascade, EinsumStmt, Init, Program, RankExpr, RhsExpr, SizeExpr,
    Statement, StopCond, Subscript,
};
use crate::fibertree::Scalar;

/// Canonical source text for a program; `parse` maps it back to an equal AST.
pub fn pretty_print(p: &Program) -> String {
    let mut out = String::from("tensors {\n");
    for d in &p.decls {
        let _ = write!(out, "  {}[", d.name);
        for (i, r) in d.ranks.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            let _ = match &r.size {
                SizeExpr::Lit(n) => write!(out, "{}={n}", r.name),
                SizeExpr::Param(n) => write!(out, "{}=|{n}|", r.name),
                SizeExpr::Unbounded => write!(out, "{}=*", r.name),
            };
        }
        let _ = writeln!(out, "]: {}, empty={};", d.dtype, scalar(&d.empty));
    }
    out.push_str("}\ninit {\n");
    for i in &p.inits {
        match i {
            Init::User(n) => {
                let _ = writeln!(out, "  {n} = user;");
            }
            Init::Stmt(s) => {
                out.push_str("  ");
                einsum(&mut out, s);
                out.push('\n');
            }
        }
    }
    out.push_str("}\n");
    if p.body.var == "i" {
        out.push_str("einsum {\n");
    } else {
        let _ = writeln!(out, "einsum {} {{", p.body.var);
    }
    body(&mut out, &p.body, 1);
    out.push_str("}\n");
    out
}

/// One statement in source form, for messages.
pub fn statement_text(s: &EinsumStmt) -> String {
    let mut out = String::new();
    einsum(&mut out, s);
    out
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn body(out: &mut String, c: &Cascade, level: usize) {
    for st in &c.body {
        indent(out, level);
        match st {
            Statement::Einsum(s) => einsum(out, s),
            Statement::Update(u) => {
                access(out, &u.output);
                out.push_str(" << ");
                rhs_top(out, &u.rhs);
                actions(out, &u.actions);
                out.push(';');
            }
            Statement::Case(cs) => {
                access(out, &cs.output);
                out.push_str(" = case {\n");
                for arm in &cs.arms {
                    indent(out, level + 1);
                    match &arm.guard {
                        Some(g) => cond(out, g),
                        None => out.push_str("else"),
                    }
                    out.push_str(" => ");
                    rhs_top(out, &arm.rhs);
                    actions(out, &arm.actions);
                    out.push_str(";\n");
                }
                indent(out, level);
                out.push_str("};");
            }
            Statement::Cascade(inner) => {
                let _ = writeln!(out, "cascade {} {{", inner.var);
                body(out, inner, level + 1);
                indent(out, level);
                out.push('}');
            }
        }
        out.push('\n');
    }
    if let Some(s) = &c.stop {
        indent(out, level);
        let g = |t: &str, k: i64| {
            if k == 0 {
                format!("{t}[{}]", c.var)
            } else {
                format!("{t}[{}+{k}]", c.var)
            }
        };
        let _ = match s {
            StopCond::OccupancyZero { tensor, offset } => {
                writeln!(out, "until nnz({}) == 0;", g(tensor, *offset))
            }
            StopCond::TensorEqual {
                left,
                left_offset,
                right,
                right_offset,
            } => writeln!(
                out,
                "until {} == {};",
                g(left, *left_offset),
                g(right, *right_offset)
            ),
        };
    }
}

fn einsum(out: &mut String, s: &EinsumStmt) {
    access(out, &s.output);
    out.push_str(" = ");
    rhs_top(out, &s.rhs);
    actions(out, &s.actions);
    out.push(';');
}

fn actions(out: &mut String, acts: &[Action]) {
    if acts.is_empty() {
        return;
    }
    out.push_str(" ::");
    for a in acts {
        out.push(' ');
        let _ = match a {
            Action::Map {
                label,
                ranks,
                compute,
                merge,
            } => write!(out, "map.{label}({}; {compute}; {merge})", ranks.join(", ")),
            Action::Reduce {
                label,
                ranks,
                compute,
                merge,
            } => {
                out.push_str("reduce");
                if let Some(l) = label {
                    let _ = write!(out, ".{l}");
                }
                write!(out, "({}; {compute}; {merge})", ranks.join(", "))
            }
            Action::Populate {
                ranks,
                compute,
                coord,
            } => {
                let rs: alloc::vec::Vec<String> = ranks.iter().map(|r| format!("{r}*")).collect();
                let _ = write!(out, "populate({}; {compute}; {}", rs.join(", "), coord.name);
                if let Some(k) = coord.count {
                    let _ = write!(out, "({k})");
                }
                write!(out, ")")
            }
        };
    }
}

fn rhs_top(out: &mut String, e: &RhsExpr) {
    if let RhsExpr::Binary { label, left, right } = e {
        rhs(out, left);
        let _ = write!(out, " .{label} ");
        rhs(out, right);
    } else {
        rhs(out, e);
    }
}

fn rhs(out: &mut String, e: &RhsExpr) {
    match e {
        RhsExpr::Leaf(a) => match &a.unary {
            Some(u) => {
                let _ = write!(out, "{u}(");
                access(out, a);
                out.push(')');
            }
            None => access(out, a),
        },
        RhsExpr::RankVar(v) => out.push_str(v),
        RhsExpr::Lit(s) => out.push_str(&scalar(s)),
        RhsExpr::Binary { .. } => {
            out.push('(');
            rhs_top(out, e);
            out.push(')');
        }
    }
}

fn access(out: &mut String, a: &Access) {
    out.push_str(&a.tensor);
    out.push('[');
    for (i, s) in a.subs.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        subscript(out, s);
    }
    out.push(']');
}

fn subscript(out: &mut String, s: &Subscript) {
    if let (RankExpr::Var(v), Some(BoolCond::InList(w, l)), false) = (&s.expr, &s.constraint, s.mutable) {
        if v == w {
            let _ = write!(out, "{v} in {l}");
            return;
        }
    }
    rank_expr(out, &s.expr);
    if s.mutable {
        out.push('*');
    }
    if let Some(c) = &s.constraint {
        out.push_str(": ");
        cond(out, c);
    }
}

fn rank_expr(out: &mut String, e: &RankExpr) {
    let _ = match e {
        RankExpr::Var(v) => write!(out, "{v}"),
        RankExpr::Const(k) => write!(out, "{k}"),
        RankExpr::Offset(v, k) if *k >= 0 => write!(out, "{v}+{k}"),
        RankExpr::Offset(v, k) => write!(out, "{v}-{}", k.unsigned_abs()),
        RankExpr::Sum(a, b) => write!(out, "{a}+{b}"),
        RankExpr::MinOf(a, b) => write!(out, "min({a}, {b})"),
        RankExpr::MaxOf(a, b) => write!(out, "max({a}, {b})"),
        RankExpr::Ternary(c, a, b) => {
            out.push('(');
            cond(out, c);
            out.push_str(" ? ");
            rank_expr(out, a);
            out.push_str(" : ");
            rank_expr(out, b);
            write!(out, ")")
        }
    };
}

/// Conjunctions print flat; the parser rebuilds them left-associated.
fn cond(out: &mut String, c: &BoolCond) {
    match c {
        BoolCond::Compare(a, op, b) => {
            rank_expr(out, a);
            let _ = write!(out, " {} ", op.symbol());
            rank_expr(out, b);
        }
        BoolCond::InList(v, l) => {
            let _ = write!(out, "{v} in {l}");
        }
        BoolCond::And(a, b) => {
            cond(out, a);
            out.push_str(" && ");
            cond(out, b);
        }
    }
}

fn scalar(s: &Scalar) -> String {
    match s {
        Scalar::Real(x) if x.is_finite() => {
            let mut t = format!("{x}");
            if !t.contains('.') {
                t.push_str(".0");
            }
            t
        }
        other => format!("{other}"),
    }
}
