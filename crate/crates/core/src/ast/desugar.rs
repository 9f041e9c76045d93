//! Rewrites of `<<` updates and `case` statements into plain Einsums.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use super::{
    push_unique, Access, Action, BoolCond, Cascade, CaseStmt, CmpOp, Decl, EinsumStmt, Program,
    RankExpr, RhsExpr, Statement, Subscript, UpdateStmt,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DesugarError {
    #[error("update target `{0}` has no prior generation to merge into")]
    NoPriorGeneration(String),
    #[error("update shorthand cannot carry a statement-level reduce or populate")]
    UpdateWithStatementAction,
    #[error("case arms overlap or are not syntactically disjoint: `{0}` and `{1}`")]
    OverlappingGuards(String, String),
    #[error("case guard must be a single comparison in a multi-arm case")]
    UnsupportedGuard,
    #[error("case statement has no arms")]
    NoArms,
    #[error("case statement has more than one else arm")]
    MultipleElse,
    #[error("case output `{0}` has no subscript to carry a guard")]
    NoSubscript(String),
    #[error("undeclared tensor `{0}`")]
    UnknownTensor(String),
}

/// Rewrites `OUT << RHS` as `OUT = PRIOR .L RHS :: map.L(shared; update; cup)`,
/// where PRIOR is the output access one generation back.
pub fn desugar_update(u: &UpdateStmt, generational: bool) -> Result<EinsumStmt, DesugarError> {
    if u
        .actions
        .iter()
        .any(|a| matches!(a, Action::Reduce { label: None, .. } | Action::Populate { .. }))
    {
        return Err(DesugarError::UpdateWithStatementAction);
    }
    let mut prior = plain(&u.output);
    if generational {
        let no_prior = || DesugarError::NoPriorGeneration(u.output.tensor.clone());
        let g = prior.subs.first_mut().ok_or_else(no_prior)?;
        g.expr = match &g.expr {
            RankExpr::Offset(v, 1) => RankExpr::Var(v.clone()),
            RankExpr::Offset(v, c) if *c > 1 => RankExpr::Offset(v.clone(), c - 1),
            RankExpr::Const(k) if *k >= 1 => RankExpr::Const(k - 1),
            _ => return Err(no_prior()),
        };
    }
    let skip = usize::from(generational);
    let mut prior_vars = Vec::new();
    for s in &prior.subs[skip..] {
        s.expr.vars(&mut prior_vars);
    }
    let rhs_vars = rhs_vars(&u.rhs);
    let mut shared: Vec<&str> = Vec::new();
    for v in &prior_vars {
        if rhs_vars.contains(v) {
            push_unique(&mut shared, v);
        }
    }
    if shared.is_empty() {
        for v in &prior_vars {
            push_unique(&mut shared, v);
        }
    }
    let mut labels = Vec::new();
    u.rhs.labels(&mut labels);
    let label = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut actions = u.actions.clone();
    actions.push(Action::Map {
        label,
        ranks: shared.iter().map(|s| s.to_string()).collect(),
        compute: "update".into(),
        merge: "cup".into(),
    });
    Ok(EinsumStmt {
        output: u.output.clone(),
        rhs: RhsExpr::binary(label, RhsExpr::Leaf(prior), u.rhs.clone()),
        actions,
    })
}

/// Rewrites a case statement into one temporary per arm (guard attached as
/// an output constraint) followed by a chain of `update` merges.
///
/// `taken` reports names already in use; temporaries get fresh names.
/// Returns the temporaries' declarations and the statements in order.
pub fn desugar_case(
    cs: &CaseStmt,
    out_decl: &Decl,
    taken: &dyn Fn(&str) -> bool,
) -> Result<(Vec<Decl>, Vec<EinsumStmt>), DesugarError> {
    if cs.arms.is_empty() {
        return Err(DesugarError::NoArms);
    }
    if cs.arms.iter().filter(|a| a.guard.is_none()).count() > 1 {
        return Err(DesugarError::MultipleElse);
    }
    let generational = out_decl.is_generational();
    if cs.arms.len() == 1 {
        let arm = &cs.arms[0];
        let mut output = cs.output.clone();
        if let Some(g) = &arm.guard {
            attach_guard(&mut output, g, generational)?;
        }
        return Ok((
            Vec::new(),
            alloc::vec![EinsumStmt {
                output,
                rhs: arm.rhs.clone(),
                actions: arm.actions.clone(),
            }],
        ));
    }

    let mut guards: Vec<(&RankExpr, CmpOp, &RankExpr)> = Vec::new();
    for arm in &cs.arms {
        match &arm.guard {
            Some(BoolCond::Compare(a, op, b)) => guards.push((a, *op, b)),
            Some(_) => return Err(DesugarError::UnsupportedGuard),
            None => {}
        }
    }
    for (i, g) in guards.iter().enumerate() {
        for h in &guards[i + 1..] {
            if !disjoint(*g, *h) {
                return Err(DesugarError::OverlappingGuards(show(*g), show(*h)));
            }
        }
    }
    let else_guard = guards
        .iter()
        .map(|(a, op, b)| BoolCond::Compare((*a).clone(), op.negate(), (*b).clone()))
        .reduce(|x, y| BoolCond::And(Box::new(x), Box::new(y)));

    let mut decls = Vec::new();
    let mut stmts = Vec::new();
    let mut n = 1;
    for arm in &cs.arms {
        let name = loop {
            let cand = format!("{}__case{}", cs.output.tensor, n);
            n += 1;
            if !taken(&cand) {
                break cand;
            }
        };
        let mut d = out_decl.clone();
        d.name = name.clone();
        decls.push(d);
        let mut output = cs.output.clone();
        output.tensor = name;
        let guard = arm.guard.as_ref().or(else_guard.as_ref());
        if let Some(g) = guard {
            attach_guard(&mut output, g, generational)?;
        }
        stmts.push(EinsumStmt {
            output,
            rhs: arm.rhs.clone(),
            actions: arm.actions.clone(),
        });
    }

    let skip = usize::from(generational);
    let mut out_vars = Vec::new();
    for s in &cs.output.subs[skip.min(cs.output.subs.len())..] {
        if let RankExpr::Var(v) = &s.expr {
            push_unique(&mut out_vars, v);
        }
    }
    let ranks: Vec<String> = out_vars.iter().map(|v| v.to_string()).collect();
    let leaf = |name: &str| {
        let mut a = plain(&cs.output);
        a.tensor = name.into();
        RhsExpr::Leaf(a)
    };
    let mut rhs = leaf(&decls[0].name);
    let mut actions = Vec::new();
    for (i, d) in decls.iter().enumerate().skip(1) {
        let label = i as u32;
        rhs = RhsExpr::binary(label, rhs, leaf(&d.name));
        actions.push(Action::Map {
            label,
            ranks: ranks.clone(),
            compute: "update".into(),
            merge: "cup".into(),
        });
    }
    stmts.push(EinsumStmt {
        output: cs.output.clone(),
        rhs,
        actions,
    });
    Ok((decls, stmts))
}

/// Removes all update and case sugar from a program.
pub fn desugar(p: &Program) -> Result<Program, DesugarError> {
    let mut out = p.clone();
    let mut new_decls = Vec::new();
    out.body = desugar_cascade(&p.body, p, &mut new_decls)?;
    out.decls.extend(new_decls);
    Ok(out)
}

fn desugar_cascade(
    c: &Cascade,
    p: &Program,
    new_decls: &mut Vec<Decl>,
) -> Result<Cascade, DesugarError> {
    let mut body = Vec::new();
    for st in &c.body {
        match st {
            Statement::Einsum(s) => body.push(Statement::Einsum(s.clone())),
            Statement::Update(u) => {
                let d = p
                    .decl(&u.output.tensor)
                    .ok_or_else(|| DesugarError::UnknownTensor(u.output.tensor.clone()))?;
                body.push(Statement::Einsum(desugar_update(u, d.is_generational())?));
            }
            Statement::Case(cs) => {
                let d = p
                    .decl(&cs.output.tensor)
                    .ok_or_else(|| DesugarError::UnknownTensor(cs.output.tensor.clone()))?;
                let existing: Vec<String> = new_decls.iter().map(|d| d.name.clone()).collect();
                let taken = |n: &str| p.decl(n).is_some() || existing.iter().any(|e| e == n);
                let (decls, stmts) = desugar_case(cs, d, &taken)?;
                new_decls.extend(decls);
                body.extend(stmts.into_iter().map(Statement::Einsum));
            }
            Statement::Cascade(inner) => {
                body.push(Statement::Cascade(desugar_cascade(inner, p, new_decls)?))
            }
        }
    }
    Ok(Cascade {
        var: c.var.clone(),
        body,
        stop: c.stop.clone(),
    })
}

/// The access with constraints, mutable flags, and unary removed.
fn plain(a: &Access) -> Access {
    Access {
        tensor: a.tensor.clone(),
        subs: a.subs.iter().map(|s| Subscript::expr(s.expr.clone())).collect(),
        unary: None,
    }
}

fn rhs_vars(e: &RhsExpr) -> Vec<&str> {
    let mut out = Vec::new();
    collect_rhs_vars(e, &mut out);
    out
}

fn collect_rhs_vars<'a>(e: &'a RhsExpr, out: &mut Vec<&'a str>) {
    match e {
        RhsExpr::Leaf(a) => {
            for s in &a.subs {
                s.expr.vars(out);
            }
        }
        RhsExpr::RankVar(v) => out.push(v),
        RhsExpr::Lit(_) => {}
        RhsExpr::Binary { left, right, .. } => {
            collect_rhs_vars(left, out);
            collect_rhs_vars(right, out);
        }
    }
}

/// Attaches `g` to the first output subscript mentioning one of its variables
/// (else the last subscript), conjoined with any existing constraint.
fn attach_guard(out: &mut Access, g: &BoolCond, generational: bool) -> Result<(), DesugarError> {
    let skip = usize::from(generational);
    if out.subs.len() <= skip {
        return Err(DesugarError::NoSubscript(out.tensor.clone()));
    }
    let mut gv = Vec::new();
    g.vars(&mut gv);
    let idx = (skip..out.subs.len())
        .find(|&i| {
            let mut v = Vec::new();
            out.subs[i].expr.vars(&mut v);
            v.iter().any(|x| gv.contains(x))
        })
        .unwrap_or(out.subs.len() - 1);
    let sub = &mut out.subs[idx];
    sub.constraint = Some(match sub.constraint.take() {
        Some(c) => conjoin(c, g.clone()),
        None => g.clone(),
    });
    Ok(())
}

/// `a && b` kept left-associative, the form the parser produces.
fn conjoin(a: BoolCond, b: BoolCond) -> BoolCond {
    match b {
        BoolCond::And(x, y) => conjoin(conjoin(a, *x), *y),
        b => BoolCond::And(Box::new(a), Box::new(b)),
    }
}

/// Outcomes {LT, EQ, GT} accepted by a comparison, as a bit set.
fn outcomes(op: CmpOp) -> u8 {
    const LT: u8 = 1;
    const EQ: u8 = 2;
    const GT: u8 = 4;
    match op {
        CmpOp::Lt => LT,
        CmpOp::Le => LT | EQ,
        CmpOp::Gt => GT,
        CmpOp::Ge => GT | EQ,
        CmpOp::Eq => EQ,
        CmpOp::Ne => LT | GT,
    }
}

fn disjoint(g: (&RankExpr, CmpOp, &RankExpr), h: (&RankExpr, CmpOp, &RankExpr)) -> bool {
    let hop = if g.0 == h.0 && g.2 == h.2 {
        h.1
    } else if g.0 == h.2 && g.2 == h.0 {
        h.1.mirror()
    } else {
        return false;
    };
    outcomes(g.1) & outcomes(hop) == 0
}

fn show(g: (&RankExpr, CmpOp, &RankExpr)) -> String {
    format!("{:?} {} {:?}", g.0, g.1.symbol(), g.2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{CaseArm, RankSpec, SizeExpr};
    use crate::fibertree::{DType, Scalar};
    use alloc::vec;

    fn acc(t: &str, vars: &[&str]) -> Access {
        Access::new(t, vars.iter().map(|v| Subscript::var(v)).collect())
    }

    fn gen_acc(t: &str, g: RankExpr, vars: &[&str]) -> Access {
        let mut subs = vec![Subscript::expr(g)];
        subs.extend(vars.iter().map(|v| Subscript::var(v)));
        Access::new(t, subs)
    }

    #[test]
    fn update_uses_prior_generation() {
        let u = UpdateStmt {
            output: gen_acc("P", RankExpr::Offset("i".into(), 1), &["d"]),
            rhs: RhsExpr::Leaf(gen_acc("F", RankExpr::Offset("i".into(), 1), &["d"])),
            actions: vec![],
        };
        let s = desugar_update(&u, true).unwrap();
        let expected = EinsumStmt {
            output: u.output.clone(),
            rhs: RhsExpr::binary(
                1,
                RhsExpr::Leaf(gen_acc("P", RankExpr::Var("i".into()), &["d"])),
                u.rhs.clone(),
            ),
            actions: vec![Action::Map {
                label: 1,
                ranks: vec!["d".into()],
                compute: "update".into(),
                merge: "cup".into(),
            }],
        };
        assert_eq!(s, expected);
    }

    #[test]
    fn update_without_prior_is_rejected() {
        let u = UpdateStmt {
            output: gen_acc("P", RankExpr::Var("i".into()), &["d"]),
            rhs: RhsExpr::Leaf(acc("F", &["d"])),
            actions: vec![],
        };
        assert!(matches!(
            desugar_update(&u, true),
            Err(DesugarError::NoPriorGeneration(_))
        ));
    }

    fn z_decl() -> Decl {
        Decl {
            name: "Z".into(),
            ranks: vec![
                RankSpec { name: "M".into(), size: SizeExpr::Lit(3) },
                RankSpec { name: "N".into(), size: SizeExpr::Lit(3) },
            ],
            dtype: DType::Int,
            empty: Scalar::int(0),
        }
    }

    fn ne() -> BoolCond {
        BoolCond::Compare(RankExpr::Var("n".into()), CmpOp::Ne, RankExpr::Var("m".into()))
    }

    #[test]
    fn two_arm_case_gives_three_statements() {
        let cs = CaseStmt {
            output: acc("Z", &["m", "n"]),
            arms: vec![
                CaseArm {
                    guard: Some(ne()),
                    rhs: RhsExpr::Leaf(acc("A", &["m", "n"])),
                    actions: vec![],
                },
                CaseArm {
                    guard: None,
                    rhs: RhsExpr::Leaf(acc("B", &["m", "n"])),
                    actions: vec![],
                },
            ],
        };
        let (decls, stmts) = desugar_case(&cs, &z_decl(), &|_| false).unwrap();
        assert_eq!(decls.len(), 2);
        assert_eq!(stmts.len(), 3);
        assert_eq!(stmts[0].output.tensor, "Z__case1");
        // The else arm carries the negated guard.
        let c = stmts[1].output.subs[0].constraint.clone().unwrap();
        assert_eq!(
            c,
            BoolCond::Compare(RankExpr::Var("n".into()), CmpOp::Eq, RankExpr::Var("m".into()))
        );
        assert_eq!(stmts[2].output, cs.output);
        assert!(matches!(&stmts[2].actions[0], Action::Map { compute, .. } if compute == "update"));
    }

    #[test]
    fn single_arm_is_identity() {
        let cs = CaseStmt {
            output: acc("Z", &["m", "n"]),
            arms: vec![CaseArm {
                guard: None,
                rhs: RhsExpr::Leaf(acc("A", &["m", "n"])),
                actions: vec![],
            }],
        };
        let (decls, stmts) = desugar_case(&cs, &z_decl(), &|_| false).unwrap();
        assert!(decls.is_empty());
        assert_eq!(stmts.len(), 1);
        assert_eq!(stmts[0].output, cs.output);
    }

    #[test]
    fn overlapping_guards_rejected() {
        let le = BoolCond::Compare(RankExpr::Var("m".into()), CmpOp::Ge, RankExpr::Var("n".into()));
        let arm = |g| CaseArm {
            guard: Some(g),
            rhs: RhsExpr::Leaf(acc("A", &["m", "n"])),
            actions: vec![],
        };
        // n != m and m >= n share m > n.
        let cs = CaseStmt {
            output: acc("Z", &["m", "n"]),
            arms: vec![arm(ne()), arm(le.clone())],
        };
        assert!(matches!(
            desugar_case(&cs, &z_decl(), &|_| false),
            Err(DesugarError::OverlappingGuards(..))
        ));
        // n < m is disjoint from m <= n once mirrored.
        let lt = BoolCond::Compare(RankExpr::Var("n".into()), CmpOp::Lt, RankExpr::Var("m".into()));
        let le2 = BoolCond::Compare(RankExpr::Var("m".into()), CmpOp::Le, RankExpr::Var("n".into()));
        let cs = CaseStmt {
            output: acc("Z", &["m", "n"]),
            arms: vec![arm(lt), arm(le2)],
        };
        assert!(desugar_case(&cs, &z_decl(), &|_| false).is_ok());
    }

    #[test]
    fn fresh_names_skip_taken() {
        let cs = CaseStmt {
            output: acc("Z", &["m", "n"]),
            arms: vec![
                CaseArm { guard: Some(ne()), rhs: RhsExpr::Lit(Scalar::int(1)), actions: vec![] },
                CaseArm { guard: None, rhs: RhsExpr::Lit(Scalar::int(2)), actions: vec![] },
            ],
        };
        let (decls, _) = desugar_case(&cs, &z_decl(), &|n| n == "Z__case1").unwrap();
        assert_eq!(decls[0].name, "Z__case2");
        assert_eq!(decls[1].name, "Z__case3");
    }
}
