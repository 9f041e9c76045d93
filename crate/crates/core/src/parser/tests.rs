use super::*;
use crate::ast::validate;
use alloc::vec;

const BFS: &str = include_str!("../../../../programs/bfs.edge");

fn stmt(src: &str) -> EinsumStmt {
    let text = alloc::format!("tensors {{ }} init {{ }} einsum {{ {src} }}");
    let p = parse(&text).unwrap();
    match &p.body.body[0] {
        Statement::Einsum(s) => s.clone(),
        other => panic!("not an einsum: {other:?}"),
    }
}

#[test]
fn bfs_shape() {
    let p = parse(BFS).unwrap();
    assert_eq!(p.decls.len(), 4);
    assert_eq!(p.inits.len(), 3);
    assert_eq!(p.body.body.len(), 3);
    assert!(p.body.stop.is_some());
    assert_eq!(p.body.var, "i");
    assert!(validate(&p).is_empty(), "{:?}", validate(&p));
}

#[test]
fn advance_statement() {
    let s = stmt("T[i,d] = G[s,d] .1 F[i,s] :: map.1(s; add; cap) reduce.1(s; any; cup);");
    assert_eq!(
        s.actions,
        vec![
            Action::Map {
                label: 1,
                ranks: vec!["s".into()],
                compute: "add".into(),
                merge: "cap".into()
            },
            Action::Reduce {
                label: Some(1),
                ranks: vec!["s".into()],
                compute: "any".into(),
                merge: "cup".into()
            },
        ]
    );
    assert!(matches!(s.rhs, RhsExpr::Binary { label: 1, .. }));
}

#[test]
fn merge_defaults_to_pass() {
    let s = stmt("Z[m] = A[m] .1 B[m] :: map.1(m; mul);");
    assert!(matches!(&s.actions[0], Action::Map { merge, .. } if merge == "pass"));
    let s = stmt("Y[d*] = A[d] :: populate(d*);");
    assert_eq!(
        s.actions[0],
        Action::Populate {
            ranks: vec!["d".into()],
            compute: "pass".into(),
            coord: CoordSpec::pass()
        }
    );
}

#[test]
fn rank_expression_forms() {
    let s = stmt("Z[q, d: d == (w < a ? w : a)] = I[q+s] .1 A[m-1] :: map.1(q; mul);");
    let RankExpr::Var(_) = &s.output.subs[0].expr else { panic!() };
    let c = s.output.subs[1].constraint.clone().unwrap();
    assert!(matches!(c, BoolCond::Compare(_, CmpOp::Eq, RankExpr::Ternary(..))));
    let accs = s.rhs.accesses();
    assert_eq!(accs[0].subs[0].expr, RankExpr::Sum("q".into(), "s".into()));
    assert_eq!(accs[1].subs[0].expr, RankExpr::Offset("m".into(), -1));
}

#[test]
fn missing_decl_parses_then_fails_validation() {
    let p = parse("tensors { Z[M=4]: int, empty=0; } init { } einsum { Z[m] = A[m+1]; }").unwrap();
    let d = validate(&p);
    assert!(d.iter().any(|d| d.message.contains("unknown tensor `A`")), "{d:?}");
}

#[test]
fn syntax_error_has_position_and_expected_set() {
    let src = "tensors {\n  G[S=4]: int, empty=0;\n}\ninit { }\neinsum {\n  Z[m] = G[m] G[m];\n}\n";
    let errs = parse(src).unwrap_err();
    assert_eq!(errs.len(), 1);
    assert_eq!((errs[0].span.line, errs[0].span.column), (6, 15));
    assert!(errs[0].expected.iter().any(|e| e == "`;`"), "{:?}", errs[0]);
}

#[test]
fn recovery_reports_each_bad_statement_once() {
    let src = "tensors { } init { } einsum {\n A[m] = ;\n B[m] = C[m];\n D[m] = = ;\n}";
    let errs = parse(src).unwrap_err();
    assert_eq!(errs.len(), 2, "{errs:?}");
    assert_eq!(errs[0].span.line, 2);
    assert_eq!(errs[1].span.line, 4);
}

#[test]
fn unparenthesized_chain_rejected() {
    let src = "tensors { } init { } einsum { Z[m] = A[m] .1 B[m] .2 C[m]; }";
    let errs = parse(src).unwrap_err();
    assert!(errs[0].message.contains("parenthesized"));
}

#[test]
fn nested_update_rejected() {
    let src = "tensors { } init { } einsum { Z[m] = (A[m] << B[m]); }";
    let errs = parse(src).unwrap_err();
    assert!(errs[0].message.contains("<<"));
}

#[test]
fn case_and_update_and_nested_cascade() {
    let src = "tensors { } init { } einsum {
      Z[m, n] = case {
        n != m => A[m, n];
        else => (B[k, m] .1 C[k, n]) :: map.1(k; mul; cap) reduce.1(k; add; cup);
      };
      P[i+1, d] << F[i+1, d];
      cascade j {
        S[j+1, v] = S[j, v];
        until S[j+1] == S[j];
      }
      until P[i+1] == P[i];
    }";
    let p = parse(src).unwrap();
    assert!(matches!(&p.body.body[0], Statement::Case(c) if c.arms.len() == 2));
    assert!(matches!(&p.body.body[1], Statement::Update(_)));
    let Statement::Cascade(inner) = &p.body.body[2] else { panic!() };
    assert_eq!(inner.var, "j");
    assert_eq!(
        inner.stop,
        Some(StopCond::TensorEqual {
            left: "S".into(),
            left_offset: 1,
            right: "S".into(),
            right_offset: 0
        })
    );
    let again = parse(&pretty_print(&p)).unwrap();
    assert_eq!(again, p);
}

#[test]
fn stop_must_use_cascade_variable() {
    let src = "tensors { } init { } einsum { until nnz(F[j+1]) == 0; }";
    assert!(parse(src).is_err());
}

#[test]
fn round_trip_and_stable() {
    let p = parse(BFS).unwrap();
    let a = pretty_print(&p);
    let b = pretty_print(&parse(&a).unwrap());
    assert_eq!(a, b);
    assert_eq!(parse(&a).unwrap(), p);
}

#[test]
fn item_spans_follow_validator_order() {
    let parsed = parse_with_spans(BFS).unwrap();
    // 4 decls + 3 inits + 3 statements + 1 stop.
    assert_eq!(parsed.item_spans.len(), 11);
    assert_eq!(parsed.item_spans[10].line, 18);
}

#[test]
fn empty_value_must_fit_dtype() {
    let errs = parse("tensors { P[D=4]: bool, empty=inf; } init { } einsum { }").unwrap_err();
    assert!(errs[0].message.contains("empty value"));
}

#[test]
fn literals() {
    let s = stmt("Z[m] = -inf;");
    assert_eq!(s.rhs, RhsExpr::Lit(Scalar::NEG_INF));
    let s = stmt("Z[m] = 2.5;");
    assert_eq!(s.rhs, RhsExpr::Lit(Scalar::Real(2.5)));
    let s = stmt("Z[m] = m;");
    assert_eq!(s.rhs, RhsExpr::RankVar("m".into()));
}
