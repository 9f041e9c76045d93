//! Statement-by-statement comparison of the engine with the dense evaluator.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;

use crate::ast::{desugar, Init, Program, Statement};
use crate::engine::{eval_stmt, instantiate, EngineError, RunLimits, StmtOutput, Store};
use crate::fibertree::Tensor;
use crate::operators::OperatorRegistry;
use crate::parser::statement_text;

use super::OracleError;

/// Where the engine and the dense evaluator first disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub stmt: String,
    pub detail: String,
}

/// Result of a cross-check that found no disagreement.
#[derive(Clone, Debug, PartialEq)]
pub enum Agreement {
    /// Both sides produced identical tensors for every statement.
    Outputs,
    /// Both sides rejected the same statement with the same kind of error.
    Errors(EngineError),
}

/// Evaluates every statement of a single-pass program with both evaluators
/// on `store`. Each statement sees the engine's results for the earlier ones.
/// Tensors added by desugaring start empty. Programs with a stop condition or nested cascades are rejected.
pub fn cross_check(
    p: &Program,
    mut store: Store,
    reg: &OperatorRegistry,
    cap: u64,
) -> Result<Result<Agreement, Mismatch>, OracleError> {
    let p = desugar(p).map_err(EngineError::from)?;
    if p.body.stop.is_some() {
        return Err(OracleError::NotSinglePass);
    }
    for d in &p.decls {
        if store.get(&d.name).is_none() {
            store.insert(Tensor::new(instantiate(d, &store)?));
        }
    }
    let mut stmts = alloc::vec::Vec::new();
    for i in &p.inits {
        if let Init::Stmt(s) = i {
            stmts.push(s);
        }
    }
    for st in &p.body.body {
        match st {
            Statement::Einsum(s) => stmts.push(s),
            _ => return Err(OracleError::NotSinglePass),
        }
    }
    let mut env = BTreeMap::new();
    env.insert(p.body.var.clone(), 0i64);
    let limits = RunLimits {
        max_points: cap,
        ..RunLimits::default()
    };
    for s in stmts {
        let sparse = eval_stmt(s, &store, &env, reg, &limits);
        let dense = super::dense_eval_stmt(s, &store, &env, reg, cap);
        let out = match (sparse, dense) {
            (Ok(a), Ok(b)) => {
                if let Some(detail) = difference(&a, &b) {
                    return Ok(Err(Mismatch {
                        stmt: statement_text(s),
                        detail,
                    }));
                }
                a
            }
            (Err(a), Err(b)) => {
                if core::mem::discriminant(&a) == core::mem::discriminant(&b) {
                    return Ok(Ok(Agreement::Errors(a)));
                }
                return Ok(Err(Mismatch {
                    stmt: statement_text(s),
                    detail: format!("engine: {a}; dense: {b}"),
                }));
            }
            (Ok(_), Err(b)) => {
                return Ok(Err(Mismatch {
                    stmt: statement_text(s),
                    detail: format!("only the dense evaluator failed: {b}"),
                }))
            }
            (Err(a), Ok(_)) => {
                return Ok(Err(Mismatch {
                    stmt: statement_text(s),
                    detail: format!("only the engine failed: {a}"),
                }))
            }
        };
        let t = store
            .get(&s.output.tensor)
            .cloned()
            .expect("validated output tensor");
        store.insert(match out.generation {
            Some(g) => {
                let mut t = t;
                t.set_slice(g, out.tensor);
                t
            }
            None => out.tensor,
        });
    }
    Ok(Ok(Agreement::Outputs))
}

fn difference(a: &StmtOutput, b: &StmtOutput) -> Option<String> {
    if a.generation != b.generation {
        return Some(format!(
            "generation {:?} vs {:?}",
            a.generation, b.generation
        ));
    }
    tensor_difference(&a.tensor, &b.tensor)
}

/// The first point whose presence or value differs, in engine-vs-dense order.
pub fn tensor_difference(a: &Tensor, b: &Tensor) -> Option<String> {
    if a.decl() != b.decl() {
        return Some(format!("declarations differ: {:?} vs {:?}", a.decl(), b.decl()));
    }
    let (mut x, mut y) = (a.iter().peekable(), b.iter().peekable());
    loop {
        match (x.peek(), y.peek()) {
            (None, None) => return None,
            (Some((p, v)), None) => return Some(format!("{p:?}: {v} vs absent")),
            (None, Some((p, v))) => return Some(format!("{p:?}: absent vs {v}")),
            (Some((p, v)), Some((q, w))) => {
                if p < q {
                    return Some(format!("{p:?}: {v} vs absent"));
                }
                if q < p {
                    return Some(format!("{q:?}: absent vs {w}"));
                }
                if v != w {
                    return Some(format!("{p:?}: {v} vs {w}"));
                }
            }
        }
        x.next();
        y.next();
    }
}
